// Acceptance gate: every release-blocking criterion in one binary.
// Prints one pass/fail line per criterion; exits nonzero on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stitch/baseline.hpp"
#include "stitch/explorer.hpp"
#include "stitch/parser.hpp"
#include "stitch/pipeline.hpp"
#include "stitch/planner.hpp"
#include "stitch/sim.hpp"
#include "test_util.hpp"

using namespace stitch;
using stitch_test::SplitMix;
namespace fs = std::filesystem;

namespace {

const char* kFixtures[] = {
    "layernorm.graph",       "softmax.graph",     "attention_softmax.graph",
    "variance.graph",        "remote.graph",      "light_chain.graph",
    "expensive_chain.graph", "bias_reduce.graph", "scale_reduce_scale.graph",
};

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int n, const char* name, bool pass, const std::string& detail, double secs,
            double budget) {
  bool in_budget = secs < budget;
  if (!pass || !in_budget) ++failures;
  std::printf("criterion %d (%s): %s  [%s; %.2fs, budget %.0fs]\n", n, name,
              pass && in_budget ? "PASS" : "FAIL", detail.c_str(), secs, budget);
  std::fflush(stdout);
}

CostModels make_models() {
  CostModels m;
  m.machine = default_machine_model();
  return m;
}

double plan_delta_sum(const FusionPlan& plan, const CompGraph& g, const CostModels& models) {
  double sum = 0.0;
  for (const auto& p : plan.patterns) sum += delta_evaluate(p, g, models).f;
  return sum;
}

// ---- criterion 1: layer-norm structural claim ----
void criterion_1() {
  Timer t;
  auto g = stitch_test::load_fixture("layernorm.graph");
  auto baseline = run_baseline(g);
  auto models = make_models();
  auto plan = explore_fusion_plan(g, models);

  int fusable = 0;
  for (const auto& n : g.nodes)
    if (is_fusable(n)) ++fusable;

  bool pass = kernel_count(g, baseline) == 4 && plan.patterns.size() == 1 &&
              static_cast<int>(plan.patterns[0].vertices.size()) == fusable;
  std::string detail = "baseline " + std::to_string(kernel_count(g, baseline)) +
                       " kernels, stitched patterns " + std::to_string(plan.patterns.size());
  if (pass) {
    const KernelPlan* kp = models.plan_for(plan.patterns[0], g);
    if (!kp) {
      pass = false;
      detail += ", unplannable";
    } else {
      // zero global-memory intermediates: global stores only hit graph outputs
      std::set<std::string> outs;
      for (int o : g.outputs) outs.insert(g.node(o).name);
      for (const auto& s : kp->program.stmts)
        if (s.kind == Stmt::GStore && !outs.count(s.tensor)) pass = false;
      detail += pass ? ", no global intermediates" : ", global intermediate store found";
    }
  }
  report(1, "layer-norm structure", pass, detail, t.seconds(), 1.0);
}

// ---- criterion 2: kernel-count reduction across the fixture suite ----
void criterion_2() {
  Timer t;
  int sum_stitched = 0, sum_baseline = 0;
  for (const char* f : kFixtures) {
    auto g = stitch_test::load_fixture(f);
    auto models = make_models();
    sum_stitched += kernel_count(g, explore_fusion_plan(g, models));
    sum_baseline += kernel_count(g, run_baseline(g));
  }
  bool pass = 2 * sum_stitched <= sum_baseline;
  report(2, "kernel-count reduction",
         pass,
         "stitched " + std::to_string(sum_stitched) + " vs baseline " +
             std::to_string(sum_baseline) + " over " +
             std::to_string(std::size(kFixtures)) + " fixtures",
         t.seconds(), 10.0);
}

// ---- criterion 3: search quality vs brute-force partition optimum ----
double brute_force_optimum(const CompGraph& g, const CostModels& models) {
  std::vector<int> fusable;
  for (const auto& n : g.nodes)
    if (is_fusable(n)) fusable.push_back(n.id);
  size_t n = fusable.size();
  size_t full = size_t(1) << n;

  std::vector<double> score(full, 0.0);
  for (size_t mask = 1; mask < full; ++mask) {
    FusionPattern p;
    for (size_t i = 0; i < n; ++i)
      if (mask & (size_t(1) << i)) p.vertices.push_back(fusable[i]);
    p.producer = p.vertices.front();
    if (!pattern_probe_ok(p, g, models)) continue;
    double f = delta_evaluate(p, g, models).f;
    if (f > 0.0) score[mask] = f;
  }
  std::vector<double> best(full, 0.0);
  for (size_t mask = 1; mask < full; ++mask) {
    size_t low = mask & (~mask + 1);  // isolate the lowest vertex
    best[mask] = best[mask ^ low];    // option: leave it unfused
    for (size_t s = mask; s; s = (s - 1) & mask) {
      if (!(s & low) || score[s] <= 0.0) continue;
      best[mask] = std::max(best[mask], score[s] + best[mask ^ s]);
    }
  }
  return best[full - 1];
}

void criterion_3() {
  Timer t;
  int near_optimal = 0, nonneg = 0;
  const int runs = 100;
  for (int seed = 1; seed <= runs; ++seed) {
    auto g = stitch_test::random_graph(static_cast<uint64_t>(seed), 10);
    auto models = make_models();
    auto plan = explore_fusion_plan(g, models);
    double got = plan_delta_sum(plan, g, models);
    double opt = brute_force_optimum(g, models);
    if (got >= 0.9 * opt - 1e-9) ++near_optimal;
    if (got >= -1e-9) ++nonneg;  // never worse than the empty plan
  }
  bool pass = near_optimal >= 90 && nonneg == runs;
  report(3, "search quality", pass,
         std::to_string(near_optimal) + "/100 within 0.9x of optimum, " +
             std::to_string(nonneg) + "/100 >= empty plan",
         t.seconds(), 300.0);
}

// ---- criterion 4: semantic equivalence on every fixture ----
void criterion_4() {
  Timer t;
  int checked = 0, passed = 0;
  std::string worst;
  for (const char* f : kFixtures) {
    auto g = stitch_test::load_fixture(f);
    auto models = make_models();
    auto plan = explore_fusion_plan(g, models);
    std::map<std::string, KernelPlan> kernels;
    bool plannable = true;
    for (const auto& p : plan.patterns) {
      const KernelPlan* kp = models.plan_for(p, g);
      if (!kp) {
        plannable = false;
        break;
      }
      kernels[p.key()] = *kp;
    }
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      ++checked;
      if (!plannable) {
        worst = std::string(f) + ": unplannable pattern";
        continue;
      }
      auto inputs = random_inputs(g, seed);
      auto ref = eval_reference(g, inputs);
      auto got = eval_plan(g, plan, kernels, inputs);
      auto rep = compare(got, ref, 1e-4, 1e-5);
      if (rep.pass)
        ++passed;
      else
        worst = std::string(f) + " seed " + std::to_string(seed) + ": " + rep.message;
    }
  }
  bool pass = passed == checked;
  report(4, "semantic equivalence", pass,
         std::to_string(passed) + "/" + std::to_string(checked) + " fixture-seed runs" +
             (pass ? "" : "; first failure: " + worst),
         t.seconds(), 120.0);
}

// ---- criterion 5: cost-model consistency properties ----
void criterion_5() {
  Timer t;
  DeviceSpec dev;
  auto model = default_machine_model();
  SplitMix rng(0xC0FFEE);
  int occ_ok = 0, wave_ok = 0, mem_ok = 0, delta_ok = 0;
  const int N = 1000;

  for (int i = 0; i < N; ++i) {  // occupancy monotone in register pressure and shmem
    LaunchDims ld{static_cast<int>(rng.range(1, 64)), static_cast<int>(rng.range(2, 32)) * 32};
    int r1 = static_cast<int>(rng.range(1, 128));
    int r2 = r1 + static_cast<int>(rng.range(1, 128));
    int64_t s1 = rng.range(0, dev.shared_mem_per_block_limit / 2);
    int64_t s2 = s1 + rng.range(0, dev.shared_mem_per_block_limit - s1);
    auto a = occupancy(ld, r1, s1, dev), b = occupancy(ld, r2, s1, dev);
    auto c = occupancy(ld, r1, s2, dev);
    bool ok = a && b && c && *b <= *a + 1e-12 && *c <= *a + 1e-12 && *a <= 1.0 &&
              *a >= 1.0 / dev.max_warps_per_sm;
    occ_ok += ok;
  }
  for (int i = 0; i < N; ++i) {  // wave-count identity
    double warps = static_cast<double>(rng.range(0, 1 << 20));
    double occ = (static_cast<double>(rng.range(1, 64))) / 64.0;
    double waves = wave_count(warps, occ, dev);
    double back = waves * occ * dev.sm_count * dev.max_warps_per_sm;
    wave_ok += std::abs(back - warps) <= 1e-6 * std::max(1.0, warps);
  }
  for (int i = 0; i < N; ++i) {  // latency curves monotone
    auto tr = static_cast<MemTransition>(rng.range(0, 2));
    int64_t b1 = rng.range(0, int64_t(8) << 20);
    int64_t b2 = b1 + rng.range(0, int64_t(8) << 20);
    mem_ok += mem_transfer_saving(b1, tr, model.memlat) <=
              mem_transfer_saving(b2, tr, model.memlat) + 1e-9;
  }
  for (int i = 0; i < N; ++i) {  // DeltaScore identity f = mem + calls - penalty
    auto g = stitch_test::random_graph(rng.next(), 10);
    std::vector<int> fusable;
    for (const auto& n : g.nodes)
      if (is_fusable(n)) fusable.push_back(n.id);
    FusionPattern p;
    for (int v : fusable)
      if (rng.range(0, 1)) p.vertices.push_back(v);
    if (p.vertices.empty()) p.vertices.push_back(fusable.front());
    p.producer = p.vertices.front();
    auto models = make_models();
    auto d = delta_evaluate(p, g, models);
    delta_ok += d.f == d.t_reduced_mem + d.t_reduced_calls - d.t_penalty;
  }
  bool pass = occ_ok == N && wave_ok == N && mem_ok == N && delta_ok == N;
  report(5, "cost-model consistency", pass,
         "occupancy " + std::to_string(occ_ok) + ", waves " + std::to_string(wave_ok) +
             ", memlat " + std::to_string(mem_ok) + ", delta " + std::to_string(delta_ok) +
             " of " + std::to_string(N) + " each",
         t.seconds(), 60.0);
}

// ---- criterion 6: allocator vs interference-graph oracle ----
void criterion_6() {
  Timer t;
  int matches = 0, bounded = 0;
  const int runs = 100;
  SplitMix rng(0xA110C);
  for (int i = 0; i < runs; ++i) {
    auto g = stitch_test::random_graph(rng.next(), 10);
    std::vector<int> fusable;
    for (const auto& n : g.nodes)
      if (is_fusable(n)) fusable.push_back(n.id);
    FusionPattern p;
    for (int v : fusable)
      if (rng.range(0, 2)) p.vertices.push_back(v);
    if (p.vertices.empty()) p.vertices = fusable;
    p.producer = p.vertices.front();

    std::map<int, int64_t> requests;
    for (int v : p.vertices)
      if (rng.range(0, 1)) requests[v] = rng.range(1, 16) * 16;
    if (requests.empty()) requests[p.vertices.front()] = 64;

    auto alloc = allocate_shared_memory(p, requests, g);

    // oracle: peak of simultaneously live request bytes over emission slots
    auto order = topo_sort(g);
    std::vector<int> pos(static_cast<size_t>(g.num_nodes()));
    for (size_t k = 0; k < order.size(); ++k) pos[static_cast<size_t>(order[k])] = static_cast<int>(k);
    std::set<int> in_pat(p.vertices.begin(), p.vertices.end());
    auto cons = g.consumer_lists();
    int64_t peak = 0, total_req = 0;
    for (const auto& [v, sz] : requests) total_req += sz;
    for (const auto& [v, sz] : requests) {
      (void)sz;
      int at = pos[static_cast<size_t>(v)];
      int64_t live = 0;
      for (const auto& [u, usz] : requests) {
        int last = pos[static_cast<size_t>(u)];
        for (int c : cons[static_cast<size_t>(u)])
          if (in_pat.count(c)) last = std::max(last, pos[static_cast<size_t>(c)]);
        if (pos[static_cast<size_t>(u)] <= at && at <= last) live += usz;
      }
      peak = std::max(peak, live);
    }
    if (alloc.total == peak) ++matches;
    if (alloc.total <= total_req && alloc.total >= peak) ++bounded;
  }
  bool pass = matches >= 90 && bounded == runs;
  report(6, "shared-memory allocator", pass,
         std::to_string(matches) + "/100 match the oracle optimum, " +
             std::to_string(bounded) + "/100 within [oracle, sum-of-requests]",
         t.seconds(), 60.0);
}

// ---- criterion 7: linear search complexity on chains ----
void criterion_7() {
  Timer t;
  std::vector<double> xs, ys;
  for (int len : {10, 100, 1000, 10000}) {
    auto g = stitch_test::chain_graph(len, 1024);
    auto models = make_models();
    models.delta_evaluate_calls = 0;
    auto cands = explore_candidates(g, 3, models);
    remote_fusion(g, cands, 3, models);
    xs.push_back(static_cast<double>(len));
    ys.push_back(static_cast<double>(models.delta_evaluate_calls));
  }
  // least-squares linear fit and its R^2
  double n = static_cast<double>(xs.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double a = (sy - b * sx) / n;
  double ss_res = 0, ss_tot = 0, mean = sy / n;
  for (size_t i = 0; i < xs.size(); ++i) {
    double e = ys[i] - (a + b * xs[i]);
    ss_res += e * e;
    ss_tot += (ys[i] - mean) * (ys[i] - mean);
  }
  double r2 = 1.0 - ss_res / ss_tot;
  char buf[160];
  std::snprintf(buf, sizeof buf, "calls %.0f/%.0f/%.0f/%.0f, linear fit R^2=%.5f", ys[0], ys[1],
                ys[2], ys[3], r2);
  report(7, "linear search complexity", r2 >= 0.99, buf, t.seconds(), 120.0);
}

// ---- criterion 8: byte-identical plan dumps across runs ----
void criterion_8() {
  Timer t;
  fs::path a = fs::temp_directory_path() / "stitch_accept_det_a";
  fs::path b = fs::temp_directory_path() / "stitch_accept_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  bool pass = true;
  std::string detail = "plan dumps identical on all fixtures";
  for (const char* f : kFixtures) {
    RunConfig c1, c2;
    c1.graph_path = c2.graph_path = std::string(FIXTURE_DIR) + "/" + f;
    c1.output_dir = a.string();
    c2.output_dir = b.string();
    c1.run_baseline = c2.run_baseline = true;
    c1.seed = c2.seed = 7;
    if (run_pipeline(c1) != 0 || run_pipeline(c2) != 0) {
      pass = false;
      detail = std::string(f) + ": pipeline failed";
      break;
    }
    if (stitch_test::slurp((a / "plan.json").string()) !=
        stitch_test::slurp((b / "plan.json").string())) {
      pass = false;
      detail = std::string(f) + ": plan dumps differ";
      break;
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
  report(8, "determinism", pass, detail, t.seconds(), 60.0);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (failures) {
    std::printf("acceptance: %d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("acceptance: all 8 criteria passed\n");
  return 0;
}
