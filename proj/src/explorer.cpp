#include "stitch/explorer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace stitch {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// simplified launch used by the delta evaluator (single fixed block size)
LaunchDims simple_launch(int64_t extent, const MachineModel& m) {
  int block = std::min(256, m.dev.max_threads_per_block);
  int grid = static_cast<int>(
      std::clamp<int64_t>(ceil_div(extent, block), 1, int64_t(8) * m.dev.sm_count));
  return {grid, block};
}

// per-thread cycles of one op under a launch of T threads
double op_cycles(const OpNode& n, const CompGraph& g, int64_t T, const CpiTable& cpi) {
  switch (classify_op(n)) {
    case OpClass::Reduction:
      return double(ceil_div(g.node(n.operands[0]).shape.element_count(), T)) *
             cpi.cpi("reduce_step");
    case OpClass::LightElementwise:
    case OpClass::ExpensiveElementwise:
      return double(ceil_div(n.shape.element_count(), T)) * cpi.cpi(kind_name(n.kind));
    case OpClass::ShapeOp:
      return double(ceil_div(n.shape.element_count(), T)) * cpi.cpi("index_calc");
    case OpClass::Opaque: break;
  }
  return 0.0;
}

int64_t vertex_extent(const OpNode& n, const CompGraph& g) {
  int64_t e = n.shape.element_count();
  for (int o : n.operands) e = std::max(e, g.node(o).shape.element_count());
  return e;
}

}  // namespace

DeltaScore delta_evaluate(const FusionPattern& p, const CompGraph& g, const CostModels& models) {
  ++models.delta_evaluate_calls;
  const MachineModel& m = models.machine;
  DeltaScore d;

  std::set<int> in(p.vertices.begin(), p.vertices.end());
  std::set<std::pair<int, int>> edges;
  for (int v : p.vertices)
    for (int o : g.node(v).operands)
      if (in.count(o) && edges.insert({o, v}).second) {
        MemTransition t = classify_op(g.node(o)) == OpClass::Reduction
                              ? MemTransition::GlobalToShared
                              : MemTransition::GlobalToRegister;
        d.t_reduced_mem += mem_transfer_saving(g.node(o).shape.byte_size(), t, m.memlat);
      }
  d.t_reduced_calls =
      (static_cast<double>(p.vertices.size()) - 1.0) * m.costs.context_switch_cycles;

  // penalty: simplified latency of the fused kernel (fixed 16 registers, max
  // per-op shared footprint, no liveness) minus the ops run standalone
  int64_t extent = 1;
  for (int v : p.vertices) extent = std::max(extent, vertex_extent(g.node(v), g));
  LaunchDims ld = simple_launch(extent, m);
  int64_t T = ld.total_threads();
  double fused_cycles = 0.0;
  int64_t shmem = 0;
  for (int v : p.vertices) {
    const OpNode& n = g.node(v);
    fused_cycles += op_cycles(n, g, T, m.cpi);
    OpClass c = classify_op(n);
    if (c == OpClass::Reduction || c == OpClass::ExpensiveElementwise)
      shmem = std::max(shmem, ceil_div(n.shape.element_count(), ld.grid) * 4);
  }
  auto occ_f = occupancy(ld, m.costs.delta_fixed_registers, shmem, m.dev);
  if (!occ_f) {
    d.t_penalty = 1e15;  // unlaunchable as one kernel
    d.f = d.t_reduced_mem + d.t_reduced_calls - d.t_penalty;
    return d;
  }
  double l_fused =
      wave_count(double(T) / m.dev.warp_size, *occ_f, m.dev) * fused_cycles;
  double l_unfused = 0.0;
  for (int v : p.vertices) {
    const OpNode& n = g.node(v);
    LaunchDims lv = simple_launch(vertex_extent(n, g), m);
    auto occ_v = occupancy(lv, m.costs.delta_fixed_registers, 0, m.dev);
    l_unfused += wave_count(double(lv.total_threads()) / m.dev.warp_size,
                            occ_v.value_or(1.0), m.dev) *
                 op_cycles(n, g, lv.total_threads(), m.cpi);
  }
  d.t_penalty = std::max(0.0, l_fused - l_unfused);
  d.f = d.t_reduced_mem + d.t_reduced_calls - d.t_penalty;
  return d;
}

bool pattern_probe_ok(const FusionPattern& p, const CompGraph& g, const CostModels& models) {
  if (p.vertices.empty() ||
      static_cast<int>(p.vertices.size()) > models.machine.search.max_pattern_size)
    return false;
  for (int v : p.vertices) {
    if (v < 0 || v >= g.num_nodes() || !is_fusable(g.node(v))) return false;
    if (g.node(v).kind == OpKind::Gather &&
        std::binary_search(p.vertices.begin(), p.vertices.end(), g.node(v).operands[0]))
      return false;
  }
  if (contraction_creates_cycle(g, p)) return false;
  // a reduction feeding in-pattern consumers must be schedulable end-to-end;
  // everything else falls back to thread-scheme re-computation
  std::set<int> in(p.vertices.begin(), p.vertices.end());
  bool risky = false;
  for (int v : p.vertices) {
    if (classify_op(g.node(v)) != OpClass::Reduction) continue;
    for (const auto& n : g.nodes)
      if (in.count(n.id))
        for (int o : n.operands)
          if (o == v) risky = true;
  }
  if (!risky) return true;
  std::string key = p.key();
  auto it = models.probe_memo.find(key);
  if (it != models.probe_memo.end()) return it->second;
  PlanConstraints c;
  c.first_feasible = true;
  bool ok = plan_kernel(p, g, models.machine, &c).has_value();
  models.probe_memo[key] = ok;
  return ok;
}

const KernelPlan* CostModels::plan_for(const FusionPattern& p, const CompGraph& g) const {
  std::string key = p.key();
  auto it = plan_memo.find(key);
  if (it == plan_memo.end()) it = plan_memo.emplace(key, plan_kernel(p, g, machine)).first;
  return it->second ? &*it->second : nullptr;
}

namespace {

FusionPattern make_pattern(std::vector<int> vertices, int producer) {
  FusionPattern p;
  std::sort(vertices.begin(), vertices.end());
  vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
  p.vertices = std::move(vertices);
  p.producer = producer;
  return p;
}

void keep_top_k(std::vector<FusionPattern>& pats, int k) {
  std::sort(pats.begin(), pats.end(), [](const FusionPattern& a, const FusionPattern& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.vertices.size() != b.vertices.size()) return a.vertices.size() < b.vertices.size();
    return a.vertices < b.vertices;
  });
  pats.erase(std::unique(pats.begin(), pats.end(),
                         [](const FusionPattern& a, const FusionPattern& b) {
                           return a.vertices == b.vertices;
                         }),
             pats.end());
  if (static_cast<int>(pats.size()) > k) pats.resize(static_cast<size_t>(k));
}

// Divide-and-conquer union builder shared by pattern_reduction and
// remote_fusion. `seed` (the producer vertex) is folded into every union;
// remote packing passes no seed and requires at least two contributions.
struct Reducer {
  const CompGraph& g;
  const CostModels& models;
  int k;
  std::optional<int> seed;
  int producer;

  std::vector<FusionPattern> score_and_trim(std::vector<FusionPattern> pats) const {
    std::vector<FusionPattern> ok;
    for (auto& p : pats) {
      if (p.vertices.empty()) continue;
      if (!pattern_probe_ok(p, g, models)) continue;
      p.score = delta_evaluate(p, g, models).f;
      ok.push_back(std::move(p));
    }
    keep_top_k(ok, k);
    return ok;
  }

  std::vector<FusionPattern> leaf(const std::vector<const CandidatePatternSet*>& cs) const {
    std::vector<FusionPattern> out;
    std::vector<int> base;
    if (seed) base.push_back(*seed);
    if (cs.empty()) {
      if (seed) out.push_back(make_pattern(base, producer));
      return score_and_trim(std::move(out));
    }
    // per-consumer choice: absent or one of its top-k patterns
    size_t n0 = cs[0]->patterns.size();
    size_t n1 = cs.size() > 1 ? cs[1]->patterns.size() : 0;
    for (size_t i = 0; i <= n0; ++i) {
      for (size_t j = 0; j <= n1; ++j) {
        std::vector<int> v = base;
        int chosen = 0;
        if (i > 0) {
          const auto& pv = cs[0]->patterns[i - 1].vertices;
          v.insert(v.end(), pv.begin(), pv.end());
          ++chosen;
        }
        if (j > 0) {
          const auto& pv = cs[1]->patterns[j - 1].vertices;
          v.insert(v.end(), pv.begin(), pv.end());
          ++chosen;
        }
        // packing needs two sides overall, but a lone odd leaf must still
        // surface its cones so higher merge levels can pair them
        if (!seed && chosen == 0) continue;
        if (!seed && cs.size() >= 2 && chosen < 2) continue;
        if (v.empty()) continue;
        out.push_back(make_pattern(std::move(v), producer));
        if (cs.size() < 2) break;
      }
    }
    return score_and_trim(std::move(out));
  }

  std::vector<FusionPattern> combine(const std::vector<const CandidatePatternSet*>& cs,
                                     size_t lo, size_t hi) const {
    if (hi - lo <= 2)
      return leaf(std::vector<const CandidatePatternSet*>(cs.begin() + lo, cs.begin() + hi));
    size_t mid = lo + (hi - lo) / 2;
    std::vector<FusionPattern> a = combine(cs, lo, mid);
    std::vector<FusionPattern> b = combine(cs, mid, hi);
    std::vector<FusionPattern> out;
    for (const auto& pa : a)
      for (const auto& pb : b) {
        std::vector<int> v = pa.vertices;
        v.insert(v.end(), pb.vertices.begin(), pb.vertices.end());
        out.push_back(make_pattern(std::move(v), producer));
      }
    // sides may also stand alone (the other half absent)
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return score_and_trim(std::move(out));
  }

  std::vector<FusionPattern> run(const std::vector<const CandidatePatternSet*>& cs) const {
    return combine(cs, 0, cs.size());
  }
};

}  // namespace

CandidatePatternSet pattern_reduction(int vertex,
                                      const std::vector<const CandidatePatternSet*>& consumers,
                                      int k, const CompGraph& g, const CostModels& models) {
  Reducer r{g, models, k, vertex, vertex};
  CandidatePatternSet out;
  out.vertex = vertex;
  out.patterns = r.run(consumers);
  return out;
}

std::map<int, CandidatePatternSet> explore_candidates(const CompGraph& g, int k,
                                                      const CostModels& models) {
  auto order = topo_sort(g);
  auto consumers = g.consumer_lists();
  std::map<int, CandidatePatternSet> sets;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int v = *it;
    if (!is_fusable(g.node(v))) {
      sets[v] = {v, {}};
      continue;
    }
    std::vector<const CandidatePatternSet*> cs;
    for (int c : consumers[static_cast<size_t>(v)]) {
      const CandidatePatternSet& s = sets.at(c);
      if (!s.patterns.empty()) cs.push_back(&s);
    }
    sets[v] = pattern_reduction(v, cs, k, g, models);
  }
  return sets;
}

std::vector<FusionPattern> remote_fusion(const CompGraph& g,
                                         const std::map<int, CandidatePatternSet>& candidates,
                                         int k, const CostModels& models) {
  // entry vertices: fusable ops with no fusable producer to hang off
  std::vector<const CandidatePatternSet*> entries;
  for (const auto& n : g.nodes) {
    if (!is_fusable(n)) continue;
    bool has_fusable_producer = false;
    for (int o : n.operands)
      if (is_fusable(g.node(o))) has_fusable_producer = true;
    if (has_fusable_producer) continue;
    auto it = candidates.find(n.id);
    if (it != candidates.end() && !it->second.patterns.empty()) entries.push_back(&it->second);
  }
  if (entries.size() < 2) return {};
  Reducer r{g, models, k, std::nullopt, entries.front()->vertex};
  std::vector<FusionPattern> out = r.run(entries);
  // drop pure single-entry cones; those already live in the candidate sets
  std::set<std::vector<int>> single;
  for (const auto* e : entries)
    for (const auto& p : e->patterns) single.insert(p.vertices);
  out.erase(std::remove_if(out.begin(), out.end(),
                           [&](const FusionPattern& p) { return single.count(p.vertices); }),
            out.end());
  // Single-entry candidate sets only ever grow downstream cones, so every
  // multi-entry union originates here. Unions whose pieces stay disconnected
  // are flagged remote (kernel packing); connected ones are ordinary fusions.
  auto consumers = g.consumer_lists();
  for (auto& p : out) {
    std::set<int> in(p.vertices.begin(), p.vertices.end());
    std::set<int> seen;
    std::vector<int> stack = {p.vertices.front()};
    seen.insert(stack.back());
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      auto visit = [&](int u) {
        if (in.count(u) && seen.insert(u).second) stack.push_back(u);
      };
      for (int o : g.node(v).operands) visit(o);
      for (int c : consumers[static_cast<size_t>(v)]) visit(c);
    }
    p.remote = seen.size() != in.size();
    p.producer = p.vertices.front();
  }
  return out;
}

namespace {

struct BeamSet {
  std::vector<FusionPattern> patterns;
  double acc = 0.0;
  std::set<int> used;
  std::string key;

  bool disjoint(const FusionPattern& p) const {
    for (int v : p.vertices)
      if (used.count(v)) return false;
    return true;
  }

  BeamSet append(const FusionPattern& p) const {
    BeamSet s = *this;
    s.patterns.push_back(p);
    s.acc += p.score;
    s.used.insert(p.vertices.begin(), p.vertices.end());
    s.key += p.key() + "|";
    return s;
  }
};

}  // namespace

std::vector<FusionPlan> beam_search_plan(const CompGraph& g,
                                         const std::map<int, CandidatePatternSet>& candidates,
                                         const std::vector<FusionPattern>& remote, int width,
                                         const CostModels& models) {
  auto order = topo_sort(g);
  if (models.machine.search.reverse_beam_order) std::reverse(order.begin(), order.end());

  std::map<int, std::vector<const FusionPattern*>> by_vertex;
  for (const auto& [v, set] : candidates)
    for (const auto& p : set.patterns) by_vertex[v].push_back(&p);
  for (const auto& p : remote) by_vertex[p.producer].push_back(&p);

  std::vector<BeamSet> sets = {BeamSet{}};
  for (int v : order) {
    auto it = by_vertex.find(v);
    if (it == by_vertex.end()) continue;
    std::vector<BeamSet> temporal = sets;
    for (const BeamSet& s : sets)
      for (const FusionPattern* p : it->second) {
        if (p->score <= 0.0) continue;  // can never beat leaving it unfused
        if (s.disjoint(*p)) temporal.push_back(s.append(*p));
      }
    std::sort(temporal.begin(), temporal.end(), [](const BeamSet& a, const BeamSet& b) {
      if (a.acc != b.acc) return a.acc > b.acc;
      if (a.patterns.size() != b.patterns.size()) return a.patterns.size() < b.patterns.size();
      return a.key < b.key;
    });
    temporal.erase(std::unique(temporal.begin(), temporal.end(),
                               [](const BeamSet& a, const BeamSet& b) { return a.key == b.key; }),
                   temporal.end());
    if (static_cast<int>(temporal.size()) > width)
      temporal.resize(static_cast<size_t>(width));
    sets = std::move(temporal);
  }

  std::vector<FusionPlan> plans;
  bool have_empty = false;
  for (const BeamSet& s : sets) {
    FusionPlan plan;
    plan.patterns = s.patterns;
    std::sort(plan.patterns.begin(), plan.patterns.end(),
              [](const FusionPattern& a, const FusionPattern& b) {
                return a.vertices < b.vertices;
              });
    plan.total_score = s.acc;
    if (plan.patterns.empty()) have_empty = true;
    plans.push_back(std::move(plan));
  }
  if (!have_empty) plans.push_back(FusionPlan{});
  return plans;
}

FusionPlan select_final_plan(const std::vector<FusionPlan>& plans, const CompGraph& g,
                             const CostModels& models, std::vector<std::string>* warnings) {
  const FusionPlan* best = nullptr;
  double best_total = 0.0;
  int best_kernels = 0;

  for (const FusionPlan& plan : plans) {
    double cycles = 0.0;
    int kernels = 0;
    std::set<int> covered;
    bool ok = true;
    for (const auto& p : plan.patterns) {
      const KernelPlan* kp = models.plan_for(p, g);
      if (!kp) {
        if (warnings)
          warnings->push_back("dropping plan: pattern " + p.key() + " is unschedulable");
        ok = false;
        break;
      }
      cycles += kp->estimated_cycles;
      ++kernels;
      covered.insert(p.vertices.begin(), p.vertices.end());
    }
    if (!ok) continue;
    for (const auto& n : g.nodes) {
      if (covered.count(n.id)) continue;
      if (is_fusable(n)) {
        FusionPattern single;
        single.vertices = {n.id};
        single.producer = n.id;
        const KernelPlan* kp = models.plan_for(single, g);
        if (kp) cycles += kp->estimated_cycles;
        ++kernels;
      } else if (classify_op(n) == OpClass::Opaque) {
        cycles += models.machine.costs.opaque_kernel_cycles;
        ++kernels;
      }
    }
    double total = cycles + kernels * models.machine.costs.context_switch_cycles;
    bool take = !best;
    if (best) {
      if (total != best_total)
        take = total < best_total;
      else if (kernels != best_kernels)
        take = kernels < best_kernels;
      else
        take = plan.patterns.size() < best->patterns.size();
    }
    if (take) {
      best = &plan;
      best_total = total;
      best_kernels = kernels;
    }
  }
  if (!best) return FusionPlan{};
  FusionPlan out = *best;
  out.total_score = 0.0;
  for (const auto& p : out.patterns) out.total_score += p.score;
  return out;
}

FusionPlan explore_fusion_plan(const CompGraph& g, const CostModels& models,
                               std::vector<std::string>* warnings) {
  int k = models.machine.search.k;
  auto candidates = explore_candidates(g, k, models);
  auto remote = remote_fusion(g, candidates, k, models);
  auto plans = beam_search_plan(g, candidates, remote, models.machine.search.beam_width, models);
  return select_final_plan(plans, g, models, warnings);
}

}  // namespace stitch
