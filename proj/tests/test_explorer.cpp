#include "doctest.h"

#include <algorithm>
#include <set>

#include "stitch/explorer.hpp"
#include "stitch/parser.hpp"
#include "test_util.hpp"

using namespace stitch;
using stitch_test::load_fixture;
using stitch_test::random_graph;

namespace {

CostModels make_models() {
  CostModels m;
  m.machine = default_machine_model();
  return m;
}

FusionPattern pat(std::vector<int> vs) {
  FusionPattern p;
  std::sort(vs.begin(), vs.end());
  p.vertices = std::move(vs);
  p.producer = p.vertices.front();
  return p;
}

// exhaustive best producer-rooted pattern containing `root`, over the given
// optional vertices (independent oracle for the candidate search)
double brute_force_best(int root, const std::vector<int>& optional, const CompGraph& g,
                        const CostModels& models) {
  double best = delta_evaluate(pat({root}), g, models).f;
  size_t n = optional.size();
  for (size_t mask = 1; mask < (size_t(1) << n); ++mask) {
    std::vector<int> vs{root};
    for (size_t i = 0; i < n; ++i)
      if (mask & (size_t(1) << i)) vs.push_back(optional[i]);
    FusionPattern p = pat(vs);
    if (!pattern_probe_ok(p, g, models)) continue;
    best = std::max(best, delta_evaluate(p, g, models).f);
  }
  return best;
}

}  // namespace

TEST_CASE("delta of a singleton: nothing internalized") {
  auto g = parse_graph("p = parameter : f32[1024]\na = add(p, p)\n");
  auto models = make_models();
  auto d = delta_evaluate(pat({1}), g, models);
  CHECK(d.t_reduced_mem == 0.0);
  CHECK(d.t_reduced_calls == 0.0);
  CHECK(d.f == d.t_reduced_mem + d.t_reduced_calls - d.t_penalty);
  CHECK(d.f <= 0.0);
}

TEST_CASE("delta of two chained light ops internalizes one tensor transfer") {
  auto g = parse_graph("p = parameter : f32[1024]\na = add(p, p)\nb = mul(a, a)\n");
  auto models = make_models();
  auto d = delta_evaluate(pat({1, 2}), g, models);
  CHECK(d.t_reduced_mem ==
        doctest::Approx(mem_transfer_saving(4096, MemTransition::GlobalToRegister,
                                            models.machine.memlat)));
  CHECK(d.t_reduced_calls == doctest::Approx(models.machine.costs.context_switch_cycles));
  CHECK(d.f == d.t_reduced_mem + d.t_reduced_calls - d.t_penalty);
}

TEST_CASE("internalizing one more edge raises the memory saving") {
  auto g = parse_graph(
      "p = parameter : f32[1024]\na = add(p, p)\nb = mul(a, a)\nc = sub(b, b)\n");
  auto models = make_models();
  CHECK(delta_evaluate(pat({1, 2, 3}), g, models).t_reduced_mem >
        delta_evaluate(pat({1, 2}), g, models).t_reduced_mem);
}

TEST_CASE("delta call counter instruments every evaluation") {
  auto g = parse_graph("p = parameter : f32[64]\na = add(p, p)\n");
  auto models = make_models();
  models.delta_evaluate_calls = 0;
  delta_evaluate(pat({1}), g, models);
  delta_evaluate(pat({1}), g, models);
  CHECK(models.delta_evaluate_calls == 2);
}

TEST_CASE("probe rejects malformed and cyclic patterns") {
  auto g = parse_graph("p = parameter : f32[8]\nA = exp(p)\nB = tanh(A)\nC = add(A, B)\n");
  auto models = make_models();
  CHECK_FALSE(pattern_probe_ok(pat({0}), g, models));              // parameter not fusable
  CHECK_FALSE(pattern_probe_ok(FusionPattern{}, g, models));      // empty
  CHECK_FALSE(pattern_probe_ok(pat({1, 3}), g, models));          // contraction cycle
  CHECK(pattern_probe_ok(pat({1, 2, 3}), g, models));
}

TEST_CASE("a vertex with no consumers gets only its singleton candidate") {
  auto g = parse_graph("p = parameter : f32[64]\na = add(p, p)\n");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  REQUIRE(cands.count(1));
  REQUIRE(cands.at(1).patterns.size() == 1);
  CHECK(cands.at(1).patterns[0].vertices == std::vector<int>{1});
}

TEST_CASE("chain of three light ops: top candidate matches the brute-force optimum") {
  auto g = parse_graph(
      "p = parameter : f32[65536]\na = add(p, p)\nb = mul(a, a)\nc = sub(b, b)\n");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  REQUIRE(cands.count(1));
  REQUIRE(!cands.at(1).patterns.empty());
  const auto& top = cands.at(1).patterns[0];
  CHECK(top.vertices == std::vector<int>{1, 2, 3});
  CHECK(top.score == doctest::Approx(brute_force_best(1, {2, 3}, g, models)));
}

TEST_CASE("diamond: candidate search reaches the brute-force best rooted pattern") {
  auto g = parse_graph(
      "p = parameter : f32[65536]\na = add(p, p)\nb = exp(a)\nc = tanh(a)\nd = add(b, c)\n");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  REQUIRE(cands.count(1));
  REQUIRE(!cands.at(1).patterns.empty());
  CHECK(cands.at(1).patterns[0].score ==
        doctest::Approx(brute_force_best(1, {2, 3, 4}, g, models)));
  // scores are sorted descending
  const auto& ps = cands.at(1).patterns;
  for (size_t i = 1; i < ps.size(); ++i) CHECK(ps[i - 1].score >= ps[i].score);
}

TEST_CASE("opaque ops are fusion barriers for connected candidates") {
  auto g = parse_graph(
      "p = parameter : f32[256]\na = add(p, p)\nq = opaque_compute(a) : f32[256]\n"
      "b = mul(q, q)\nc = sub(b, b)\n");
  auto models = make_models();
  int a = g.by_name.at("a"), b = g.by_name.at("b"), c = g.by_name.at("c");
  auto cands = explore_candidates(g, 3, models);
  for (const auto& [v, set] : cands)
    for (const auto& p : set.patterns) {
      bool upstream = p.contains(a);
      bool downstream = p.contains(b) || p.contains(c);
      CHECK_FALSE((upstream && downstream));
      CHECK_FALSE(p.contains(g.by_name.at("q")));
    }
}

TEST_CASE("disconnected chains are packed by remote fusion") {
  auto g = load_fixture("remote.graph");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  auto remote = remote_fusion(g, cands, 3, models);
  REQUIRE(!remote.empty());
  // find components by BFS over undirected edges
  std::vector<int> comp(static_cast<size_t>(g.num_nodes()), -1);
  auto cons = g.consumer_lists();
  int ncomp = 0;
  for (int s = 0; s < g.num_nodes(); ++s) {
    if (comp[static_cast<size_t>(s)] >= 0) continue;
    std::vector<int> st{s};
    comp[static_cast<size_t>(s)] = ncomp;
    while (!st.empty()) {
      int v = st.back();
      st.pop_back();
      for (int o : g.node(v).operands)
        if (comp[static_cast<size_t>(o)] < 0) comp[static_cast<size_t>(o)] = ncomp, st.push_back(o);
      for (int cns : cons[static_cast<size_t>(v)])
        if (comp[static_cast<size_t>(cns)] < 0)
          comp[static_cast<size_t>(cns)] = ncomp, st.push_back(cns);
    }
    ++ncomp;
  }
  REQUIRE(ncomp == 2);
  bool packs_both = false;
  for (const auto& p : remote) {
    std::set<int> comps;
    for (int v : p.vertices) comps.insert(comp[static_cast<size_t>(v)]);
    if (comps.size() == 2) {
      packs_both = true;
      CHECK(p.remote);
      auto d = delta_evaluate(p, g, models);
      CHECK(d.t_reduced_calls > 0.0);
      // no cross-component edges: mem saving is the per-component sum
      double parts = 0.0;
      for (int which = 0; which < 2; ++which) {
        std::vector<int> vs;
        for (int v : p.vertices)
          if (comp[static_cast<size_t>(v)] == which) vs.push_back(v);
        if (vs.size() >= 1) parts += delta_evaluate(pat(vs), g, models).t_reduced_mem;
      }
      CHECK(d.t_reduced_mem == doctest::Approx(parts));
    }
  }
  CHECK(packs_both);
}

TEST_CASE("fully fused single component leaves remote fusion nothing to add") {
  auto g = parse_graph("p = parameter : f32[65536]\na = add(p, p)\nb = mul(a, a)\n");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  auto remote = remote_fusion(g, cands, 3, models);
  // every remote pattern must equal some already-known connected candidate or
  // be absent entirely; nothing may claim the remote (disconnected) flag
  for (const auto& p : remote) CHECK_FALSE(p.remote);
}

TEST_CASE("beam keeps plans disjoint and always offers the empty plan") {
  auto g = load_fixture("layernorm.graph");
  auto models = make_models();
  auto cands = explore_candidates(g, 3, models);
  auto remote = remote_fusion(g, cands, 3, models);
  auto plans = beam_search_plan(g, cands, remote, 3, models);
  bool has_empty = false;
  for (const auto& plan : plans) {
    if (plan.patterns.empty()) has_empty = true;
    std::set<int> seen;
    double acc = 0.0;
    for (const auto& p : plan.patterns) {
      for (int v : p.vertices) CHECK(seen.insert(v).second);
      acc += p.score;
    }
    CHECK(plan.total_score == doctest::Approx(acc));
  }
  CHECK(has_empty);
}

TEST_CASE("all-negative candidates leave the empty plan as the best") {
  auto g = parse_graph("p = parameter : f32[64]\na = add(p, p)\nb = mul(a, a)\n");
  auto models = make_models();
  std::map<int, CandidatePatternSet> cands;
  CandidatePatternSet set;
  set.vertex = 1;
  FusionPattern bad = pat({1, 2});
  bad.score = -250.0;
  set.patterns.push_back(bad);
  cands[1] = set;
  auto plans = beam_search_plan(g, cands, {}, 3, models);
  REQUIRE(!plans.empty());
  for (const auto& plan : plans) {
    CHECK(plan.patterns.empty());
    CHECK(plan.total_score == 0.0);
  }
}

TEST_CASE("beam matches or beats a greedy oracle on random graphs") {
  auto models = make_models();
  for (uint64_t seed = 1; seed <= 12; ++seed) {
    CAPTURE(seed);
    auto g = random_graph(seed, 8);
    auto cands = explore_candidates(g, 3, models);
    auto remote = remote_fusion(g, cands, 3, models);

    // greedy: walk the topological order, always take the best local pattern
    std::set<int> used;
    double greedy = 0.0;
    for (int v : topo_sort(g)) {
      auto it = cands.find(v);
      if (it == cands.end()) continue;
      const FusionPattern* best = nullptr;
      for (const auto& p : it->second.patterns) {
        if (p.score <= 0.0) continue;
        bool clash = false;
        for (int x : p.vertices)
          if (used.count(x)) {
            clash = true;
            break;
          }
        if (!clash && (!best || p.score > best->score)) best = &p;
      }
      if (best) {
        greedy += best->score;
        used.insert(best->vertices.begin(), best->vertices.end());
      }
    }

    double beam_best = 0.0;
    for (const auto& plan : beam_search_plan(g, cands, remote, 3, models))
      beam_best = std::max(beam_best, plan.total_score);
    CHECK(beam_best >= greedy - 1e-9);
  }
}

TEST_CASE("final selection prefers full layer-norm fusion over no fusion") {
  auto g = load_fixture("layernorm.graph");
  auto models = make_models();
  FusionPlan fused = explore_fusion_plan(g, models);
  REQUIRE(fused.patterns.size() == 1);
  int fusable = 0;
  for (const auto& n : g.nodes)
    if (is_fusable(n)) ++fusable;
  CHECK(static_cast<int>(fused.patterns[0].vertices.size()) == fusable);

  FusionPlan empty;
  auto chosen = select_final_plan({fused, empty}, g, models);
  CHECK(chosen.patterns.size() == 1);

  auto single = select_final_plan({fused}, g, models);
  REQUIRE(single.patterns.size() == fused.patterns.size());
  CHECK(single.patterns[0].vertices == fused.patterns[0].vertices);
}
