#include "doctest.h"

#include <set>

#include "stitch/baseline.hpp"
#include "stitch/parser.hpp"
#include "test_util.hpp"

using namespace stitch;
using stitch_test::load_fixture;

TEST_CASE("baseline splits layer-norm into four kernels") {
  auto g = load_fixture("layernorm.graph");
  auto plan = run_baseline(g);
  CHECK(plan.patterns.size() == 4);
  CHECK(kernel_count(g, plan) == 4);
}

TEST_CASE("an all-light chain is one baseline kernel") {
  auto g = load_fixture("light_chain.graph");
  auto plan = run_baseline(g);
  CHECK(plan.patterns.size() == 1);
  CHECK(kernel_count(g, plan) == 1);
}

TEST_CASE("a single reduction is a singleton kernel") {
  auto g = parse_graph("p = parameter : f32[4,8]\nr = reduce_sum(p, axes=1)\n");
  auto plan = run_baseline(g);
  REQUIRE(plan.patterns.size() == 1);
  CHECK(plan.patterns[0].vertices == std::vector<int>{1});
  CHECK(kernel_count(g, plan) == 1);
}

TEST_CASE("reductions and expensive ops only terminate baseline kernels") {
  for (const char* f : {"layernorm.graph", "softmax.graph", "variance.graph",
                        "expensive_chain.graph", "bias_reduce.graph"}) {
    CAPTURE(f);
    auto g = load_fixture(f);
    auto plan = run_baseline(g);
    for (const auto& p : plan.patterns)
      for (int v : p.vertices) {
        OpClass c = classify_op(g.node(v));
        if (c == OpClass::Reduction || c == OpClass::ExpensiveElementwise) {
          // no in-pattern consumer may read this vertex
          for (int u : p.vertices)
            for (int o : g.node(u).operands) CHECK(o != v);
        }
      }
  }
}

TEST_CASE("baseline covers every fusable vertex exactly once") {
  const char* fixtures[] = {"layernorm.graph",       "softmax.graph",
                            "attention_softmax.graph", "variance.graph",
                            "remote.graph",          "light_chain.graph",
                            "expensive_chain.graph", "bias_reduce.graph",
                            "scale_reduce_scale.graph"};
  for (const char* f : fixtures) {
    CAPTURE(f);
    auto g = load_fixture(f);
    auto plan = run_baseline(g);
    for (const auto& d : validate_plan(g, plan))
      CHECK(d.code.rfind("note-", 0) == 0);  // informational notes only
    std::set<int> covered;
    for (const auto& p : plan.patterns)
      for (int v : p.vertices) {
        CHECK(is_fusable(g.node(v)));
        CHECK(covered.insert(v).second);
      }
    for (const auto& n : g.nodes)
      if (is_fusable(n)) CHECK(covered.count(n.id) == 1);
  }
}

TEST_CASE("baseline plans are acyclic under contraction") {
  for (const char* f : {"layernorm.graph", "attention_softmax.graph", "bias_reduce.graph"}) {
    CAPTURE(f);
    auto g = load_fixture(f);
    for (const auto& p : run_baseline(g).patterns) CHECK_FALSE(contraction_creates_cycle(g, p));
  }
}

TEST_CASE("opaque ops count as extra launched kernels") {
  auto g = load_fixture("attention_softmax.graph");
  auto plan = run_baseline(g);
  int opaque = 0;
  for (const auto& n : g.nodes)
    if (classify_op(n) == OpClass::Opaque) ++opaque;
  CHECK(opaque >= 1);
  CHECK(kernel_count(g, plan) == static_cast<int>(plan.patterns.size()) + opaque);
}
