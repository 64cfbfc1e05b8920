#include "doctest.h"

#include "stitch/parser.hpp"
#include "test_util.hpp"

using namespace stitch;
using stitch_test::load_fixture;

namespace {
const char* kFixtures[] = {
    "layernorm.graph",       "softmax.graph",     "attention_softmax.graph",
    "variance.graph",        "remote.graph",      "light_chain.graph",
    "expensive_chain.graph", "bias_reduce.graph", "scale_reduce_scale.graph",
};
}

TEST_CASE("serialize/parse round trip is a fixpoint on every fixture") {
  for (const char* f : kFixtures) {
    CAPTURE(f);
    auto g = load_fixture(f);
    std::string once = serialize_graph(g);
    auto g2 = parse_graph(once);
    CHECK(serialize_graph(g2) == once);
    CHECK(g2.num_nodes() == g.num_nodes());
    CHECK(g2.outputs == g.outputs);
    for (int i = 0; i < g.num_nodes(); ++i) {
      CHECK(g2.node(i).kind == g.node(i).kind);
      CHECK(g2.node(i).operands == g.node(i).operands);
      CHECK(g2.node(i).shape == g.node(i).shape);
    }
  }
}

TEST_CASE("comments, semicolons and blank lines are cosmetic") {
  auto a = parse_graph("p = parameter : f32[4]\ny = exp(p)\noutput y\n");
  auto b = parse_graph("# header\np = parameter : f32[4]; y = exp(p)  # inline\n\noutput y");
  CHECK(serialize_graph(a) == serialize_graph(b));
}

TEST_CASE("empty file is rejected") {
  CHECK_THROWS_AS(parse_graph(""), ParseError);
  CHECK_THROWS_AS(parse_graph("# only a comment\n"), ParseError);
}

TEST_CASE("duplicate definitions are rejected") {
  try {
    parse_graph("p = parameter : f32[4]\np = parameter : f32[4]\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.code == "duplicate-id");
    CHECK(e.line == 2);
  }
}

TEST_CASE("unknown op kinds are rejected") {
  try {
    parse_graph("p = warble() : f32[4]\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.code == "unknown-op");
  }
}

TEST_CASE("declared shape must agree with the shape rule") {
  CHECK_THROWS_AS(parse_graph("p = parameter : f32[4,8]\nr = reduce_sum(p, axes=1) : f32[5]\n"),
                  ParseError);
  // agreeing declaration is fine
  auto g = parse_graph("p = parameter : f32[4,8]\nr = reduce_sum(p, axes=1) : f32[4]\n");
  CHECK(g.node(1).shape == TensorShape{{4}, DType::F32});
}

TEST_CASE("sinks become outputs when none are declared") {
  auto g = parse_graph("p = parameter : f32[4]\na = exp(p)\nb = tanh(p)\n");
  CHECK(g.outputs == std::vector<int>{1, 2});
}

TEST_CASE("error lines are 1-based and point at the offending statement") {
  try {
    parse_graph("p = parameter : f32[4]\n# comment\nq = add(p, nosuch)\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.code == "unresolved-operand");
    CHECK(e.line == 3);
  }
}
