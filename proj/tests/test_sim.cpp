#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "stitch/parser.hpp"
#include "stitch/planner.hpp"
#include "stitch/sim.hpp"
#include "test_util.hpp"

using namespace stitch;
using stitch_test::load_fixture;

namespace {

FusionPattern all_fusable(const CompGraph& g) {
  FusionPattern p;
  for (const auto& n : g.nodes)
    if (is_fusable(n)) p.vertices.push_back(n.id);
  p.producer = p.vertices.empty() ? -1 : p.vertices.front();
  return p;
}

FusionPlan single_pattern_plan(const FusionPattern& p) {
  FusionPlan plan;
  plan.patterns.push_back(p);
  return plan;
}

}  // namespace

TEST_CASE("reduce_sum of ones over axis 1") {
  OpNode red;
  red.id = 1;
  red.kind = OpKind::ReduceSum;
  red.operands = {0};
  red.attrs.axes = {1};
  red.shape = {{4}, DType::F32};
  TensorValue ones;
  ones.shape = {{4, 8}, DType::F32};
  ones.data.assign(32, 1.0);
  auto out = eval_node(red, {&ones});
  REQUIRE(out.data.size() == 4);
  for (double v : out.data) CHECK(v == 8.0);
}

TEST_CASE("full-range slice is a bitwise identity") {
  auto g = parse_graph("p = parameter : f32[16]\ny = slice(p, starts=0, limits=16)\n");
  auto inputs = random_inputs(g, 7);
  auto out = eval_reference(g, inputs);
  REQUIRE(out.count("y"));
  CHECK(out.at("y").data == inputs.at("p").data);
}

TEST_CASE("layer-norm reference output has zero-mean unit-variance rows") {
  auto g = load_fixture("layernorm.graph");
  // neutralize scale/shift so the normalized values are directly visible
  auto inputs = random_inputs(g, 11);
  inputs.at("gamma").data.assign(inputs.at("gamma").data.size(), 1.0);
  inputs.at("beta").data.assign(inputs.at("beta").data.size(), 0.0);
  auto out = eval_reference(g, inputs);
  const TensorValue& y = out.at("y");
  REQUIRE(y.shape.rank() == 2);
  int64_t rows = y.shape.dims[0], cols = y.shape.dims[1];
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0, sq = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += y.data[static_cast<size_t>(r * cols + c)];
    mean /= static_cast<double>(cols);
    for (int64_t c = 0; c < cols; ++c) {
      double d = y.data[static_cast<size_t>(r * cols + c)] - mean;
      sq += d * d;
    }
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(sq / static_cast<double>(cols) == doctest::Approx(1.0).epsilon(1e-2));
  }
}

TEST_CASE("fused light chain matches the reference bitwise") {
  auto g = load_fixture("light_chain.graph");
  auto pat = all_fusable(g);
  auto kplan = plan_kernel(pat, g, default_machine_model());
  REQUIRE(kplan.has_value());
  auto inputs = random_inputs(g, 3);
  auto ref = eval_reference(g, inputs);
  auto got = eval_plan(g, single_pattern_plan(pat), {{pat.key(), *kplan}}, inputs);
  for (int o : g.outputs) {
    const std::string& name = g.node(o).name;
    CHECK(got.at(name).data == ref.at(name).data);
  }
}

TEST_CASE("warp-composition row reduction matches the reference") {
  auto g = parse_graph("x = parameter : f32[4,32]\nr = reduce_sum(x, axes=1)\n");
  auto pat = all_fusable(g);
  PlanConstraints c;
  c.force_scheme = CompositionScheme::WarpComposition;
  auto kplan = plan_kernel(pat, g, default_machine_model(), &c);
  REQUIRE(kplan.has_value());
  auto inputs = random_inputs(g, 5);
  auto ref = eval_reference(g, inputs);
  auto got = eval_plan(g, single_pattern_plan(pat), {{pat.key(), *kplan}}, inputs);
  auto rep = compare(got, ref, 1e-5, 0.0);
  CHECK(rep.pass);
}

TEST_CASE("recompute and reuse plans for the same pattern agree") {
  auto g = load_fixture("scale_reduce_scale.graph");
  auto pat = all_fusable(g);
  PlanConstraints cb;
  cb.force_scheme = CompositionScheme::BlockComposition;
  auto block = plan_kernel(pat, g, default_machine_model(), &cb);
  auto best = plan_kernel(pat, g, default_machine_model());
  REQUIRE(block.has_value());
  REQUIRE(best.has_value());
  auto inputs = random_inputs(g, 17);
  auto a = eval_plan(g, single_pattern_plan(pat), {{pat.key(), *block}}, inputs);
  auto b = eval_plan(g, single_pattern_plan(pat), {{pat.key(), *best}}, inputs);
  CHECK(compare(a, b, 1e-4, 1e-5).pass);
}

TEST_CASE("removing a barrier trips the happens-before checker") {
  auto g = load_fixture("scale_reduce_scale.graph");
  auto pat = all_fusable(g);
  PlanConstraints c;
  c.force_scheme = CompositionScheme::BlockComposition;
  auto kplan = plan_kernel(pat, g, default_machine_model(), &c);
  REQUIRE(kplan.has_value());
  StitchedProgram corrupted = kplan->program;
  bool removed = false;
  for (size_t i = 0; i < corrupted.stmts.size(); ++i)
    if (corrupted.stmts[i].kind == Stmt::Barrier) {
      corrupted.stmts.erase(corrupted.stmts.begin() + static_cast<long>(i));
      removed = true;
      break;
    }
  REQUIRE(removed);
  auto tensors = random_inputs(g, 2);
  CHECK_THROWS_AS(run_program(corrupted, tensors), SimFault);
}

TEST_CASE("comparison report pinpoints the worst deviation") {
  TensorMap a, b;
  TensorValue t;
  t.shape = {{4}, DType::F32};
  t.data = {1.0, 2.0, 3.0, 4.0};
  a["y"] = t;
  b["y"] = t;
  auto same = compare(a, b, 1e-4, 1e-5);
  CHECK(same.pass);
  CHECK(same.max_abs == 0.0);
  CHECK(same.max_rel == 0.0);

  b["y"].data[2] = 3.0 * (1.0 + 2e-4);  // 2x the relative tolerance
  auto diff = compare(a, b, 1e-4, 1e-5);
  CHECK_FALSE(diff.pass);
  CHECK(diff.message.find("y") != std::string::npos);
}

TEST_CASE("f32 accumulation of 1e4 elements stays within 1e-4 of f64") {
  stitch_test::SplitMix rng(99);
  float facc = 0.0f;
  double dacc = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double v = rng.uniform() * 2.0 - 1.0 + 0.05;  // small positive bias
    facc += static_cast<float>(v);
    dacc += v;
  }
  TensorMap a, b;
  TensorValue ta, tb;
  ta.shape = tb.shape = {{1}, DType::F32};
  ta.data = {static_cast<double>(facc)};
  tb.data = {round_to_dtype(dacc, DType::F32)};
  CHECK(compare(a = {{"s", ta}}, b = {{"s", tb}}, 1e-4, 0.0).pass);
}

TEST_CASE("tensor container round trip") {
  for (DType dt : {DType::F32, DType::I32}) {
    TensorValue t;
    t.shape = {{3, 5}, dt};
    for (int i = 0; i < 15; ++i)
      t.data.push_back(round_to_dtype(dt == DType::I32 ? i - 7 : 0.125 * i - 1.0, dt));
    std::string path = "tmp_tensor_roundtrip.stt";
    write_tensor(path, t);
    auto back = read_tensor(path);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);
    std::remove(path.c_str());
  }
}

TEST_CASE("random input generation is seed-deterministic") {
  auto g = load_fixture("softmax.graph");
  auto a = random_inputs(g, 42);
  auto b = random_inputs(g, 42);
  auto c = random_inputs(g, 43);
  REQUIRE(a.count("x"));
  CHECK(a.at("x").data == b.at("x").data);
  CHECK(a.at("x").data != c.at("x").data);
  for (double v : a.at("x").data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}
