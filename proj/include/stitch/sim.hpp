#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stitch/graph.hpp"
#include "stitch/planner.hpp"
#include "stitch/program.hpp"

namespace stitch {

// Dense tensor held as f64; stored values are always rounded to the tensor's
// dtype so reference and interpreter agree bit-for-bit on f32 data.
struct TensorValue {
  TensorShape shape;
  std::vector<double> data;

  static TensorValue zeros(const TensorShape& s);
};

double round_to_dtype(double v, DType d);

using TensorMap = std::map<std::string, TensorValue>;

struct SimFault : std::runtime_error {
  explicit SimFault(const std::string& m) : std::runtime_error(m) {}
};

// single-op semantics shared by the reference evaluator and unfused kernels
TensorValue eval_node(const OpNode& n, const std::vector<const TensorValue*>& operands);

// plain topological evaluation; f64 accumulation for reductions
TensorMap eval_reference(const CompGraph& g, const TensorMap& inputs);

// Interpret a stitched program: blocks sequential, statements in SIMT
// lockstep, shared memory with happens-before (barrier) checking. Inputs are
// read from `tensors`; outputs are created/overwritten in it.
void run_program(const StitchedProgram& prog, TensorMap& tensors);

// kernels in topological order of the contracted graph; unfused vertices
// evaluated by reference rules
TensorMap eval_plan(const CompGraph& g, const FusionPlan& plan,
                    const std::map<std::string, KernelPlan>& kernel_plans,
                    const TensorMap& inputs);

struct CompareReport {
  bool pass = true;
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::string message;  // names the worst output/index on failure
};

CompareReport compare(const TensorMap& got, const TensorMap& want, double rel_tol,
                      double abs_tol);

// binary container: magic "STT1", u8 dtype, u8 rank, u64 dims, then row-major
// little-endian payload in the tensor's dtype
void write_tensor(const std::string& path, const TensorValue& t);
TensorValue read_tensor(const std::string& path);

// seeded uniform(-1,1) draws for every parameter; i32 parameters get small
// non-negative integers bounded by any gather-data extent they index into
TensorMap random_inputs(const CompGraph& g, uint64_t seed);

}  // namespace stitch
