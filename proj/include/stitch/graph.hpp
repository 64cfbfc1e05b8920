#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace stitch {

enum class DType { F32, F16, I32, Bool };

const char* dtype_name(DType d);
std::optional<DType> dtype_from_name(const std::string& s);
int dtype_bytes(DType d);

struct TensorShape {
  std::vector<int64_t> dims;  // every dim >= 1; empty = scalar
  DType dtype = DType::F32;

  int64_t element_count() const;
  int64_t byte_size() const { return element_count() * dtype_bytes(dtype); }
  int rank() const { return static_cast<int>(dims.size()); }
  // row-major strides, in elements
  std::vector<int64_t> strides() const;
  bool operator==(const TensorShape&) const = default;
  std::string str() const;
};

enum class OpKind {
  Add, Sub, Mul, Div, Max, Min,
  Exp, Tanh, Log, Rsqrt, Power,
  ReduceSum, ReduceMax,
  Broadcast, Transpose, Slice, Gather,
  Constant, Parameter, OpaqueCompute,
};

const char* kind_name(OpKind k);
std::optional<OpKind> kind_from_name(const std::string& s);
// -1 for variadic (opaque_compute)
int kind_arity(OpKind k);

enum class OpClass { LightElementwise, ExpensiveElementwise, Reduction, ShapeOp, Opaque };

const char* class_name(OpClass c);

// Kind-specific attributes. Only the fields relevant to the kind are used.
struct OpAttrs {
  std::vector<int> axes;    // reduce
  std::vector<int> dims;    // broadcast: dims[i] = output axis of input axis i
  std::vector<int> perm;    // transpose
  std::vector<int> starts;  // slice
  std::vector<int> limits;  // slice
  double value = 0.0;       // constant scalar fill
  bool operator==(const OpAttrs&) const = default;
};

struct OpNode {
  int id = -1;
  std::string name;
  OpKind kind = OpKind::Parameter;
  std::vector<int> operands;
  TensorShape shape;
  OpAttrs attrs;
};

struct Diagnostic {
  std::string code;  // e.g. "cycle", "unresolved-operand", "shape-mismatch"
  std::string message;
  int line = 0, col = 0;
};

struct CompGraph {
  std::vector<OpNode> nodes;           // index == id
  std::vector<int> outputs;            // root vertex ids
  std::map<std::string, int> by_name;

  const OpNode& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  int num_nodes() const { return static_cast<int>(nodes.size()); }
  // consumers of each vertex, ascending id
  std::vector<std::vector<int>> consumer_lists() const;
  bool is_output(int id) const;
};

struct FusionPattern {
  std::vector<int> vertices;  // sorted ascending
  int producer = -1;          // entry producer vertex
  bool remote = false;        // disconnected packing (kernel packing)
  double score = 0.0;         // cached delta-evaluator value f

  bool contains(int v) const;
  std::string key() const;  // canonical id for maps/dumps
};

struct FusionPlan {
  std::vector<FusionPattern> patterns;
  double total_score = 0.0;
};

// classification is a total function over op kinds
OpClass classify_op(const OpNode& node);
OpClass classify_kind(OpKind k);
bool is_fusable(const OpNode& node);  // excludes parameter/constant/opaque

// shape rule for one node given operand shapes; nullopt + diagnostic on mismatch
std::optional<TensorShape> infer_shape(OpKind kind, const std::vector<TensorShape>& operands,
                                       const OpAttrs& attrs, const TensorShape* declared,
                                       std::string* error);

// structural validation: operand resolution, arity, shape rules, acyclicity,
// dead-node detection. Returns all violations found.
std::vector<Diagnostic> validate_graph(const CompGraph& g);

// deterministic topological order: producers first, ties by ascending id.
// Throws std::runtime_error on a cycle.
std::vector<int> topo_sort(const CompGraph& g);

// true iff a path leaves the pattern and re-enters it through outside vertices
bool contraction_creates_cycle(const CompGraph& g, const FusionPattern& p);

// disjointness, per-pattern acyclicity/connectivity, score-sum consistency
std::vector<Diagnostic> validate_plan(const CompGraph& g, const FusionPlan& s);

}  // namespace stitch
