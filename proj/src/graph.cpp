#include "stitch/graph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace stitch {

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::I32: return "i32";
    case DType::Bool: return "bool";
  }
  return "?";
}

std::optional<DType> dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f16") return DType::F16;
  if (s == "i32") return DType::I32;
  if (s == "bool") return DType::Bool;
  return std::nullopt;
}

int dtype_bytes(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::I32: return 4;
    case DType::Bool: return 1;
  }
  return 4;
}

int64_t TensorShape::element_count() const {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

std::vector<int64_t> TensorShape::strides() const {
  std::vector<int64_t> s(dims.size(), 1);
  for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * dims[i + 1];
  return s;
}

std::string TensorShape::str() const {
  std::ostringstream os;
  os << dtype_name(dtype) << '[';
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

namespace {
struct KindInfo {
  OpKind kind;
  const char* name;
  int arity;
  OpClass cls;
};
const KindInfo kKinds[] = {
    {OpKind::Add, "add", 2, OpClass::LightElementwise},
    {OpKind::Sub, "sub", 2, OpClass::LightElementwise},
    {OpKind::Mul, "mul", 2, OpClass::LightElementwise},
    {OpKind::Div, "div", 2, OpClass::LightElementwise},
    {OpKind::Max, "max", 2, OpClass::LightElementwise},
    {OpKind::Min, "min", 2, OpClass::LightElementwise},
    {OpKind::Exp, "exp", 1, OpClass::ExpensiveElementwise},
    {OpKind::Tanh, "tanh", 1, OpClass::ExpensiveElementwise},
    {OpKind::Log, "log", 1, OpClass::ExpensiveElementwise},
    {OpKind::Rsqrt, "rsqrt", 1, OpClass::ExpensiveElementwise},
    {OpKind::Power, "power", 2, OpClass::ExpensiveElementwise},
    {OpKind::ReduceSum, "reduce_sum", 1, OpClass::Reduction},
    {OpKind::ReduceMax, "reduce_max", 1, OpClass::Reduction},
    {OpKind::Broadcast, "broadcast", 1, OpClass::ShapeOp},
    {OpKind::Transpose, "transpose", 1, OpClass::ShapeOp},
    {OpKind::Slice, "slice", 1, OpClass::ShapeOp},
    {OpKind::Gather, "gather", 2, OpClass::ShapeOp},
    {OpKind::Constant, "constant", 0, OpClass::ShapeOp},
    {OpKind::Parameter, "parameter", 0, OpClass::ShapeOp},
    {OpKind::OpaqueCompute, "opaque_compute", -1, OpClass::Opaque},
};
const KindInfo& info(OpKind k) {
  for (const auto& i : kKinds)
    if (i.kind == k) return i;
  throw std::logic_error("unknown op kind");
}
}  // namespace

const char* kind_name(OpKind k) { return info(k).name; }

std::optional<OpKind> kind_from_name(const std::string& s) {
  for (const auto& i : kKinds)
    if (s == i.name) return i.kind;
  return std::nullopt;
}

int kind_arity(OpKind k) { return info(k).arity; }

const char* class_name(OpClass c) {
  switch (c) {
    case OpClass::LightElementwise: return "light";
    case OpClass::ExpensiveElementwise: return "expensive";
    case OpClass::Reduction: return "reduction";
    case OpClass::ShapeOp: return "shape";
    case OpClass::Opaque: return "opaque";
  }
  return "?";
}

OpClass classify_kind(OpKind k) { return info(k).cls; }
OpClass classify_op(const OpNode& node) { return classify_kind(node.kind); }

bool is_fusable(const OpNode& node) {
  return node.kind != OpKind::Parameter && node.kind != OpKind::Constant &&
         node.kind != OpKind::OpaqueCompute;
}

std::vector<std::vector<int>> CompGraph::consumer_lists() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (const auto& n : nodes)
    for (int o : n.operands) out[static_cast<size_t>(o)].push_back(n.id);
  for (auto& v : out) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

bool CompGraph::is_output(int id) const {
  return std::find(outputs.begin(), outputs.end(), id) != outputs.end();
}

bool FusionPattern::contains(int v) const {
  return std::binary_search(vertices.begin(), vertices.end(), v);
}

std::string FusionPattern::key() const {
  std::ostringstream os;
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (i) os << '_';
    os << vertices[i];
  }
  return os.str();
}

std::optional<TensorShape> infer_shape(OpKind kind, const std::vector<TensorShape>& ops,
                                       const OpAttrs& attrs, const TensorShape* declared,
                                       std::string* error) {
  auto fail = [&](const std::string& m) -> std::optional<TensorShape> {
    if (error) *error = m;
    return std::nullopt;
  };
  OpClass cls = classify_kind(kind);
  TensorShape out;
  switch (kind) {
    case OpKind::Parameter:
    case OpKind::Constant:
    case OpKind::OpaqueCompute:
      if (!declared) return fail(std::string(kind_name(kind)) + " requires an explicit shape");
      return *declared;
    case OpKind::Broadcast: {
      if (!declared) return fail("broadcast requires an explicit output shape");
      const TensorShape& in = ops[0];
      if (static_cast<int>(attrs.dims.size()) != in.rank())
        return fail("broadcast dims count must equal operand rank");
      for (size_t i = 0; i < attrs.dims.size(); ++i) {
        int d = attrs.dims[i];
        if (d < 0 || d >= declared->rank()) return fail("broadcast dim out of range");
        if (declared->dims[static_cast<size_t>(d)] != in.dims[i])
          return fail("broadcast dim size mismatch");
      }
      out = *declared;
      out.dtype = in.dtype;
      return out;
    }
    case OpKind::Transpose: {
      const TensorShape& in = ops[0];
      if (static_cast<int>(attrs.perm.size()) != in.rank())
        return fail("transpose perm size must equal rank");
      std::vector<bool> seen(attrs.perm.size(), false);
      out.dtype = in.dtype;
      for (int p : attrs.perm) {
        if (p < 0 || p >= in.rank() || seen[static_cast<size_t>(p)])
          return fail("transpose perm is not a permutation");
        seen[static_cast<size_t>(p)] = true;
        out.dims.push_back(in.dims[static_cast<size_t>(p)]);
      }
      return out;
    }
    case OpKind::Slice: {
      const TensorShape& in = ops[0];
      if (static_cast<int>(attrs.starts.size()) != in.rank() ||
          static_cast<int>(attrs.limits.size()) != in.rank())
        return fail("slice starts/limits must match rank");
      out.dtype = in.dtype;
      for (int i = 0; i < in.rank(); ++i) {
        int s = attrs.starts[static_cast<size_t>(i)], l = attrs.limits[static_cast<size_t>(i)];
        if (s < 0 || l <= s || l > in.dims[static_cast<size_t>(i)])
          return fail("slice bounds out of range");
        out.dims.push_back(l - s);
      }
      return out;
    }
    case OpKind::Gather: {
      // gather along axis 0: out = indices.dims ++ data.dims[1:]
      const TensorShape& data = ops[0];
      const TensorShape& idx = ops[1];
      if (data.rank() < 1) return fail("gather data must have rank >= 1");
      if (idx.dtype != DType::I32) return fail("gather indices must be i32");
      out.dtype = data.dtype;
      out.dims = idx.dims;
      out.dims.insert(out.dims.end(), data.dims.begin() + 1, data.dims.end());
      return out;
    }
    case OpKind::ReduceSum:
    case OpKind::ReduceMax: {
      const TensorShape& in = ops[0];
      if (attrs.axes.empty()) return fail("reduce requires a nonempty axis set");
      std::set<int> ax(attrs.axes.begin(), attrs.axes.end());
      for (int a : ax)
        if (a < 0 || a >= in.rank()) return fail("reduce axis out of operand rank");
      out.dtype = in.dtype;
      for (int i = 0; i < in.rank(); ++i)
        if (!ax.count(i)) out.dims.push_back(in.dims[static_cast<size_t>(i)]);
      return out;
    }
    default:
      break;
  }
  if (cls == OpClass::LightElementwise || cls == OpClass::ExpensiveElementwise) {
    for (const auto& s : ops)
      if (!(s == ops[0])) return fail("elementwise operands must have identical shapes");
    return ops[0];
  }
  return fail("no shape rule for kind");
}

std::vector<Diagnostic> validate_graph(const CompGraph& g) {
  std::vector<Diagnostic> diags;
  auto add = [&](const std::string& code, const std::string& msg) {
    diags.push_back({code, msg, 0, 0});
  };
  for (const auto& n : g.nodes) {
    int arity = kind_arity(n.kind);
    if (arity >= 0 && static_cast<int>(n.operands.size()) != arity)
      add("arity", n.name + ": expected " + std::to_string(arity) + " operands");
    for (int o : n.operands)
      if (o < 0 || o >= g.num_nodes()) add("unresolved-operand", n.name + ": bad operand id");
    if ((n.kind == OpKind::ReduceSum || n.kind == OpKind::ReduceMax) && n.attrs.axes.empty())
      add("reduce-axes", n.name + ": reduce has empty axis set");
    for (int64_t d : n.shape.dims)
      if (d < 1) add("shape", n.name + ": dim < 1");
    // shape rule re-check
    std::vector<TensorShape> ops;
    bool ok = true;
    for (int o : n.operands) {
      if (o < 0 || o >= g.num_nodes()) { ok = false; break; }
      ops.push_back(g.node(o).shape);
    }
    if (ok && n.kind != OpKind::OpaqueCompute) {
      std::string err;
      auto s = infer_shape(n.kind, ops, n.attrs, &n.shape, &err);
      if (!s)
        add("shape-mismatch", n.name + ": " + err);
      else if (!(*s == n.shape))
        add("shape-mismatch", n.name + ": declared shape disagrees with shape rule");
    }
  }
  for (int o : g.outputs)
    if (o < 0 || o >= g.num_nodes()) add("unresolved-output", "bad output id");
  // acyclicity
  try {
    topo_sort(g);
  } catch (const std::exception& e) {
    add("cycle", e.what());
  }
  // dead nodes: unreachable from any output
  std::vector<bool> live(g.nodes.size(), false);
  std::deque<int> work(g.outputs.begin(), g.outputs.end());
  while (!work.empty()) {
    int v = work.front();
    work.pop_front();
    if (v < 0 || v >= g.num_nodes() || live[static_cast<size_t>(v)]) continue;
    live[static_cast<size_t>(v)] = true;
    for (int o : g.node(v).operands) work.push_back(o);
  }
  for (const auto& n : g.nodes)
    if (!live[static_cast<size_t>(n.id)]) add("dead-node", n.name + ": unreachable from outputs");
  return diags;
}

std::vector<int> topo_sort(const CompGraph& g) {
  int n = g.num_nodes();
  std::vector<int> indeg(static_cast<size_t>(n), 0);
  auto cons = g.consumer_lists();
  for (const auto& node : g.nodes) {
    std::set<int> uniq(node.operands.begin(), node.operands.end());
    indeg[static_cast<size_t>(node.id)] = static_cast<int>(uniq.size());
  }
  std::set<int> ready;
  for (int i = 0; i < n; ++i)
    if (indeg[static_cast<size_t>(i)] == 0) ready.insert(i);
  std::vector<int> order;
  order.reserve(static_cast<size_t>(n));
  while (!ready.empty()) {
    int v = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(v);
    for (int c : cons[static_cast<size_t>(v)])
      if (--indeg[static_cast<size_t>(c)] == 0) ready.insert(c);
  }
  if (static_cast<int>(order.size()) != n) throw std::runtime_error("graph contains a cycle");
  return order;
}

bool contraction_creates_cycle(const CompGraph& g, const FusionPattern& p) {
  // BFS over outside vertices starting from successors of the pattern;
  // a path back into the pattern means contraction would form a cycle.
  auto cons = g.consumer_lists();
  std::vector<int> state(g.nodes.size(), 0);  // 1 = queued/visited
  std::deque<int> work;
  for (int v : p.vertices)
    for (int c : cons[static_cast<size_t>(v)])
      if (!p.contains(c)) work.push_back(c);
  while (!work.empty()) {
    int v = work.front();
    work.pop_front();
    if (state[static_cast<size_t>(v)]) continue;
    state[static_cast<size_t>(v)] = 1;
    for (int c : cons[static_cast<size_t>(v)]) {
      if (p.contains(c)) return true;
      work.push_back(c);
    }
  }
  return false;
}

namespace {
bool pattern_connected(const CompGraph& g, const FusionPattern& p) {
  if (p.vertices.empty()) return true;
  std::set<int> in(p.vertices.begin(), p.vertices.end());
  std::set<int> seen;
  std::deque<int> work{p.vertices.front()};
  auto cons = g.consumer_lists();
  while (!work.empty()) {
    int v = work.front();
    work.pop_front();
    if (seen.count(v)) continue;
    seen.insert(v);
    for (int o : g.node(v).operands)
      if (in.count(o)) work.push_back(o);
    for (int c : cons[static_cast<size_t>(v)])
      if (in.count(c)) work.push_back(c);
  }
  return seen.size() == in.size();
}
}  // namespace

std::vector<Diagnostic> validate_plan(const CompGraph& g, const FusionPlan& s) {
  std::vector<Diagnostic> diags;
  std::set<int> used;
  double sum = 0.0;
  for (const auto& p : s.patterns) {
    sum += p.score;
    if (p.vertices.empty()) {
      diags.push_back({"empty-pattern", "pattern with no vertices", 0, 0});
      continue;
    }
    for (int v : p.vertices) {
      if (v < 0 || v >= g.num_nodes()) {
        diags.push_back({"unknown-vertex", "pattern vertex not in graph", 0, 0});
        continue;
      }
      if (!used.insert(v).second)
        diags.push_back({"disjointness", g.node(v).name + " appears in two patterns", 0, 0});
    }
    if (!p.contains(p.producer))
      diags.push_back({"producer", "pattern producer not a member vertex", 0, 0});
    if (contraction_creates_cycle(g, p))
      diags.push_back({"cycle", "pattern " + p.key() + " contraction creates a cycle", 0, 0});
    if (!p.remote && !pattern_connected(g, p))
      diags.push_back({"connectivity", "non-remote pattern " + p.key() + " is disconnected", 0, 0});
    // ShapeOp pattern roots are legal but worth flagging (see docs)
    if (classify_op(g.node(p.producer)) == OpClass::ShapeOp)
      diags.push_back({"note-shape-op-root", "note: pattern rooted at shape op " +
                                            g.node(p.producer).name, 0, 0});
  }
  if (std::abs(sum - s.total_score) > 1e-9 * std::max(1.0, std::abs(sum)))
    diags.push_back({"score-sum", "total_score is not the sum of member scores", 0, 0});
  // treat the note as non-fatal: callers look at codes
  return diags;
}

}  // namespace stitch
