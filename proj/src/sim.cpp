#include "stitch/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace stitch {

namespace {

// f32 -> f16 -> f32 round trip (round-to-nearest-even)
float to_half_and_back(float f) {
  uint32_t x;
  std::memcpy(&x, &f, 4);
  uint32_t sign = x & 0x80000000u;
  int32_t exp = static_cast<int32_t>((x >> 23) & 0xff) - 127;
  uint32_t mant = x & 0x7fffffu;
  uint16_t h;
  if (exp > 15) {
    h = static_cast<uint16_t>((sign >> 16) | 0x7c00);  // overflow -> inf
  } else if (exp < -24) {
    h = static_cast<uint16_t>(sign >> 16);  // underflow -> zero
  } else if (exp < -14) {
    int shift = -14 - exp;
    uint32_t m = (mant | 0x800000u) >> (13 + shift);
    uint32_t rest = (mant | 0x800000u) & ((1u << (13 + shift)) - 1);
    if (rest > (1u << (12 + shift)) || (rest == (1u << (12 + shift)) && (m & 1))) ++m;
    h = static_cast<uint16_t>((sign >> 16) | m);
  } else {
    uint32_t m = mant >> 13;
    uint32_t rest = mant & 0x1fffu;
    if (rest > 0x1000u || (rest == 0x1000u && (m & 1))) ++m;
    uint32_t bits = (sign >> 16) | ((static_cast<uint32_t>(exp + 15) << 10) + m);
    h = static_cast<uint16_t>(bits);
  }
  // widen back
  uint32_t hs = (h & 0x8000u) << 16;
  uint32_t he = (h >> 10) & 0x1f;
  uint32_t hm = h & 0x3ffu;
  uint32_t out;
  if (he == 0x1f) {
    out = hs | 0x7f800000u | (hm << 13);
  } else if (he == 0) {
    if (hm == 0) {
      out = hs;
    } else {
      int e = -1;
      uint32_t m = hm;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++e;
      }
      out = hs | (static_cast<uint32_t>(127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
    }
  } else {
    out = hs | ((he + 127 - 15) << 23) | (hm << 13);
  }
  float r;
  std::memcpy(&r, &out, 4);
  return r;
}

}  // namespace

double round_to_dtype(double v, DType d) {
  switch (d) {
    case DType::F32: return static_cast<double>(static_cast<float>(v));
    case DType::F16: return static_cast<double>(to_half_and_back(static_cast<float>(v)));
    case DType::I32: return static_cast<double>(static_cast<int32_t>(std::llround(v)));
    case DType::Bool: return v != 0.0 ? 1.0 : 0.0;
  }
  return v;
}

TensorValue TensorValue::zeros(const TensorShape& s) {
  TensorValue t;
  t.shape = s;
  t.data.assign(static_cast<size_t>(s.element_count()), 0.0);
  return t;
}

namespace {

double apply_binary(OpKind k, double a, double b) {
  switch (k) {
    case OpKind::Add: return a + b;
    case OpKind::Sub: return a - b;
    case OpKind::Mul: return a * b;
    case OpKind::Div: return a / b;
    case OpKind::Max: return std::max(a, b);
    case OpKind::Min: return std::min(a, b);
    case OpKind::Power: return std::pow(a, b);
    default: throw SimFault("not a binary op");
  }
}

double apply_unary(OpKind k, double a) {
  switch (k) {
    case OpKind::Exp: return std::exp(a);
    case OpKind::Tanh: return std::tanh(a);
    case OpKind::Log: return std::log(a);
    case OpKind::Rsqrt: return 1.0 / std::sqrt(a);
    default: throw SimFault("not a unary op");
  }
}

}  // namespace

TensorValue eval_node(const OpNode& n, const std::vector<const TensorValue*>& ops) {
  TensorValue out = TensorValue::zeros(n.shape);
  int64_t count = n.shape.element_count();
  switch (n.kind) {
    case OpKind::Parameter: throw SimFault("parameter has no evaluation rule");
    case OpKind::Constant:
      for (auto& v : out.data) v = round_to_dtype(n.attrs.value, n.shape.dtype);
      return out;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div:
    case OpKind::Max:
    case OpKind::Min:
    case OpKind::Power:
      for (int64_t i = 0; i < count; ++i)
        out.data[static_cast<size_t>(i)] =
            round_to_dtype(apply_binary(n.kind, ops[0]->data[static_cast<size_t>(i)],
                                        ops[1]->data[static_cast<size_t>(i)]),
                           n.shape.dtype);
      return out;
    case OpKind::Exp:
    case OpKind::Tanh:
    case OpKind::Log:
    case OpKind::Rsqrt:
      for (int64_t i = 0; i < count; ++i)
        out.data[static_cast<size_t>(i)] = round_to_dtype(
            apply_unary(n.kind, ops[0]->data[static_cast<size_t>(i)]), n.shape.dtype);
      return out;
    case OpKind::ReduceSum:
    case OpKind::ReduceMax: {
      const TensorShape& in = ops[0]->shape;
      std::vector<bool> reduced(in.dims.size(), false);
      for (int a : n.attrs.axes) reduced[static_cast<size_t>(a)] = true;
      double ident =
          n.kind == OpKind::ReduceSum ? 0.0 : -std::numeric_limits<double>::infinity();
      std::vector<double> acc(static_cast<size_t>(count), ident);
      auto istr = in.strides();
      for (int64_t i = 0; i < in.element_count(); ++i) {
        int64_t row = 0, rstride = 1;
        for (size_t a = in.dims.size(); a-- > 0;) {
          if (reduced[a]) continue;
          int64_t c = (i / istr[a]) % in.dims[a];
          row += c * rstride;
          rstride *= in.dims[a];
        }
        double v = ops[0]->data[static_cast<size_t>(i)];
        auto& slot = acc[static_cast<size_t>(row)];
        slot = n.kind == OpKind::ReduceSum ? slot + v : std::max(slot, v);
      }
      for (int64_t i = 0; i < count; ++i)
        out.data[static_cast<size_t>(i)] = round_to_dtype(acc[static_cast<size_t>(i)],
                                                          n.shape.dtype);
      return out;
    }
    case OpKind::Broadcast: {
      const TensorShape& in = ops[0]->shape;
      auto ostr = n.shape.strides();
      auto istr = in.strides();
      for (int64_t i = 0; i < count; ++i) {
        int64_t src = 0;
        for (size_t a = 0; a < in.dims.size(); ++a) {
          size_t oa = static_cast<size_t>(n.attrs.dims[a]);
          src += ((i / ostr[oa]) % n.shape.dims[oa]) * istr[a];
        }
        out.data[static_cast<size_t>(i)] = ops[0]->data[static_cast<size_t>(src)];
      }
      return out;
    }
    case OpKind::Transpose: {
      const TensorShape& in = ops[0]->shape;
      auto ostr = n.shape.strides();
      auto istr = in.strides();
      for (int64_t i = 0; i < count; ++i) {
        int64_t src = 0;
        for (size_t a = 0; a < n.shape.dims.size(); ++a)
          src += ((i / ostr[a]) % n.shape.dims[a]) *
                 istr[static_cast<size_t>(n.attrs.perm[a])];
        out.data[static_cast<size_t>(i)] = ops[0]->data[static_cast<size_t>(src)];
      }
      return out;
    }
    case OpKind::Slice: {
      const TensorShape& in = ops[0]->shape;
      auto ostr = n.shape.strides();
      auto istr = in.strides();
      for (int64_t i = 0; i < count; ++i) {
        int64_t src = 0;
        for (size_t a = 0; a < n.shape.dims.size(); ++a)
          src += ((i / ostr[a]) % n.shape.dims[a] + n.attrs.starts[a]) * istr[a];
        out.data[static_cast<size_t>(i)] = ops[0]->data[static_cast<size_t>(src)];
      }
      return out;
    }
    case OpKind::Gather: {
      const TensorShape& data = ops[0]->shape;
      int64_t inner = data.element_count() / data.dims[0];
      for (int64_t i = 0; i < count; ++i) {
        int64_t row = static_cast<int64_t>(ops[1]->data[static_cast<size_t>(i / inner)]);
        if (row < 0 || row >= data.dims[0]) throw SimFault("gather index out of range");
        out.data[static_cast<size_t>(i)] = ops[0]->data[static_cast<size_t>(row * inner + i % inner)];
      }
      return out;
    }
    case OpKind::OpaqueCompute: {
      // deterministic placeholder: mean of all operand elements, everywhere
      double s = 0.0;
      int64_t m = 0;
      for (const TensorValue* o : ops) {
        for (double v : o->data) s += v;
        m += o->shape.element_count();
      }
      double fill = round_to_dtype(m ? s / static_cast<double>(m) : 0.0, n.shape.dtype);
      for (auto& v : out.data) v = fill;
      return out;
    }
  }
  throw SimFault("unhandled op kind");
}

TensorMap eval_reference(const CompGraph& g, const TensorMap& inputs) {
  std::map<int, TensorValue> vals;
  for (int v : topo_sort(g)) {
    const OpNode& n = g.node(v);
    if (n.kind == OpKind::Parameter) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw SimFault("missing input: " + n.name);
      if (it->second.shape.dims != n.shape.dims)
        throw SimFault("input shape mismatch: " + n.name);
      vals[v] = it->second;
      continue;
    }
    std::vector<const TensorValue*> ops;
    for (int o : n.operands) ops.push_back(&vals.at(o));
    vals[v] = eval_node(n, ops);
  }
  TensorMap out;
  for (int v : g.outputs) out[g.node(v).name] = vals.at(v);
  return out;
}

// ---- stitched-program interpreter ----

namespace {

struct SharedCell {
  double value = 0.0;
  int64_t epoch = -1;
  int writer = -1;
};

struct BlockState {
  int bid;
  std::map<int64_t, SharedCell> shm;  // keyed by byte offset (4-aligned)
  int64_t epoch = 0;
  // per-thread register files: name -> slot -> value
  std::vector<std::map<std::string, std::map<int64_t, double>>> regs;
};

struct Interp {
  const StitchedProgram& prog;
  TensorMap& tensors;
  int B, G;

  std::map<std::string, int64_t> env_vars;  // bid/tid/lane/wid + loop vars
  BlockState* blk = nullptr;
  int cur_thread = 0;

  Interp(const StitchedProgram& p, TensorMap& t)
      : prog(p), tensors(t), B(p.launch.block), G(p.launch.grid) {}

  double reg_get(int t, const std::string& name, int64_t slot) {
    auto& file = blk->regs[static_cast<size_t>(t)];
    auto it = file.find(name);
    if (it == file.end()) return 0.0;
    auto jt = it->second.find(slot);
    return jt == it->second.end() ? 0.0 : jt->second;
  }

  void reg_set(int t, const std::string& name, int64_t slot, double v) {
    blk->regs[static_cast<size_t>(t)][name][slot] = v;
  }

  EvalEnv env(int t) {
    env_vars["tid"] = t;
    env_vars["lane"] = t % 32;
    env_vars["wid"] = (static_cast<int64_t>(blk->bid) * B + t) / 32;
    cur_thread = t;
    return EvalEnv{&env_vars,
                   [this](const std::string& r) {
                     return static_cast<int64_t>(std::llround(reg_get(cur_thread, r, 0)));
                   }};
  }

  TensorValue& tensor(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw SimFault("unbound tensor: " + name);
    return it->second;
  }

  void exec_range(size_t lo, size_t hi) {
    for (size_t i = lo; i < hi;) {
      const Stmt& s = prog.stmts[i];
      if (s.kind == Stmt::Loop) {
        size_t match = i + 1;
        int depth = 1;
        while (depth) {
          if (prog.stmts[match].kind == Stmt::Loop) ++depth;
          if (prog.stmts[match].kind == Stmt::EndLoop) --depth;
          if (depth) ++match;
        }
        int64_t trip = eval(s.idx, EvalEnv{&env_vars, nullptr});
        for (int64_t it = 0; it < trip; ++it) {
          env_vars[s.loop_var] = it;
          exec_range(i + 1, match);
        }
        env_vars.erase(s.loop_var);
        i = match + 1;
        continue;
      }
      exec_stmt(s);
      ++i;
    }
  }

  void exec_stmt(const Stmt& s) {
    switch (s.kind) {
      case Stmt::Comment:
      case Stmt::Loop:
      case Stmt::EndLoop: return;
      case Stmt::Barrier: ++blk->epoch; return;
      case Stmt::WarpReduce: {
        for (int w = 0; w < B / 32; ++w) {
          double acc = reg_get(w * 32, s.srcs[0], 0);
          for (int l = 1; l < 32; ++l) {
            double v = reg_get(w * 32 + l, s.srcs[0], 0);
            acc = s.op == "sum" ? acc + v : std::max(acc, v);
          }
          for (int l = 0; l < 32; ++l) reg_set(w * 32 + l, s.dst, 0, acc);
        }
        return;
      }
      default: break;
    }
    for (int t = 0; t < B; ++t) {
      EvalEnv e = env(t);
      bool live = eval(s.guard, e);
      switch (s.kind) {
        case Stmt::ISet: reg_set(t, s.dst, 0, static_cast<double>(eval(s.idx, e))); break;
        case Stmt::FConst: reg_set(t, s.dst, 0, s.cval); break;
        case Stmt::FMove: reg_set(t, s.dst, 0, reg_get(t, s.srcs[0], 0)); break;
        case Stmt::FOp: {
          double r;
          auto k = kind_from_name(s.op);
          if (!k) throw SimFault("unknown fop kind: " + s.op);
          if (s.srcs.size() == 2)
            r = apply_binary(*k, reg_get(t, s.srcs[0], 0), reg_get(t, s.srcs[1], 0));
          else
            r = apply_unary(*k, reg_get(t, s.srcs[0], 0));
          reg_set(t, s.dst, 0, static_cast<double>(static_cast<float>(r)));
          break;
        }
        case Stmt::GLoad: {
          double v = 0.0;
          if (live) {
            TensorValue& tv = tensor(s.tensor);
            int64_t idx = eval(s.idx, e);
            if (idx < 0 || idx >= tv.shape.element_count())
              throw SimFault("global load out of bounds: " + s.tensor);
            v = tv.data[static_cast<size_t>(idx)];
          }
          reg_set(t, s.dst, 0, v);
          break;
        }
        case Stmt::GStore: {
          if (!live) break;
          TensorValue& tv = tensor(s.tensor);
          int64_t idx = eval(s.idx, e);
          if (idx < 0 || idx >= tv.shape.element_count())
            throw SimFault("global store out of bounds: " + s.tensor);
          tv.data[static_cast<size_t>(idx)] =
              round_to_dtype(reg_get(t, s.srcs[0], 0), tv.shape.dtype);
          break;
        }
        case Stmt::SLoad: {
          double v = 0.0;
          if (live) {
            int64_t off = eval(s.idx, e);
            if (off < 0 || off % 4 != 0 || off + 4 > prog.shmem_bytes)
              throw SimFault("shared load out of bounds at offset " + std::to_string(off));
            auto it = blk->shm.find(off);
            if (it != blk->shm.end()) {
              if (it->second.epoch == blk->epoch && it->second.writer != t)
                throw SimFault("shared read of un-barriered write at offset " +
                               std::to_string(off));
              v = it->second.value;
            }
          }
          reg_set(t, s.dst, 0, v);
          break;
        }
        case Stmt::SStore: {
          if (!live) break;
          int64_t off = eval(s.idx, e);
          if (off < 0 || off % 4 != 0 || off + 4 > prog.shmem_bytes)
            throw SimFault("shared store out of bounds at offset " + std::to_string(off));
          blk->shm[off] = {reg_get(t, s.srcs[0], 0), blk->epoch, t};
          break;
        }
        case Stmt::RegSet:
          if (live) reg_set(t, s.dst, eval(s.dst_slot, e), reg_get(t, s.srcs[0], 0));
          break;
        case Stmt::RegRead:
          reg_set(t, s.dst, 0, reg_get(t, s.srcs[0], eval(s.src_slot, e)));
          break;
        case Stmt::Shuffle: {
          int64_t slot = eval(s.src_slot, e);
          reg_set(t, s.dst, 0, reg_get((t / 32) * 32, s.srcs[0], slot));
          break;
        }
        case Stmt::Accum: {
          if (!live) break;
          double cur = reg_get(t, s.dst, 0);
          double v = reg_get(t, s.srcs[0], 0);
          reg_set(t, s.dst, 0, s.op == "sum" ? cur + v : std::max(cur, v));
          break;
        }
        default: throw SimFault("unhandled statement");
      }
    }
  }

  void run() {
    for (const auto& b : prog.inputs) {
      TensorValue& tv = tensor(b.name);
      if (tv.shape.dims != b.shape.dims)
        throw SimFault("kernel input shape mismatch: " + b.name);
    }
    for (const auto& b : prog.outputs)
      if (!tensors.count(b.name)) tensors[b.name] = TensorValue::zeros(b.shape);
    for (int bid = 0; bid < G; ++bid) {
      BlockState bs;
      bs.bid = bid;
      bs.regs.resize(static_cast<size_t>(B));
      blk = &bs;
      env_vars.clear();
      env_vars["bid"] = bid;
      exec_range(0, prog.stmts.size());
    }
    blk = nullptr;
  }
};

}  // namespace

void run_program(const StitchedProgram& prog, TensorMap& tensors) {
  Interp in(prog, tensors);
  in.run();
}

TensorMap eval_plan(const CompGraph& g, const FusionPlan& plan,
                    const std::map<std::string, KernelPlan>& kernel_plans,
                    const TensorMap& inputs) {
  auto order = topo_sort(g);
  std::map<int, int> pos;
  for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);

  // pattern fires once its topologically last member is reached
  std::map<int, const FusionPattern*> fire_at;
  std::set<int> covered;
  for (const auto& p : plan.patterns) {
    int last = p.vertices.front();
    for (int v : p.vertices) {
      covered.insert(v);
      if (pos[v] > pos[last]) last = v;
    }
    fire_at[last] = &p;
  }

  TensorMap values;  // by tensor (vertex) name
  for (int v : order) {
    const OpNode& n = g.node(v);
    if (n.kind == OpKind::Parameter) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw SimFault("missing input: " + n.name);
      values[n.name] = it->second;
      continue;
    }
    if (covered.count(v)) {
      auto fit = fire_at.find(v);
      if (fit == fire_at.end()) continue;
      auto kit = kernel_plans.find(fit->second->key());
      if (kit == kernel_plans.end()) throw SimFault("missing kernel plan for pattern");
      run_program(kit->second.program, values);
      continue;
    }
    std::vector<const TensorValue*> ops;
    for (int o : n.operands) ops.push_back(&values.at(g.node(o).name));
    values[n.name] = eval_node(n, ops);
  }
  TensorMap out;
  for (int v : g.outputs) out[g.node(v).name] = values.at(g.node(v).name);
  return out;
}

CompareReport compare(const TensorMap& got, const TensorMap& want, double rel_tol,
                      double abs_tol) {
  CompareReport r;
  for (const auto& [name, w] : want) {
    auto it = got.find(name);
    if (it == got.end()) {
      r.pass = false;
      r.message = "missing output: " + name;
      return r;
    }
    if (it->second.shape.dims != w.shape.dims) {
      r.pass = false;
      r.message = "shape mismatch on " + name;
      return r;
    }
    bool integral = w.shape.dtype == DType::I32 || w.shape.dtype == DType::Bool;
    for (size_t i = 0; i < w.data.size(); ++i) {
      double a = it->second.data[i], b = w.data[i];
      double ad = std::abs(a - b);
      double rd = ad / std::max({std::abs(a), std::abs(b), 1e-30});
      r.max_abs = std::max(r.max_abs, ad);
      if (ad > 0) r.max_rel = std::max(r.max_rel, rd);
      bool ok = integral ? a == b : (ad <= abs_tol || rd <= rel_tol);
      if (!ok && r.pass) {
        r.pass = false;
        r.message = "mismatch on " + name + "[" + std::to_string(i) + "]: got " +
                    std::to_string(a) + ", want " + std::to_string(b);
      }
    }
  }
  return r;
}

void write_tensor(const std::string& path, const TensorValue& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SimFault("cannot write " + path);
  f.write("STT1", 4);
  uint8_t dt = static_cast<uint8_t>(t.shape.dtype);
  uint8_t rank = static_cast<uint8_t>(t.shape.rank());
  f.put(static_cast<char>(dt));
  f.put(static_cast<char>(rank));
  for (int64_t d : t.shape.dims) {
    uint64_t u = static_cast<uint64_t>(d);
    f.write(reinterpret_cast<const char*>(&u), 8);
  }
  for (double v : t.data) {
    switch (t.shape.dtype) {
      case DType::F32: {
        float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
        break;
      }
      case DType::F16: {
        // stored widened; containers carry f16 payloads as f32 bits
        float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
        break;
      }
      case DType::I32: {
        int32_t x = static_cast<int32_t>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
        break;
      }
      case DType::Bool: {
        uint8_t x = v != 0.0;
        f.write(reinterpret_cast<const char*>(&x), 1);
        break;
      }
    }
  }
}

TensorValue read_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  char magic[4];
  if (!f.read(magic, 4) || std::string(magic, 4) != "STT1")
    throw SimFault("bad tensor container: " + path);
  TensorValue t;
  t.shape.dtype = static_cast<DType>(f.get());
  int rank = f.get();
  for (int i = 0; i < rank; ++i) {
    uint64_t d;
    f.read(reinterpret_cast<char*>(&d), 8);
    t.shape.dims.push_back(static_cast<int64_t>(d));
  }
  int64_t count = t.shape.element_count();
  t.data.resize(static_cast<size_t>(count));
  for (auto& v : t.data) {
    switch (t.shape.dtype) {
      case DType::F32:
      case DType::F16: {
        float x;
        f.read(reinterpret_cast<char*>(&x), 4);
        v = x;
        break;
      }
      case DType::I32: {
        int32_t x;
        f.read(reinterpret_cast<char*>(&x), 4);
        v = x;
        break;
      }
      case DType::Bool: {
        char x;
        f.read(&x, 1);
        v = x ? 1.0 : 0.0;
        break;
      }
    }
  }
  if (!f) throw SimFault("truncated tensor container: " + path);
  return t;
}

TensorMap random_inputs(const CompGraph& g, uint64_t seed) {
  // splitmix64 keeps draws platform-independent and byte-reproducible
  auto next = [state = seed + 0x9e3779b97f4a7c15ull]() mutable {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  auto uniform = [&]() { return static_cast<double>(next() >> 11) * 0x1p-53 * 2.0 - 1.0; };

  TensorMap out;
  for (const auto& n : g.nodes) {
    if (n.kind != OpKind::Parameter) continue;
    TensorValue t = TensorValue::zeros(n.shape);
    if (n.shape.dtype == DType::I32) {
      // bound indices by the smallest gather-data extent this feeds
      int64_t bound = 10;
      for (const auto& c : g.nodes)
        if (c.kind == OpKind::Gather && c.operands.size() == 2 && c.operands[1] == n.id)
          bound = std::min(bound, g.node(c.operands[0]).shape.dims[0]);
      for (auto& v : t.data) v = static_cast<double>(next() % static_cast<uint64_t>(bound));
    } else if (n.shape.dtype == DType::Bool) {
      for (auto& v : t.data) v = static_cast<double>(next() & 1);
    } else {
      for (auto& v : t.data) v = round_to_dtype(uniform(), n.shape.dtype);
    }
    out[n.name] = t;
  }
  return out;
}

}  // namespace stitch
