#include "stitch/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stitch {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

std::map<int, int> topo_positions(const CompGraph& g) {
  std::map<int, int> pos;
  int i = 0;
  for (int v : topo_sort(g)) pos[v] = i++;
  return pos;
}

// vertices with a consumer outside the pattern, or marked as graph outputs
std::vector<int> external_outputs(const FusionPattern& p, const CompGraph& g) {
  std::set<int> in(p.vertices.begin(), p.vertices.end());
  std::set<int> out;
  for (int v : p.vertices)
    if (g.is_output(v)) out.insert(v);
  for (const auto& n : g.nodes)
    for (int o : n.operands)
      if (in.count(o) && !in.count(n.id)) out.insert(o);
  return {out.begin(), out.end()};
}

void collect_vars(const ExprP& e, std::set<std::string>& vars, bool& has_reg) {
  if (!e) return;
  if (e->kind == Expr::Var) vars.insert(e->name);
  if (e->kind == Expr::Reg) has_reg = true;
  collect_vars(e->a, vars, has_reg);
  collect_vars(e->b, vars, has_reg);
}

void collect_vars(const BExprP& e, std::set<std::string>& vars, bool& has_reg) {
  if (!e) return;
  if (e->kind == BExpr::And) {
    collect_vars(e->a, vars, has_reg);
    collect_vars(e->b, vars, has_reg);
  } else {
    collect_vars(e->lhs, vars, has_reg);
    collect_vars(e->rhs, vars, has_reg);
  }
}

struct EmitFail {
  std::string reason;
};

// which producer-side containment a boundary read must satisfy
enum class OwnerScope { Thread, Warp, Block };

// Builds the stitched program for one (grouping, schedules, launch) choice.
// Throws EmitFail when a boundary read cannot be satisfied within the
// producer's reuse scope or shared memory cannot be laid out.
struct Emitter {
  const CompGraph& g;
  const FusionPattern& p;
  const Grouping& grouping;
  const std::map<int, std::string>& tpl;  // group root -> template id
  LaunchDims ld;
  const DeviceSpec& dev;

  std::set<int> in_pat;
  std::set<int> root_set;
  std::set<int> emitted_roots;
  int current_root = -1;

  StitchedProgram prog;
  AllocationMap alloc;
  int64_t scratch_offset = -1;  // -1: no block-reduction scratch
  std::vector<GroupBoundary> boundaries;

  struct MemoEntry {
    std::string reg;
    std::string chain;
  };
  std::map<std::string, MemoEntry> memo;
  int next_reg = 0;
  int next_loop = 0;

  struct LoopFrame {
    std::string var;
    int64_t trip;
  };
  std::vector<LoopFrame> frames;
  std::string chain;  // "#<id>" per open loop, unique ids

  std::set<int> bound_inputs;
  std::set<std::pair<int, int>> seen_boundaries;

  ExprP vb = e_var("bid"), vt = e_var("tid"), vlane = e_var("lane"), vwid = e_var("wid");

  Emitter(const CompGraph& g_, const FusionPattern& p_, const Grouping& gr,
          const std::map<int, std::string>& t, LaunchDims l, const DeviceSpec& d)
      : g(g_), p(p_), grouping(gr), tpl(t), ld(l), dev(d) {
    in_pat.insert(p.vertices.begin(), p.vertices.end());
    auto roots = grouping.group_roots();
    root_set.insert(roots.begin(), roots.end());
    prog.launch = ld;
  }

  int64_t T() const { return ld.total_threads(); }
  int64_t W() const { return T() / dev.warp_size; }
  ExprP gt() const { return e_add(e_mul(vb, e_const(ld.block)), vt); }

  std::string fresh(const char* pfx) { return std::string(pfx) + std::to_string(next_reg++); }

  void push(Stmt s) { prog.stmts.push_back(std::move(s)); }

  void barrier() {
    Stmt s;
    s.kind = Stmt::Barrier;
    push(std::move(s));
  }

  void comment(const std::string& t) {
    Stmt s;
    s.kind = Stmt::Comment;
    s.text = t;
    push(std::move(s));
  }

  // trip-1 loops are folded away: the var becomes the constant 0
  std::pair<ExprP, bool> begin_loop(int64_t trip) {
    if (trip <= 1) return {e_const(0), false};
    std::string var = "j" + std::to_string(next_loop++);
    Stmt s;
    s.kind = Stmt::Loop;
    s.loop_var = var;
    s.idx = e_const(trip);
    push(std::move(s));
    frames.push_back({var, trip});
    chain += "#" + std::to_string(next_loop - 1);
    return {e_var(var), true};
  }

  void end_loop(bool real) {
    if (!real) return;
    Stmt s;
    s.kind = Stmt::EndLoop;
    push(std::move(s));
    frames.pop_back();
    chain.resize(chain.rfind('#'));
  }

  // deepest-loop prefix of the current chain that the expression depends on;
  // register references pin the value to the full current chain
  std::string chain_for(const std::set<std::string>& vars, bool has_reg) const {
    if (has_reg) return chain;
    std::string c;
    std::string acc;
    size_t pos = 0;
    for (size_t i = 0; i < frames.size(); ++i) {
      size_t next = chain.find('#', pos + 1);
      acc += chain.substr(pos, (next == std::string::npos ? chain.size() : next) - pos);
      pos = next;
      if (vars.count(frames[i].var)) c = acc;
      if (pos == std::string::npos) break;
    }
    return c;
  }

  std::string chain_of(const ExprP& e, const BExprP& gd) const {
    std::set<std::string> vars;
    bool has_reg = false;
    collect_vars(e, vars, has_reg);
    collect_vars(gd, vars, has_reg);
    return chain_for(vars, has_reg);
  }

  const MemoEntry* lookup(const std::string& key) const {
    auto it = memo.find(key);
    if (it == memo.end()) return nullptr;
    if (chain.rfind(it->second.chain, 0) != 0) return nullptr;  // stale loop context
    return &it->second;
  }

  // longest of two prefix-comparable chains
  static const std::string& longer(const std::string& a, const std::string& b) {
    return a.size() >= b.size() ? a : b;
  }

  // Materialize rewritten index expressions (anything with a division or
  // modulus) as an index register so identical calculations are shared and
  // costed once. Plain linear thread mappings stay inline and free.
  ExprP maybe_index(const ExprP& idx) {
    if (idx->kind == Expr::Const || idx->kind == Expr::Var) return idx;
    std::string s = to_string(idx);
    if (s.find('/') == std::string::npos && s.find('%') == std::string::npos) return idx;
    std::string key = "I|" + s;
    if (const MemoEntry* e = lookup(key)) return e_reg(e->reg);
    std::string reg = fresh("i");
    Stmt st;
    st.kind = Stmt::ISet;
    st.dst = reg;
    st.idx = idx;
    push(std::move(st));
    memo[key] = {reg, chain_of(idx, nullptr)};
    return e_reg(reg);
  }

  // Verify that every guarded-live execution point reads a producer element
  // owned by its own thread/warp/block. `rl_p` is the producer's row length:
  // 1 for element-mapped producers, the trailing extent for row-mapped ones.
  // Sampled with an odd stride so power-of-two residue patterns are still
  // covered; the tail is always hit.
  void check_owner(const ExprP& idx, const BExprP& gd, OwnerScope scope, int64_t rl_p = 1) {
    std::set<std::string> vars;
    bool has_reg = false;
    collect_vars(idx, vars, has_reg);
    if (has_reg) throw EmitFail{"data-dependent boundary index"};
    std::vector<int64_t> radix = {ld.grid, ld.block};
    for (const auto& f : frames) radix.push_back(f.trip);
    int64_t total = 1;
    for (int64_t r : radix) total *= r;
    const int64_t cap = int64_t(1) << 14;
    int64_t stride = total <= cap ? 1 : ((total / cap) | 1);
    std::map<std::string, int64_t> env_vars;
    EvalEnv env{&env_vars, nullptr};
    auto probe = [&](int64_t flat) {
      int64_t rem = flat;
      std::vector<int64_t> coord(radix.size());
      for (size_t i = radix.size(); i-- > 0;) {
        coord[i] = rem % radix[i];
        rem /= radix[i];
      }
      env_vars["bid"] = coord[0];
      env_vars["tid"] = coord[1];
      env_vars["lane"] = coord[1] % dev.warp_size;
      int64_t gthread = coord[0] * ld.block + coord[1];
      env_vars["wid"] = gthread / dev.warp_size;
      for (size_t i = 0; i < frames.size(); ++i) env_vars[frames[i].var] = coord[i + 2];
      if (!eval(gd, env)) return;
      int64_t e = eval(idx, env);
      bool ok = true;
      switch (scope) {
        case OwnerScope::Thread: ok = e % T() == gthread; break;
        case OwnerScope::Warp: ok = e % W() == env_vars["wid"]; break;
        case OwnerScope::Block: ok = (e / rl_p) % ld.grid == coord[0]; break;
      }
      if (!ok) throw EmitFail{"boundary read escapes producer reuse scope"};
    };
    for (int64_t f = 0; f < total; f += stride) probe(f);
    probe(total - 1);
  }

  void bind_input(int v) {
    if (!bound_inputs.insert(v).second) return;
    prog.inputs.push_back({g.node(v).name, g.node(v).shape});
  }

  std::string emit_value(int v, const ExprP& idx, const BExprP& gd) {
    std::string key = "V|" + std::to_string(v) + "|" + to_string(idx) + "|" + to_string(gd);
    if (const MemoEntry* e = lookup(key)) return e->reg;
    const OpNode& n = g.node(v);

    if (!in_pat.count(v)) {
      if (n.kind == OpKind::Constant) {
        std::string reg = fresh("t");
        Stmt s;
        s.kind = Stmt::FConst;
        s.dst = reg;
        s.cval = n.attrs.value;
        push(std::move(s));
        memo[key] = {reg, ""};
        return reg;
      }
      bind_input(v);
      std::string reg = fresh("t");
      Stmt s;
      s.kind = Stmt::GLoad;
      s.dst = reg;
      s.tensor = n.name;
      s.idx = maybe_index(idx);
      s.guard = gd;
      push(std::move(s));
      memo[key] = {reg, chain_of(idx, gd)};
      return reg;
    }

    if (root_set.count(v) && v != current_root) return read_boundary(v, idx, gd, key);

    switch (classify_op(n)) {
      case OpClass::ShapeOp: return emit_shape_op(v, idx, gd, key);
      case OpClass::LightElementwise:
      case OpClass::ExpensiveElementwise: {
        std::string mchain;
        std::vector<std::string> srcs;
        for (int o : n.operands) {
          srcs.push_back(emit_value(o, idx, gd));
          std::string okey = "V|" + std::to_string(o) + "|" + to_string(idx) + "|" + to_string(gd);
          auto it = memo.find(okey);
          if (it != memo.end()) mchain = longer(mchain, it->second.chain);
        }
        std::string reg = fresh("t");
        Stmt s;
        s.kind = Stmt::FOp;
        s.op = kind_name(n.kind);
        s.dst = reg;
        s.srcs = std::move(srcs);
        push(std::move(s));
        memo[key] = {reg, mchain};
        return reg;
      }
      default: throw EmitFail{"non-root reduction/opaque inside a group body"};
    }
  }

  // Reductions and expensive ops are mapped one output element per row;
  // light/shape roots under warp/block schemes iterate rows x trailing-extent.
  int64_t row_len_of(int v) const {
    OpClass c = classify_op(g.node(v));
    if (c == OpClass::Reduction || c == OpClass::ExpensiveElementwise) return 1;
    const TensorShape& s = g.node(v).shape;
    return s.rank() == 0 ? 1 : s.dims.back();
  }

  std::string read_boundary(int v, const ExprP& idx, const BExprP& gd, const std::string& key) {
    if (!emitted_roots.count(v)) throw EmitFail{"boundary producer not yet emitted"};
    const ScheduleTemplate& pt = template_by_id(tpl.at(v));
    if (seen_boundaries.insert({v, current_root}).second)
      boundaries.push_back({v, current_root, pt.id, tpl.at(current_root)});
    std::string reg = fresh("t");
    Stmt s;
    switch (pt.output_placement) {
      case OutputPlacement::ThreadRegister:
        check_owner(idx, gd, OwnerScope::Thread);
        s.kind = Stmt::RegRead;
        s.dst = reg;
        s.srcs = {"buf_" + g.node(v).name};
        s.src_slot = e_div(idx, e_const(T()));
        break;
      case OutputPlacement::WarpLane0Register:
        check_owner(idx, gd, OwnerScope::Warp);
        s.kind = Stmt::Shuffle;
        s.dst = reg;
        s.srcs = {"buf_" + g.node(v).name};
        s.src_slot = e_div(idx, e_const(W()));
        break;
      case OutputPlacement::SharedMemory: {
        int64_t rlp = row_len_of(v);
        check_owner(idx, gd, OwnerScope::Block, rlp);
        s.kind = Stmt::SLoad;
        s.dst = reg;
        int64_t off = alloc.slots.at(v).offset;
        // slot = (row / G) * rl + pos, which for rl == 1 is just idx / G
        ExprP slot = rlp == 1 ? e_div(idx, e_const(ld.grid))
                              : e_add(e_mul(e_div(e_div(idx, e_const(rlp)), e_const(ld.grid)),
                                            e_const(rlp)),
                                      e_mod(idx, e_const(rlp)));
        s.idx = maybe_index(e_add(e_const(off), e_mul(slot, e_const(4))));
        s.guard = gd;
        break;
      }
      case OutputPlacement::GlobalMemory: throw EmitFail{"global boundary placement unused"};
    }
    push(std::move(s));
    memo[key] = {reg, chain_of(idx, gd)};
    return reg;
  }

  std::string emit_shape_op(int v, const ExprP& idx, const BExprP& gd, const std::string& key) {
    const OpNode& n = g.node(v);
    const TensorShape& out = n.shape;
    auto ostr = out.strides();
    auto coord = [&](int axis) {
      return e_mod(e_div(idx, e_const(ostr[static_cast<size_t>(axis)])),
                   e_const(out.dims[static_cast<size_t>(axis)]));
    };
    switch (n.kind) {
      case OpKind::Broadcast: {
        const TensorShape& in = g.node(n.operands[0]).shape;
        auto istr = in.strides();
        ExprP e = e_const(0);
        for (size_t i = 0; i < in.dims.size(); ++i)
          e = e_add(e, e_mul(coord(n.attrs.dims[i]), e_const(istr[i])));
        std::string reg = emit_value(n.operands[0], e, gd);
        memo[key] = memo.at("V|" + std::to_string(n.operands[0]) + "|" + to_string(e) + "|" +
                            to_string(gd));
        return reg;
      }
      case OpKind::Transpose: {
        const TensorShape& in = g.node(n.operands[0]).shape;
        auto istr = in.strides();
        ExprP e = e_const(0);
        for (size_t j = 0; j < out.dims.size(); ++j)
          e = e_add(e, e_mul(coord(static_cast<int>(j)),
                             e_const(istr[static_cast<size_t>(n.attrs.perm[j])])));
        std::string reg = emit_value(n.operands[0], e, gd);
        memo[key] = memo.at("V|" + std::to_string(n.operands[0]) + "|" + to_string(e) + "|" +
                            to_string(gd));
        return reg;
      }
      case OpKind::Slice: {
        const TensorShape& in = g.node(n.operands[0]).shape;
        auto istr = in.strides();
        ExprP e = e_const(0);
        for (size_t j = 0; j < out.dims.size(); ++j)
          e = e_add(e, e_mul(e_add(coord(static_cast<int>(j)), e_const(n.attrs.starts[j])),
                             e_const(istr[j])));
        std::string reg = emit_value(n.operands[0], e, gd);
        memo[key] = memo.at("V|" + std::to_string(n.operands[0]) + "|" + to_string(e) + "|" +
                            to_string(gd));
        return reg;
      }
      case OpKind::Gather: {
        int data = n.operands[0], indices = n.operands[1];
        if (in_pat.count(data)) throw EmitFail{"gather data produced inside the pattern"};
        const TensorShape& ds = g.node(data).shape;
        int64_t inner = ds.element_count() / ds.dims[0];
        std::string ireg = emit_value(indices, e_div(idx, e_const(inner)), gd);
        ExprP e = e_add(e_mul(e_reg(ireg), e_const(inner)), e_mod(idx, e_const(inner)));
        bind_input(data);
        std::string reg = fresh("t");
        Stmt s;
        s.kind = Stmt::GLoad;
        s.dst = reg;
        s.tensor = g.node(data).name;
        s.idx = maybe_index(e);
        s.guard = gd;
        push(std::move(s));
        memo[key] = {reg, chain};
        return reg;
      }
      default: throw EmitFail{"unexpected shape op in group body"};
    }
  }

  BExprP guard_lt(const ExprP& e, int64_t bound, int64_t reach) const {
    return reach > bound ? b_cmp(BExpr::Lt, e, e_const(bound)) : nullptr;
  }

  bool need_buffer(int r) const {
    for (const auto& n : g.nodes)
      if (in_pat.count(n.id))
        for (int o : n.operands)
          if (o == r) return true;
    return false;
  }

  bool need_gstore(int r) const {
    if (g.is_output(r)) return true;
    for (const auto& n : g.nodes)
      if (!in_pat.count(n.id))
        for (int o : n.operands)
          if (o == r) return true;
    return false;
  }

  void store_result(int r, const std::string& val, const ExprP& e, const ExprP& slot,
                    const BExprP& gd, bool buffer, bool gstore) {
    if (buffer) {
      Stmt s;
      s.kind = Stmt::RegSet;
      s.dst = "buf_" + g.node(r).name;
      s.dst_slot = slot;
      s.srcs = {val};
      s.guard = gd;
      push(std::move(s));
    }
    if (gstore) {
      Stmt s;
      s.kind = Stmt::GStore;
      s.tensor = g.node(r).name;
      s.idx = maybe_index(e);
      s.srcs = {val};
      s.guard = gd;
      push(std::move(s));
      if (std::none_of(prog.outputs.begin(), prog.outputs.end(),
                       [&](const TensorBinding& b) { return b.name == g.node(r).name; }))
        prog.outputs.push_back({g.node(r).name, g.node(r).shape});
    }
  }

  void emit_elementwise_group(int r, const ScheduleTemplate& t) {
    int64_t N = g.node(r).shape.element_count();
    bool buf = need_buffer(r), gst = need_gstore(r);
    switch (t.scheme) {
      case CompositionScheme::KernelPacking:
      case CompositionScheme::ThreadComposition: {
        int64_t trip = ceil_div(N, T());
        auto [j, real] = begin_loop(trip);
        ExprP e = e_add(gt(), e_mul(j, e_const(T())));
        BExprP gd = guard_lt(e, N, trip * T());
        std::string val = emit_value(r, e, gd);
        store_result(r, val, e, j, gd, buf, gst);
        end_loop(real);
        break;
      }
      case CompositionScheme::WarpComposition: {
        if (t.op_class == OpClass::ExpensiveElementwise) {
          // one element per warp, computed by lane 0
          int64_t trip = ceil_div(N, W());
          auto [j, real] = begin_loop(trip);
          ExprP e = e_add(vwid, e_mul(j, e_const(W())));
          BExprP gd = b_and(guard_lt(e, N, trip * W()),
                            b_cmp(BExpr::Eq, vlane, e_const(0)));
          std::string val = emit_value(r, e, gd);
          store_result(r, val, e, j, gd, buf, gst);
          end_loop(real);
          break;
        }
        // row r -> warp r mod W, lanes stride the row
        int64_t rl = row_len_of(r), rows = N / rl;
        if (buf && rl > 1) throw EmitFail{"lane-strided values unreachable from lane 0"};
        int64_t rtrip = ceil_div(rows, W());
        auto [jr, real] = begin_loop(rtrip);
        ExprP row = e_add(vwid, e_mul(jr, e_const(W())));
        BExprP rg = guard_lt(row, rows, rtrip * W());
        int64_t ptrip = ceil_div(rl, dev.warp_size);
        auto [jp, preal] = begin_loop(ptrip);
        ExprP pos = e_add(vlane, e_mul(jp, e_const(dev.warp_size)));
        BExprP eg = b_and(rg, guard_lt(pos, rl, ptrip * dev.warp_size));
        ExprP e = e_add(e_mul(row, e_const(rl)), pos);
        std::string val = emit_value(r, e, eg);
        store_result(r, val, e, jr, eg, buf, gst);
        end_loop(preal);
        end_loop(real);
        break;
      }
      case CompositionScheme::BlockComposition: {
        if (t.op_class == OpClass::ExpensiveElementwise) {
          // one element per block, computed by thread 0, shared for reuse
          int64_t trip = ceil_div(N, ld.grid);
          auto [j, real] = begin_loop(trip);
          ExprP e = e_add(vb, e_mul(j, e_const(ld.grid)));
          BExprP gd = b_and(guard_lt(e, N, trip * ld.grid), b_cmp(BExpr::Eq, vt, e_const(0)));
          std::string val = emit_value(r, e, gd);
          if (buf) {
            Stmt s;
            s.kind = Stmt::SStore;
            s.idx = maybe_index(e_add(e_const(alloc.slots.at(r).offset), e_mul(j, e_const(4))));
            s.srcs = {val};
            s.guard = gd;
            push(std::move(s));
          }
          store_result(r, val, e, j, gd, false, gst);
          end_loop(real);
          if (buf) barrier();
          break;
        }
        // row r -> block r mod G, threads stride the row
        int64_t rl = row_len_of(r), rows = N / rl;
        int64_t rtrip = ceil_div(rows, ld.grid);
        auto [jr, real] = begin_loop(rtrip);
        ExprP row = e_add(vb, e_mul(jr, e_const(ld.grid)));
        BExprP rg = guard_lt(row, rows, rtrip * ld.grid);
        int64_t ptrip = ceil_div(rl, ld.block);
        auto [jp, preal] = begin_loop(ptrip);
        ExprP pos = e_add(vt, e_mul(jp, e_const(ld.block)));
        BExprP eg = b_and(rg, guard_lt(pos, rl, ptrip * ld.block));
        ExprP e = e_add(e_mul(row, e_const(rl)), pos);
        std::string val = emit_value(r, e, eg);
        if (buf) {
          // slot = (row / G) * rl + pos; row / G is exactly jr
          Stmt s;
          s.kind = Stmt::SStore;
          s.idx = maybe_index(e_add(e_const(alloc.slots.at(r).offset),
                                    e_mul(e_add(e_mul(jr, e_const(rl)), pos), e_const(4))));
          s.srcs = {val};
          s.guard = eg;
          push(std::move(s));
        }
        store_result(r, val, e, jr, eg, false, gst);
        end_loop(preal);
        end_loop(real);
        if (buf) barrier();
        break;
      }
    }
  }

  // (row, pos) -> linearized input element, via kept/reduced mixed radix
  ExprP reduce_input_index(const OpNode& n, const ExprP& row, const ExprP& pos) const {
    const TensorShape& in = g.node(n.operands[0]).shape;
    auto istr = in.strides();
    std::set<int> axes(n.attrs.axes.begin(), n.attrs.axes.end());
    std::vector<size_t> kept, red;
    for (size_t i = 0; i < in.dims.size(); ++i)
      (axes.count(static_cast<int>(i)) ? red : kept).push_back(i);
    ExprP e = e_const(0);
    int64_t kstride = 1, rstride = 1;
    for (size_t i = kept.size(); i-- > 0;) {
      e = e_add(e, e_mul(e_mod(e_div(row, e_const(kstride)), e_const(in.dims[kept[i]])),
                         e_const(istr[kept[i]])));
      kstride *= in.dims[kept[i]];
    }
    for (size_t i = red.size(); i-- > 0;) {
      e = e_add(e, e_mul(e_mod(e_div(pos, e_const(rstride)), e_const(in.dims[red[i]])),
                         e_const(istr[red[i]])));
      rstride *= in.dims[red[i]];
    }
    return e;
  }

  void emit_fconst(const std::string& reg, double v) {
    Stmt s;
    s.kind = Stmt::FConst;
    s.dst = reg;
    s.cval = v;
    push(std::move(s));
  }

  void emit_accum(const std::string& op, const std::string& acc, const std::string& val,
                  const BExprP& gd) {
    Stmt s;
    s.kind = Stmt::Accum;
    s.op = op;
    s.dst = acc;
    s.srcs = {val};
    s.guard = gd;
    push(std::move(s));
  }

  void emit_reduction_group(int r, const ScheduleTemplate& t) {
    const OpNode& n = g.node(r);
    int iv = n.operands[0];
    int64_t R = n.shape.element_count();
    int64_t L = g.node(iv).shape.element_count() / R;
    bool buf = need_buffer(r), gst = need_gstore(r);
    std::string op = n.kind == OpKind::ReduceSum ? "sum" : "max";
    std::string fold = n.kind == OpKind::ReduceSum ? "add" : "max";
    double ident =
        n.kind == OpKind::ReduceSum ? 0.0 : -std::numeric_limits<double>::infinity();

    switch (t.scheme) {
      case CompositionScheme::KernelPacking:
      case CompositionScheme::ThreadComposition: {
        int64_t trip = ceil_div(R, T());
        auto [jr, real] = begin_loop(trip);
        ExprP row = e_add(gt(), e_mul(jr, e_const(T())));
        BExprP rg = guard_lt(row, R, trip * T());
        std::string acc = fresh("acc");
        emit_fconst(acc, ident);
        auto [jp, preal] = begin_loop(L);
        std::string val = emit_value(iv, reduce_input_index(n, row, jp), rg);
        emit_accum(op, acc, val, rg);
        end_loop(preal);
        store_result(r, acc, row, jr, rg, buf, gst);
        end_loop(real);
        break;
      }
      case CompositionScheme::WarpComposition: {
        int64_t trip = ceil_div(R, W());
        auto [jr, real] = begin_loop(trip);
        ExprP row = e_add(vwid, e_mul(jr, e_const(W())));
        BExprP rg = guard_lt(row, R, trip * W());
        std::string acc = fresh("acc");
        emit_fconst(acc, ident);
        int64_t ptrip = ceil_div(L, dev.warp_size);
        auto [jp, preal] = begin_loop(ptrip);
        ExprP pos = e_add(vlane, e_mul(jp, e_const(dev.warp_size)));
        BExprP eg = b_and(rg, guard_lt(pos, L, ptrip * dev.warp_size));
        std::string val = emit_value(iv, reduce_input_index(n, row, pos), eg);
        emit_accum(op, acc, val, eg);
        end_loop(preal);
        std::string wr = fresh("t");
        Stmt s;
        s.kind = Stmt::WarpReduce;
        s.op = op;
        s.dst = wr;
        s.srcs = {acc};
        push(std::move(s));
        store_result(r, wr, row, jr, b_and(rg, b_cmp(BExpr::Eq, vlane, e_const(0))), false,
                     gst);
        if (buf) store_result(r, wr, row, jr, rg, true, false);
        end_loop(real);
        break;
      }
      case CompositionScheme::BlockComposition: {
        int64_t trip = ceil_div(R, ld.grid);
        auto [jr, real] = begin_loop(trip);
        ExprP row = e_add(vb, e_mul(jr, e_const(ld.grid)));
        BExprP rg = guard_lt(row, R, trip * ld.grid);
        std::string acc = fresh("acc");
        emit_fconst(acc, ident);
        int64_t ptrip = ceil_div(L, ld.block);
        auto [jp, preal] = begin_loop(ptrip);
        ExprP pos = e_add(vt, e_mul(jp, e_const(ld.block)));
        BExprP eg = b_and(rg, guard_lt(pos, L, ptrip * ld.block));
        std::string val = emit_value(iv, reduce_input_index(n, row, pos), eg);
        emit_accum(op, acc, val, eg);
        end_loop(preal);
        // stage per-thread partials, then power-of-two tree fold in shared
        ExprP mine = e_add(e_const(scratch_offset), e_mul(vt, e_const(4)));
        {
          Stmt s;
          s.kind = Stmt::SStore;
          s.idx = maybe_index(mine);
          s.srcs = {acc};
          s.guard = rg;
          push(std::move(s));
        }
        barrier();
        for (int64_t sdist = ld.block / 2; sdist >= 1; sdist /= 2) {
          BExprP fg = b_and(rg, b_cmp(BExpr::Lt, vt, e_const(sdist)));
          std::string a = fresh("t"), b = fresh("t"), c = fresh("t");
          Stmt la;
          la.kind = Stmt::SLoad;
          la.dst = a;
          la.idx = maybe_index(mine);
          la.guard = fg;
          push(std::move(la));
          Stmt lb;
          lb.kind = Stmt::SLoad;
          lb.dst = b;
          lb.idx = maybe_index(
              e_add(e_const(scratch_offset), e_mul(e_add(vt, e_const(sdist)), e_const(4))));
          lb.guard = fg;
          push(std::move(lb));
          Stmt fo;
          fo.kind = Stmt::FOp;
          fo.op = fold;
          fo.dst = c;
          fo.srcs = {a, b};
          push(std::move(fo));
          Stmt sc;
          sc.kind = Stmt::SStore;
          sc.idx = maybe_index(mine);
          sc.srcs = {c};
          sc.guard = fg;
          push(std::move(sc));
          barrier();
        }
        BExprP t0 = b_and(rg, b_cmp(BExpr::Eq, vt, e_const(0)));
        std::string res = fresh("t");
        {
          Stmt s;
          s.kind = Stmt::SLoad;
          s.dst = res;
          s.idx = e_const(scratch_offset);
          s.guard = t0;
          push(std::move(s));
        }
        if (buf) {
          Stmt s;
          s.kind = Stmt::SStore;
          s.idx = maybe_index(e_add(e_const(alloc.slots.at(r).offset), e_mul(jr, e_const(4))));
          s.srcs = {res};
          s.guard = t0;
          push(std::move(s));
        }
        store_result(r, res, row, jr, t0, false, gst);
        barrier();
        end_loop(real);
        break;
      }
    }
  }

  void run() {
    // plan shared memory first: block-scheme roots that feed other groups
    std::map<int, int64_t> requests;
    bool need_scratch = false;
    for (int r : grouping.group_roots()) {
      const ScheduleTemplate& t = template_by_id(tpl.at(r));
      if (t.output_placement == OutputPlacement::SharedMemory) {
        if (classify_op(g.node(r)) == OpClass::Reduction) need_scratch = true;
        // staged as 4-byte value slots regardless of tensor dtype
        if (need_buffer(r)) {
          int64_t rl = row_len_of(r);
          int64_t rows = g.node(r).shape.element_count() / rl;
          requests[r] = ceil_div(rows, ld.grid) * rl * 4;
        }
      }
    }
    alloc = allocate_shared_memory(p, requests, g, &grouping);
    scratch_offset = need_scratch ? alloc.total : -1;
    prog.shmem_bytes = alloc.total + (need_scratch ? int64_t(ld.block) * 4 : 0);

    auto pos = topo_positions(g);
    std::vector<int> order = grouping.group_roots();
    std::sort(order.begin(), order.end(), [&](int a, int b) { return pos[a] < pos[b]; });
    for (int r : order) {
      current_root = r;
      const ScheduleTemplate& t = template_by_id(tpl.at(r));
      comment("group " + g.node(r).name + " " + t.id);
      if (classify_op(g.node(r)) == OpClass::Reduction)
        emit_reduction_group(r, t);
      else
        emit_elementwise_group(r, t);
      emitted_roots.insert(r);
    }
  }
};

}  // namespace

std::vector<int> Grouping::group_roots() const {
  std::set<int> s(sub_roots.begin(), sub_roots.end());
  s.insert(roots.begin(), roots.end());
  return {s.begin(), s.end()};
}

std::vector<Grouping> enumerate_groupings(const FusionPattern& p, const CompGraph& g, int cap) {
  std::vector<int> outs = external_outputs(p, g);
  std::set<int> out_set(outs.begin(), outs.end());
  std::vector<int> forced, optional;
  for (int v : p.vertices) {
    OpClass c = classify_op(g.node(v));
    if (c == OpClass::Reduction)
      forced.push_back(v);
    else if (c == OpClass::ExpensiveElementwise && !out_set.count(v))
      optional.push_back(v);
  }
  // enumerate the largest tensors first; overflow defaults to non-sub-root
  std::stable_sort(optional.begin(), optional.end(), [&](int a, int b) {
    return g.node(a).shape.byte_size() > g.node(b).shape.byte_size();
  });
  int free_bits = 0;
  while ((1 << (free_bits + 1)) <= cap && free_bits < static_cast<int>(optional.size()))
    ++free_bits;

  auto pos = topo_positions(g);
  std::set<int> in_pat(p.vertices.begin(), p.vertices.end());
  auto consumers = g.consumer_lists();
  std::vector<int> rev = p.vertices;
  std::sort(rev.begin(), rev.end(), [&](int a, int b) { return pos[a] > pos[b]; });

  std::vector<Grouping> result;
  for (int mask = 0; mask < (1 << free_bits); ++mask) {
    Grouping gr;
    gr.sub_roots = forced;
    for (int i = 0; i < free_bits; ++i)
      if (mask & (1 << i)) gr.sub_roots.push_back(optional[static_cast<size_t>(i)]);
    std::sort(gr.sub_roots.begin(), gr.sub_roots.end());
    gr.roots = outs;
    std::set<int> root_set(gr.sub_roots.begin(), gr.sub_roots.end());
    root_set.insert(outs.begin(), outs.end());
    for (int v : rev) {
      if (root_set.count(v)) {
        gr.group_of[v] = v;
        continue;
      }
      int best = -1;
      for (int c : consumers[static_cast<size_t>(v)])
        if (in_pat.count(c) && (best == -1 || pos[c] < pos[best])) best = c;
      gr.group_of[v] = gr.group_of.at(best);
    }
    result.push_back(std::move(gr));
  }
  return result;
}

std::map<int, std::string> propagate_schedules(const Grouping& grouping,
                                               const std::map<int, std::string>& root_choice,
                                               const CompGraph&) {
  std::map<int, std::string> out;
  for (const auto& [v, root] : grouping.group_of) out[v] = root_choice.at(root);
  return out;
}

std::vector<LaunchDims> enumerate_launch_dims(const FusionPattern& p, const CompGraph& g,
                                              const DeviceSpec& dev) {
  int64_t extent = 1;
  for (int v : p.vertices) {
    extent = std::max(extent, g.node(v).shape.element_count());
    for (int o : g.node(v).operands)
      extent = std::max(extent, g.node(o).shape.element_count());
  }
  std::vector<LaunchDims> out;
  for (int b : {64, 128, 256, 512, 1024}) {
    if (b > dev.max_threads_per_block) continue;
    int grid = static_cast<int>(
        std::clamp<int64_t>(ceil_div(extent, b), 1, int64_t(8) * dev.sm_count));
    LaunchDims ld{grid, b};
    if (std::find(out.begin(), out.end(), ld) == out.end()) out.push_back(ld);
  }
  return out;
}

AllocationMap allocate_shared_memory(const FusionPattern& p,
                                     const std::map<int, int64_t>& requests, const CompGraph& g,
                                     const Grouping* grouping) {
  auto pos = topo_positions(g);
  std::set<int> in_pat(p.vertices.begin(), p.vertices.end());
  auto consumers = g.consumer_lists();
  // last point at which a buffer is still read: its consumers' emission slots
  auto last_read = [&](int v) {
    int last = pos[v];
    for (int c : consumers[static_cast<size_t>(v)]) {
      if (!in_pat.count(c)) continue;
      int reader = grouping ? grouping->group_of.at(c) : c;
      last = std::max(last, pos[reader]);
    }
    return last;
  };

  std::vector<int> order;
  for (const auto& [v, sz] : requests) order.push_back(v);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return pos[a] < pos[b]; });

  // place each buffer at the lowest byte offset whose range avoids every
  // buffer still live when this one comes alive
  AllocationMap out;
  for (int v : order) {
    int64_t req = requests.at(v);
    struct Busy {
      int64_t lo, hi;
    };
    std::vector<Busy> busy;
    for (const auto& [u, slot] : out.slots)
      if (last_read(u) >= pos[v]) busy.push_back({slot.offset, slot.offset + slot.size});
    std::sort(busy.begin(), busy.end(), [](const Busy& a, const Busy& b) { return a.lo < b.lo; });
    int64_t off = 0;
    for (const auto& b : busy) {
      if (off + req <= b.lo) break;  // gap fits
      off = std::max(off, b.hi);
    }
    int donor = -1;  // most recent dead buffer whose extent we take over
    for (const auto& [u, slot] : out.slots)
      if (last_read(u) < pos[v] && slot.offset < off + req && off < slot.offset + slot.size)
        if (donor < 0 || pos[u] > pos[donor]) donor = u;
    out.slots[v] = {off, req, donor};
    out.total = std::max(out.total, off + req);
  }
  return out;
}

int estimate_register_usage(const StitchedProgram& prog, int overhead) {
  std::map<std::string, int64_t> trips;  // loop var -> trip count
  for (const auto& s : prog.stmts)
    if (s.kind == Stmt::Loop) trips[s.loop_var] = eval(s.idx, EvalEnv{nullptr, nullptr});

  struct Live {
    int first = -1, last = -1;
    int64_t width = 1;
  };
  std::map<std::string, Live> regs;
  auto touch = [&](const std::string& r, int i) {
    Live& l = regs[r];
    if (l.first < 0) l.first = i;
    l.last = i;
  };
  std::function<void(const ExprP&, int)> touch_expr = [&](const ExprP& e, int i) {
    if (!e) return;
    if (e->kind == Expr::Reg) touch(e->name, i);
    touch_expr(e->a, i);
    touch_expr(e->b, i);
  };
  std::function<void(const BExprP&, int)> touch_bexpr = [&](const BExprP& e, int i) {
    if (!e) return;
    if (e->kind == BExpr::And) {
      touch_bexpr(e->a, i);
      touch_bexpr(e->b, i);
    } else {
      touch_expr(e->lhs, i);
      touch_expr(e->rhs, i);
    }
  };
  for (int i = 0; i < static_cast<int>(prog.stmts.size()); ++i) {
    const Stmt& s = prog.stmts[static_cast<size_t>(i)];
    if (!s.dst.empty()) touch(s.dst, i);
    for (const auto& r : s.srcs) touch(r, i);
    touch_expr(s.idx, i);
    touch_expr(s.src_slot, i);
    touch_bexpr(s.guard, i);
    if (s.kind == Stmt::RegSet && s.dst_slot) {
      touch_expr(s.dst_slot, i);
      if (s.dst_slot->kind == Expr::Var) {
        auto it = trips.find(s.dst_slot->name);
        if (it != trips.end()) regs[s.dst].width = std::max(regs[s.dst].width, it->second);
      }
    }
  }
  std::map<int, int64_t> delta;
  for (const auto& [name, l] : regs) {
    delta[l.first] += l.width;
    delta[l.last + 1] -= l.width;
  }
  int64_t live = 0, peak = 0;
  for (const auto& [i, d] : delta) {
    live += d;
    peak = std::max(peak, live);
  }
  return overhead + static_cast<int>(peak);
}

std::map<std::string, int64_t> count_instructions(const StitchedProgram& prog) {
  std::map<std::string, int64_t> hist;
  int64_t mult = 1;
  std::vector<int64_t> stack;
  for (const auto& s : prog.stmts) {
    switch (s.kind) {
      case Stmt::Loop: {
        int64_t trip = eval(s.idx, EvalEnv{nullptr, nullptr});
        stack.push_back(trip);
        mult *= trip;
        break;
      }
      case Stmt::EndLoop:
        mult /= stack.back();
        stack.pop_back();
        break;
      case Stmt::ISet: hist["index_calc"] += mult; break;
      case Stmt::FOp: hist[s.op] += mult; break;
      case Stmt::SLoad:
      case Stmt::SStore: hist["shared_access"] += mult; break;
      case Stmt::Shuffle: hist["shuffle"] += mult; break;
      case Stmt::WarpReduce: hist["shuffle"] += 5 * mult; break;  // log2(32) rounds
      case Stmt::Accum: hist["reduce_step"] += mult; break;
      default: break;  // moves, global traffic, barriers carry no issue cost here
    }
  }
  return hist;
}

namespace {

struct Candidate {
  double cycles = 0;
  int64_t shmem = 0;
  int block = 0;
  std::string sched_key;

  bool better_than(const Candidate& o) const {
    if (cycles != o.cycles) return cycles < o.cycles;
    if (shmem != o.shmem) return shmem < o.shmem;
    if (block != o.block) return block < o.block;
    return sched_key < o.sched_key;
  }
};

}  // namespace

std::optional<KernelPlan> plan_kernel(const FusionPattern& p, const CompGraph& g,
                                      const MachineModel& m, const PlanConstraints* constraints) {
  if (p.vertices.empty() ||
      static_cast<int>(p.vertices.size()) > m.search.max_pattern_size)
    return std::nullopt;
  for (int v : p.vertices) {
    if (v < 0 || v >= g.num_nodes() || !is_fusable(g.node(v))) return std::nullopt;
    const OpNode& n = g.node(v);
    if (n.kind == OpKind::Gather &&
        std::binary_search(p.vertices.begin(), p.vertices.end(), n.operands[0]))
      return std::nullopt;  // data-dependent producer index is unschedulable
  }
  if (contraction_creates_cycle(g, p)) return std::nullopt;

  std::optional<KernelPlan> best;
  Candidate best_cand;
  int evaluated = 0;

  for (const Grouping& grouping : enumerate_groupings(p, g, m.search.grouping_cap)) {
    std::vector<int> roots = grouping.group_roots();
    std::vector<std::vector<const ScheduleTemplate*>> choices;
    bool viable = true;
    for (int r : roots) {
      std::vector<const ScheduleTemplate*> c;
      for (const auto& t : schedules_for(classify_op(g.node(r))))
        if (!constraints || !constraints->force_scheme ||
            t.scheme == *constraints->force_scheme ||
            (*constraints->force_scheme == CompositionScheme::ThreadComposition &&
             t.scheme == CompositionScheme::KernelPacking))
          c.push_back(&t);
      if (c.empty()) viable = false;
      choices.push_back(std::move(c));
    }
    if (!viable) continue;

    for (const LaunchDims& ld : enumerate_launch_dims(p, g, m.dev)) {
      std::vector<size_t> odo(roots.size(), 0);
      for (;;) {
        if (++evaluated > m.search.candidate_cap) return best;
        std::map<int, std::string> tpl;
        std::string sched_key;
        for (size_t i = 0; i < roots.size(); ++i) {
          tpl[roots[i]] = choices[i][odo[i]]->id;
          sched_key += choices[i][odo[i]]->id + ";";
        }
        Emitter em(g, p, grouping, tpl, ld, m.dev);
        bool ok = true;
        try {
          em.run();
        } catch (const EmitFail&) {
          ok = false;
        }
        if (ok) {
          int regs = estimate_register_usage(em.prog, m.costs.register_overhead);
          auto occ = occupancy(ld, regs, em.prog.shmem_bytes, m.dev);
          if (occ) {
            auto hist = count_instructions(em.prog);
            double waves = wave_count(double(ld.total_threads()) / m.dev.warp_size, *occ, m.dev);
            if (m.costs.ceil_waves) waves = std::ceil(waves);
            double cycles = waves * warp_latency(hist, m.cpi);
            Candidate cand{cycles, em.prog.shmem_bytes, ld.block, sched_key};
            if (!best || cand.better_than(best_cand)) {
              best_cand = cand;
              KernelPlan k;
              k.pattern = p;
              k.grouping = grouping;
              k.per_op_schedule = propagate_schedules(grouping, tpl, g);
              k.launch = ld;
              k.shmem_alloc = em.alloc;
              k.scratch_bytes = em.prog.shmem_bytes - em.alloc.total;
              k.regs_per_thread = regs;
              k.occupancy_value = *occ;
              k.estimated_cycles = cycles;
              k.instr_histogram = hist;
              k.boundaries = em.boundaries;
              k.program = std::move(em.prog);
              best = std::move(k);
            }
            if (constraints && constraints->first_feasible) return best;
          }
        }
        // advance odometer
        size_t i = 0;
        while (i < odo.size() && ++odo[i] == choices[i].size()) odo[i++] = 0;
        if (i == odo.size()) break;
      }
    }
  }
  return best;
}

std::string emit_kernel_text(const KernelPlan& k) { return emit_program_text(k.program); }

}  // namespace stitch
