#include "stitch/program.hpp"

#include <sstream>
#include <stdexcept>

namespace stitch {

namespace {

void append_guard(std::ostringstream& os, const BExprP& g) {
  if (g) os << " if " << to_string(g);
}

}  // namespace

std::string emit_program_text(const StitchedProgram& p) {
  std::ostringstream os;
  os << "stitched v1\n";
  os << "launch grid " << p.launch.grid << " block " << p.launch.block << "\n";
  os << "shmem " << p.shmem_bytes << "\n";
  for (const auto& t : p.inputs) os << "in " << t.name << " " << t.shape.str() << "\n";
  for (const auto& t : p.outputs) os << "out " << t.name << " " << t.shape.str() << "\n";
  os << "body\n";
  int depth = 0;
  for (const auto& s : p.stmts) {
    if (s.kind == Stmt::EndLoop) --depth;
    for (int i = 0; i <= depth; ++i) os << "  ";
    switch (s.kind) {
      case Stmt::Loop:
        os << "loop " << s.loop_var << " " << to_string(s.idx);
        ++depth;
        break;
      case Stmt::EndLoop: os << "endloop"; break;
      case Stmt::ISet:
        os << "iset " << s.dst << " = " << to_string(s.idx);
        append_guard(os, s.guard);
        break;
      case Stmt::FConst: {
        std::ostringstream v;
        v.precision(17);
        v << s.cval;
        os << "fconst " << s.dst << " = " << v.str();
        break;
      }
      case Stmt::FMove: os << "fmove " << s.dst << " = " << s.srcs[0]; break;
      case Stmt::FOp: {
        os << "fop " << s.op << " " << s.dst << " =";
        for (const auto& a : s.srcs) os << " " << a;
        break;
      }
      case Stmt::GLoad:
        os << "gload " << s.dst << " = " << s.tensor << "[" << to_string(s.idx) << "]";
        append_guard(os, s.guard);
        break;
      case Stmt::GStore:
        os << "gstore " << s.tensor << "[" << to_string(s.idx) << "] = " << s.srcs[0];
        append_guard(os, s.guard);
        break;
      case Stmt::SLoad:
        os << "shared_load " << s.dst << " = shm[" << to_string(s.idx) << "]";
        append_guard(os, s.guard);
        break;
      case Stmt::SStore:
        os << "shared_store shm[" << to_string(s.idx) << "] = " << s.srcs[0];
        append_guard(os, s.guard);
        break;
      case Stmt::RegSet:
        os << "regset " << s.dst << "[" << to_string(s.dst_slot) << "] = " << s.srcs[0];
        append_guard(os, s.guard);
        break;
      case Stmt::RegRead:
        os << "regread " << s.dst << " = " << s.srcs[0] << "[" << to_string(s.src_slot) << "]";
        break;
      case Stmt::Shuffle:
        os << "shuffle_from_lane0 " << s.dst << " = " << s.srcs[0] << "["
           << to_string(s.src_slot) << "]";
        break;
      case Stmt::WarpReduce:
        os << "warp_reduce " << s.op << " " << s.dst << " = " << s.srcs[0];
        break;
      case Stmt::Accum:
        os << "accum " << s.op << " " << s.dst << " = " << s.srcs[0];
        append_guard(os, s.guard);
        break;
      case Stmt::Barrier: os << "barrier"; break;
      case Stmt::Comment: os << "# " << s.text; break;
    }
    os << "\n";
  }
  return os.str();
}

namespace {

struct LineParser {
  std::vector<std::string> toks;
  int lineno;

  [[noreturn]] void fail(const std::string& m) const {
    throw std::runtime_error("program line " + std::to_string(lineno) + ": " + m);
  }
  const std::string& at(size_t i) const {
    if (i >= toks.size()) fail("missing token");
    return toks[i];
  }
  void expect(size_t i, const char* t) const {
    if (at(i) != t) fail(std::string("expected '") + t + "', got '" + at(i) + "'");
  }
};

std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

// split "name[expr]" into (name, expr)
std::pair<std::string, ExprP> bracketed(const LineParser& lp, const std::string& tok) {
  size_t lb = tok.find('[');
  if (lb == std::string::npos || tok.back() != ']') lp.fail("expected name[expr]: " + tok);
  return {tok.substr(0, lb), parse_expr(tok.substr(lb + 1, tok.size() - lb - 2))};
}

// consumes optional trailing "if <bexpr>"
BExprP take_guard(LineParser& lp, size_t from) {
  if (lp.toks.size() <= from) return nullptr;
  if (lp.toks[from] != "if") lp.fail("unexpected trailing token: " + lp.toks[from]);
  if (lp.toks.size() != from + 2) lp.fail("guard must be a single expression token");
  return parse_bexpr(lp.toks[from + 1]);
}

}  // namespace

StitchedProgram parse_program_text(const std::string& text) {
  StitchedProgram p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool in_body = false;
  bool saw_header = false;
  int depth = 0;
  while (std::getline(in, line)) {
    ++lineno;
    LineParser lp{tokens(line), lineno};
    if (lp.toks.empty()) continue;
    const std::string& head = lp.toks[0];
    if (head == "#" || head[0] == '#') {
      if (in_body) {
        Stmt s;
        s.kind = Stmt::Comment;
        size_t pos = line.find('#');
        s.text = line.substr(std::min(line.size(), pos + 2));
        p.stmts.push_back(std::move(s));
      }
      continue;
    }
    if (!in_body) {
      if (head == "stitched") {
        lp.expect(1, "v1");
        saw_header = true;
      } else if (head == "launch") {
        lp.expect(1, "grid");
        p.launch.grid = std::stoi(lp.at(2));
        lp.expect(3, "block");
        p.launch.block = std::stoi(lp.at(4));
      } else if (head == "shmem") {
        p.shmem_bytes = std::stoll(lp.at(1));
      } else if (head == "in" || head == "out") {
        TensorBinding b;
        b.name = lp.at(1);
        const std::string& sh = lp.at(2);
        size_t lb = sh.find('[');
        if (lb == std::string::npos) lp.fail("bad shape: " + sh);
        auto dt = dtype_from_name(sh.substr(0, lb));
        if (!dt) lp.fail("bad dtype in shape: " + sh);
        b.shape.dtype = *dt;
        std::string dims = sh.substr(lb + 1, sh.size() - lb - 2);
        std::istringstream ds(dims);
        std::string d;
        while (std::getline(ds, d, ','))
          if (!d.empty()) b.shape.dims.push_back(std::stoll(d));
        (head == "in" ? p.inputs : p.outputs).push_back(std::move(b));
      } else if (head == "body") {
        in_body = true;
      } else {
        lp.fail("unexpected header line: " + head);
      }
      continue;
    }
    Stmt s;
    if (head == "loop") {
      s.kind = Stmt::Loop;
      s.loop_var = lp.at(1);
      s.idx = parse_expr(lp.at(2));
      ++depth;
    } else if (head == "endloop") {
      s.kind = Stmt::EndLoop;
      if (--depth < 0) lp.fail("endloop without loop");
    } else if (head == "iset") {
      s.kind = Stmt::ISet;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      s.idx = parse_expr(lp.at(3));
      s.guard = take_guard(lp, 4);
    } else if (head == "fconst") {
      s.kind = Stmt::FConst;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      s.cval = std::stod(lp.at(3));
    } else if (head == "fmove") {
      s.kind = Stmt::FMove;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      s.srcs = {lp.at(3)};
    } else if (head == "fop") {
      s.kind = Stmt::FOp;
      s.op = lp.at(1);
      s.dst = lp.at(2);
      lp.expect(3, "=");
      for (size_t i = 4; i < lp.toks.size(); ++i) s.srcs.push_back(lp.toks[i]);
      if (s.srcs.empty()) lp.fail("fop needs operands");
    } else if (head == "gload") {
      s.kind = Stmt::GLoad;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      auto [t, e] = bracketed(lp, lp.at(3));
      s.tensor = t;
      s.idx = e;
      s.guard = take_guard(lp, 4);
    } else if (head == "gstore") {
      s.kind = Stmt::GStore;
      auto [t, e] = bracketed(lp, lp.at(1));
      s.tensor = t;
      s.idx = e;
      lp.expect(2, "=");
      s.srcs = {lp.at(3)};
      s.guard = take_guard(lp, 4);
    } else if (head == "shared_load") {
      s.kind = Stmt::SLoad;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      auto [t, e] = bracketed(lp, lp.at(3));
      if (t != "shm") lp.fail("shared_load reads shm[...]");
      s.idx = e;
      s.guard = take_guard(lp, 4);
    } else if (head == "shared_store") {
      s.kind = Stmt::SStore;
      auto [t, e] = bracketed(lp, lp.at(1));
      if (t != "shm") lp.fail("shared_store writes shm[...]");
      s.idx = e;
      lp.expect(2, "=");
      s.srcs = {lp.at(3)};
      s.guard = take_guard(lp, 4);
    } else if (head == "regset") {
      s.kind = Stmt::RegSet;
      auto [r, e] = bracketed(lp, lp.at(1));
      s.dst = r;
      s.dst_slot = e;
      lp.expect(2, "=");
      s.srcs = {lp.at(3)};
      s.guard = take_guard(lp, 4);
    } else if (head == "regread" || head == "shuffle_from_lane0") {
      s.kind = head == "regread" ? Stmt::RegRead : Stmt::Shuffle;
      s.dst = lp.at(1);
      lp.expect(2, "=");
      auto [r, e] = bracketed(lp, lp.at(3));
      s.srcs = {r};
      s.src_slot = e;
    } else if (head == "warp_reduce") {
      s.kind = Stmt::WarpReduce;
      s.op = lp.at(1);
      s.dst = lp.at(2);
      lp.expect(3, "=");
      s.srcs = {lp.at(4)};
    } else if (head == "accum") {
      s.kind = Stmt::Accum;
      s.op = lp.at(1);
      s.dst = lp.at(2);
      lp.expect(3, "=");
      s.srcs = {lp.at(4)};
      s.guard = take_guard(lp, 5);
    } else if (head == "barrier") {
      s.kind = Stmt::Barrier;
    } else {
      lp.fail("unknown statement: " + head);
    }
    p.stmts.push_back(std::move(s));
  }
  if (!saw_header) throw std::runtime_error("missing 'stitched v1' header");
  if (depth != 0) throw std::runtime_error("unbalanced loop/endloop");
  return p;
}

}  // namespace stitch
