#include "stitch/parser.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace stitch {

namespace {

struct Statement {
  std::string text;
  int line;
};

// split on newlines and ';', strip '#' comments, keep 1-based line numbers
std::vector<Statement> split_statements(const std::string& text) {
  std::vector<Statement> out;
  int line = 1;
  std::string cur;
  int cur_line = 1;
  bool in_comment = false;
  auto flush = [&]() {
    size_t b = cur.find_first_not_of(" \t\r");
    if (b != std::string::npos) {
      size_t e = cur.find_last_not_of(" \t\r");
      out.push_back({cur.substr(b, e - b + 1), cur_line});
    }
    cur.clear();
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      in_comment = false;
      ++line;
      cur_line = line;
    } else if (c == '#') {
      in_comment = true;
    } else if (c == ';' && !in_comment) {
      flush();
      cur_line = line;
    } else if (!in_comment) {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

struct Cursor {
  const std::string& s;
  size_t i = 0;
  int line;
  void skip_ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  bool eat(char c) {
    skip_ws();
    if (i < s.size() && s[i] == c) {
      ++i;
      return true;
    }
    return false;
  }
  char peek() {
    skip_ws();
    return i < s.size() ? s[i] : '\0';
  }
  std::string ident() {
    skip_ws();
    size_t b = i;
    while (i < s.size() && ident_char(s[i])) ++i;
    if (i == b) throw ParseError("syntax", "expected identifier", line, static_cast<int>(i) + 1);
    return s.substr(b, i - b);
  }
  // token up to whitespace / ')' / ',' / ':'; commas inside [...] are kept
  // so shapes and attr lists survive intact
  std::string token() {
    skip_ws();
    size_t b = i;
    int depth = 0;
    while (i < s.size()) {
      char c = s[i];
      if (c == '[') ++depth;
      if (c == ']' && depth > 0) --depth;
      if (depth == 0 && (c == ' ' || c == '\t' || c == ')' || c == ',' || c == ':')) break;
      ++i;
    }
    return s.substr(b, i - b);
  }
};

std::vector<int> parse_int_list(const std::string& v, int line) {
  std::vector<int> out;
  std::string item;
  std::string body = v;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') throw ParseError("syntax", "unterminated attr list", line, 0);
    body = body.substr(1, body.size() - 2);
  }
  std::istringstream is(body);
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ParseError("syntax", "bad integer in attr: " + item, line, 0);
    }
  }
  return out;
}

void apply_attr(OpAttrs& a, const std::string& key, const std::string& val, int line) {
  if (key == "axes" || key == "axis")
    a.axes = parse_int_list(val, line);
  else if (key == "dims")
    a.dims = parse_int_list(val, line);
  else if (key == "perm")
    a.perm = parse_int_list(val, line);
  else if (key == "starts")
    a.starts = parse_int_list(val, line);
  else if (key == "limits")
    a.limits = parse_int_list(val, line);
  else if (key == "value") {
    try {
      a.value = std::stod(val);
    } catch (...) {
      throw ParseError("syntax", "bad constant value: " + val, line, 0);
    }
  } else {
    throw ParseError("syntax", "unknown attribute: " + key, line, 0);
  }
}

// "f32[4,8]" -> shape
std::optional<TensorShape> parse_shape_token(const std::string& tok, int line) {
  size_t lb = tok.find('[');
  if (lb == std::string::npos || tok.back() != ']') return std::nullopt;
  auto dt = dtype_from_name(tok.substr(0, lb));
  if (!dt) return std::nullopt;
  TensorShape sh;
  sh.dtype = *dt;
  std::string body = tok.substr(lb + 1, tok.size() - lb - 2);
  std::istringstream is(body);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    try {
      sh.dims.push_back(std::stoll(item));
    } catch (...) {
      throw ParseError("syntax", "bad dim in shape: " + item, line, 0);
    }
    if (sh.dims.back() < 1) throw ParseError("shape", "dims must be >= 1", line, 0);
  }
  return sh;
}

}  // namespace

CompGraph parse_graph(const std::string& text) {
  CompGraph g;
  auto stmts = split_statements(text);
  if (stmts.empty()) throw ParseError("empty", "graph file has no statements", 1, 1);
  for (const auto& st : stmts) {
    Cursor c{st.text, 0, st.line};
    if (st.text.rfind("output", 0) == 0 &&
        (st.text.size() == 6 || !ident_char(st.text[6]))) {
      c.i = 6;
      std::string name = c.ident();
      auto it = g.by_name.find(name);
      if (it == g.by_name.end())
        throw ParseError("unresolved-operand", "output references undefined id: " + name, st.line, 1);
      if (!g.is_output(it->second)) g.outputs.push_back(it->second);
      continue;
    }
    std::string lhs = c.ident();
    if (!c.eat('='))
      throw ParseError("syntax", "expected '=' after " + lhs, st.line, static_cast<int>(c.i) + 1);
    if (g.by_name.count(lhs))
      throw ParseError("duplicate-id", "redefinition of " + lhs, st.line, 1);
    std::string head = c.ident();
    auto kind = kind_from_name(head);
    if (!kind) {
      // alias form `x = y`: marks y as a graph output
      auto it = g.by_name.find(head);
      if (it != g.by_name.end() && c.peek() == '\0') {
        if (!g.is_output(it->second)) g.outputs.push_back(it->second);
        continue;
      }
      throw ParseError("unknown-op", "unknown op kind: " + head, st.line, 1);
    }
    OpNode n;
    n.name = lhs;
    n.kind = *kind;
    std::optional<TensorShape> declared;
    if (c.eat('(')) {
      if (!c.eat(')')) {
        do {
          std::string item = c.ident();
          if (c.peek() == '=') {
            c.eat('=');
            std::string val = c.token();
            apply_attr(n.attrs, item, val, st.line);
          } else {
            auto it = g.by_name.find(item);
            if (it == g.by_name.end())
              throw ParseError("unresolved-operand", "undefined operand: " + item, st.line,
                               static_cast<int>(c.i) + 1);
            n.operands.push_back(it->second);
          }
        } while (c.eat(','));
        if (!c.eat(')'))
          throw ParseError("syntax", "expected ')'", st.line, static_cast<int>(c.i) + 1);
      }
    }
    // trailing attrs / ':' / shape
    while (c.peek() != '\0') {
      if (c.eat(':')) continue;
      std::string tok = c.token();
      if (tok.empty()) break;
      size_t eq = tok.find('=');
      auto sh = parse_shape_token(tok, st.line);
      if (sh) {
        declared = *sh;
      } else if (eq != std::string::npos) {
        apply_attr(n.attrs, tok.substr(0, eq), tok.substr(eq + 1), st.line);
      } else {
        throw ParseError("syntax", "unexpected token: " + tok, st.line, 0);
      }
    }
    std::vector<TensorShape> opshapes;
    for (int o : n.operands) opshapes.push_back(g.node(o).shape);
    std::string err;
    auto shape =
        infer_shape(n.kind, opshapes, n.attrs, declared ? &*declared : nullptr, &err);
    if (!shape) throw ParseError("shape-mismatch", lhs + ": " + err, st.line, 1);
    if (declared && !(*declared == *shape))
      throw ParseError("shape-mismatch", lhs + ": declared shape disagrees with shape rule",
                       st.line, 1);
    n.shape = *shape;
    n.id = g.num_nodes();
    g.by_name[lhs] = n.id;
    g.nodes.push_back(std::move(n));
  }
  if (g.outputs.empty()) {
    // implicit root: every sink is an output
    auto cons = g.consumer_lists();
    for (const auto& n : g.nodes)
      if (cons[static_cast<size_t>(n.id)].empty()) g.outputs.push_back(n.id);
  }
  auto diags = validate_graph(g);
  for (const auto& d : diags)
    if (d.code.rfind("note-", 0) != 0) throw ParseError(d.code, d.message, d.line, d.col);
  return g;
}

std::string serialize_graph(const CompGraph& g) {
  std::ostringstream os;
  auto list = [&](const char* key, const std::vector<int>& v) {
    if (v.empty()) return std::string();
    std::ostringstream a;
    a << ' ' << key << '=';
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) a << ',';
      a << v[i];
    }
    return a.str();
  };
  for (const auto& n : g.nodes) {
    os << n.name << " = " << kind_name(n.kind) << '(';
    for (size_t i = 0; i < n.operands.size(); ++i) {
      if (i) os << ", ";
      os << g.node(n.operands[i]).name;
    }
    os << ')';
    os << list("axes", n.attrs.axes) << list("dims", n.attrs.dims) << list("perm", n.attrs.perm)
       << list("starts", n.attrs.starts) << list("limits", n.attrs.limits);
    if (n.kind == OpKind::Constant) os << " value=" << n.attrs.value;
    os << " : " << n.shape.str() << '\n';
  }
  for (int o : g.outputs) os << "output " << g.node(o).name << '\n';
  return os.str();
}

}  // namespace stitch
