#include "stitch/expr.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace stitch {

namespace {
ExprP make(Expr::Kind k, ExprP a, ExprP b) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->a = std::move(a);
  e->b = std::move(b);
  return e;
}
bool is_const(const ExprP& e, int64_t v) { return e->kind == Expr::Const && e->value == v; }
}  // namespace

ExprP e_const(int64_t v) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Const;
  e->value = v;
  return e;
}

ExprP e_var(const std::string& name) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Var;
  e->name = name;
  return e;
}

ExprP e_reg(const std::string& name) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Reg;
  e->name = name;
  return e;
}

ExprP e_add(ExprP a, ExprP b) {
  if (a->kind == Expr::Const && b->kind == Expr::Const) return e_const(a->value + b->value);
  if (is_const(a, 0)) return b;
  if (is_const(b, 0)) return a;
  return make(Expr::Add, std::move(a), std::move(b));
}

ExprP e_sub(ExprP a, ExprP b) {
  if (a->kind == Expr::Const && b->kind == Expr::Const) return e_const(a->value - b->value);
  if (is_const(b, 0)) return a;
  return make(Expr::Sub, std::move(a), std::move(b));
}

ExprP e_mul(ExprP a, ExprP b) {
  if (a->kind == Expr::Const && b->kind == Expr::Const) return e_const(a->value * b->value);
  if (is_const(a, 0) || is_const(b, 0)) return e_const(0);
  if (is_const(a, 1)) return b;
  if (is_const(b, 1)) return a;
  return make(Expr::Mul, std::move(a), std::move(b));
}

ExprP e_div(ExprP a, ExprP b) {
  if (is_const(b, 1)) return a;
  if (a->kind == Expr::Const && b->kind == Expr::Const && b->value != 0)
    return e_const(a->value / b->value);
  if (is_const(a, 0)) return e_const(0);
  return make(Expr::Div, std::move(a), std::move(b));
}

ExprP e_mod(ExprP a, ExprP b) {
  if (is_const(b, 1)) return e_const(0);
  if (a->kind == Expr::Const && b->kind == Expr::Const && b->value != 0)
    return e_const(a->value % b->value);
  if (is_const(a, 0)) return e_const(0);
  return make(Expr::Mod, std::move(a), std::move(b));
}

ExprP e_min(ExprP a, ExprP b) {
  if (a->kind == Expr::Const && b->kind == Expr::Const)
    return e_const(std::min(a->value, b->value));
  return make(Expr::Min, std::move(a), std::move(b));
}

int64_t eval(const ExprP& e, const EvalEnv& env) {
  switch (e->kind) {
    case Expr::Const: return e->value;
    case Expr::Var: {
      auto it = env.vars->find(e->name);
      if (it == env.vars->end()) throw std::runtime_error("unbound variable: " + e->name);
      return it->second;
    }
    case Expr::Reg:
      if (!env.reg) throw std::runtime_error("register reference outside thread context");
      return env.reg(e->name);
    case Expr::Add: return eval(e->a, env) + eval(e->b, env);
    case Expr::Sub: return eval(e->a, env) - eval(e->b, env);
    case Expr::Mul: return eval(e->a, env) * eval(e->b, env);
    case Expr::Div: {
      int64_t d = eval(e->b, env);
      if (d == 0) throw std::runtime_error("division by zero in index expression");
      return eval(e->a, env) / d;
    }
    case Expr::Mod: {
      int64_t d = eval(e->b, env);
      if (d == 0) throw std::runtime_error("mod by zero in index expression");
      return eval(e->a, env) % d;
    }
    case Expr::Min: return std::min(eval(e->a, env), eval(e->b, env));
  }
  throw std::logic_error("bad expr kind");
}

std::string to_string(const ExprP& e) {
  switch (e->kind) {
    case Expr::Const: return std::to_string(e->value);
    case Expr::Var: return e->name;
    case Expr::Reg: return "$" + e->name;
    case Expr::Min: return "min(" + to_string(e->a) + "," + to_string(e->b) + ")";
    default: break;
  }
  const char* op = e->kind == Expr::Add   ? "+"
                   : e->kind == Expr::Sub ? "-"
                   : e->kind == Expr::Mul ? "*"
                   : e->kind == Expr::Div ? "/"
                                          : "%";
  return "(" + to_string(e->a) + op + to_string(e->b) + ")";
}

bool contains_reg(const ExprP& e) {
  if (e->kind == Expr::Reg) return true;
  if (e->a && contains_reg(e->a)) return true;
  if (e->b && contains_reg(e->b)) return true;
  return false;
}

namespace {

struct ExprParser {
  const std::string& s;
  size_t i = 0;
  void ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  bool eat(char c) {
    ws();
    if (i < s.size() && s[i] == c) {
      ++i;
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& m) {
    throw std::runtime_error("expression parse error at " + std::to_string(i) + ": " + m +
                             " in '" + s + "'");
  }
  std::string ident() {
    ws();
    size_t b = i;
    while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
    if (i == b) fail("expected identifier");
    return s.substr(b, i - b);
  }
  ExprP atom() {
    ws();
    if (i >= s.size()) fail("unexpected end");
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      size_t b = i;
      while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
      return e_const(std::stoll(s.substr(b, i - b)));
    }
    if (s[i] == '$') {
      ++i;
      return e_reg(ident());
    }
    if (s[i] == '(') {
      ++i;
      ExprP e = expr();
      if (!eat(')')) fail("expected )");
      return e;
    }
    std::string id = ident();
    if (id == "min") {
      if (!eat('(')) fail("expected ( after min");
      ExprP a = expr();
      if (!eat(',')) fail("expected , in min");
      ExprP b = expr();
      if (!eat(')')) fail("expected ) after min");
      return e_min(a, b);
    }
    return e_var(id);
  }
  ExprP term() {
    ExprP e = atom();
    for (;;) {
      ws();
      if (i < s.size() && s[i] == '*') { ++i; e = e_mul(e, atom()); }
      else if (i < s.size() && s[i] == '/') { ++i; e = e_div(e, atom()); }
      else if (i < s.size() && s[i] == '%') { ++i; e = e_mod(e, atom()); }
      else return e;
    }
  }
  ExprP expr() {
    ExprP e = term();
    for (;;) {
      ws();
      if (i < s.size() && s[i] == '+') { ++i; e = e_add(e, term()); }
      else if (i < s.size() && s[i] == '-') { ++i; e = e_sub(e, term()); }
      else return e;
    }
  }
  BExprP cmp() {
    if (eat('(')) {
      // could be a parenthesised bexpr or an arithmetic atom; try bexpr first
      size_t save = i;
      try {
        BExprP inner = bexpr();
        if (!eat(')')) fail("expected )");
        return inner;
      } catch (const std::runtime_error&) {
        i = save - 1;  // re-read '('
      }
    }
    ExprP lhs = expr();
    ws();
    BExpr::Op op;
    if (i + 1 < s.size() && s[i] == '<' && s[i + 1] == '=') { op = BExpr::Le; i += 2; }
    else if (i < s.size() && s[i] == '<') { op = BExpr::Lt; ++i; }
    else if (i + 1 < s.size() && s[i] == '>' && s[i + 1] == '=') { op = BExpr::Ge; i += 2; }
    else if (i < s.size() && s[i] == '>') { op = BExpr::Gt; ++i; }
    else if (i + 1 < s.size() && s[i] == '=' && s[i + 1] == '=') { op = BExpr::Eq; i += 2; }
    else if (i + 1 < s.size() && s[i] == '!' && s[i + 1] == '=') { op = BExpr::Ne; i += 2; }
    else fail("expected comparison operator");
    return b_cmp(op, lhs, expr());
  }
  BExprP bexpr() {
    BExprP e = cmp();
    for (;;) {
      ws();
      if (i + 1 < s.size() && s[i] == '&' && s[i + 1] == '&') {
        i += 2;
        e = b_and(e, cmp());
      } else {
        return e;
      }
    }
  }
};

}  // namespace

ExprP parse_expr(const std::string& text) {
  ExprParser p{text};
  ExprP e = p.expr();
  p.ws();
  if (p.i != text.size()) p.fail("trailing characters");
  return e;
}

BExprP b_cmp(BExpr::Op op, ExprP lhs, ExprP rhs) {
  auto e = std::make_shared<BExpr>();
  e->kind = BExpr::Cmp;
  e->op = op;
  e->lhs = std::move(lhs);
  e->rhs = std::move(rhs);
  return e;
}

BExprP b_and(BExprP a, BExprP b) {
  if (!a) return b;
  if (!b) return a;
  auto e = std::make_shared<BExpr>();
  e->kind = BExpr::And;
  e->a = std::move(a);
  e->b = std::move(b);
  return e;
}

bool eval(const BExprP& e, const EvalEnv& env) {
  if (!e) return true;
  if (e->kind == BExpr::And) return eval(e->a, env) && eval(e->b, env);
  int64_t l = eval(e->lhs, env), r = eval(e->rhs, env);
  switch (e->op) {
    case BExpr::Lt: return l < r;
    case BExpr::Le: return l <= r;
    case BExpr::Eq: return l == r;
    case BExpr::Ne: return l != r;
    case BExpr::Ge: return l >= r;
    case BExpr::Gt: return l > r;
  }
  return false;
}

std::string to_string(const BExprP& e) {
  if (!e) return "1";
  if (e->kind == BExpr::And) return to_string(e->a) + "&&" + to_string(e->b);
  const char* op = e->op == BExpr::Lt   ? "<"
                   : e->op == BExpr::Le ? "<="
                   : e->op == BExpr::Eq ? "=="
                   : e->op == BExpr::Ne ? "!="
                   : e->op == BExpr::Ge ? ">="
                                        : ">";
  return to_string(e->lhs) + op + to_string(e->rhs);
}

BExprP parse_bexpr(const std::string& text) {
  ExprParser p{text};
  BExprP e = p.bexpr();
  p.ws();
  if (p.i != text.size()) p.fail("trailing characters");
  return e;
}

}  // namespace stitch
