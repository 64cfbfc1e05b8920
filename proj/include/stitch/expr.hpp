#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace stitch {

// Small integer expression language for thread index arithmetic. Appears in
// stitched-kernel program text; evaluated per (block, thread, loop) context.
//
//   expr  := term (('+'|'-') term)*
//   term  := atom (('*'|'/'|'%') atom)*
//   atom  := integer | ident | '$' ident | 'min' '(' expr ',' expr ')' | '(' expr ')'
//
// '/' is floor division; '$name' reads the current thread's register.

struct Expr;
using ExprP = std::shared_ptr<const Expr>;

struct Expr {
  enum Kind { Const, Var, Reg, Add, Sub, Mul, Div, Mod, Min } kind;
  int64_t value = 0;   // Const
  std::string name;    // Var / Reg
  ExprP a, b;
};

struct EvalEnv {
  const std::map<std::string, int64_t>* vars = nullptr;
  std::function<int64_t(const std::string&)> reg;  // may be empty if no $regs appear
};

ExprP e_const(int64_t v);
ExprP e_var(const std::string& name);
ExprP e_reg(const std::string& name);
ExprP e_add(ExprP a, ExprP b);
ExprP e_sub(ExprP a, ExprP b);
ExprP e_mul(ExprP a, ExprP b);
ExprP e_div(ExprP a, ExprP b);
ExprP e_mod(ExprP a, ExprP b);
ExprP e_min(ExprP a, ExprP b);

int64_t eval(const ExprP& e, const EvalEnv& env);
std::string to_string(const ExprP& e);
ExprP parse_expr(const std::string& text);  // throws std::runtime_error
bool contains_reg(const ExprP& e);

// guard expressions: conjunction of comparisons
struct BExpr;
using BExprP = std::shared_ptr<const BExpr>;

struct BExpr {
  enum Kind { Cmp, And } kind;
  enum Op { Lt, Le, Eq, Ne, Ge, Gt } op = Lt;  // Cmp
  ExprP lhs, rhs;
  BExprP a, b;  // And
};

BExprP b_cmp(BExpr::Op op, ExprP lhs, ExprP rhs);
// nullptr operands mean "true"; returns nullptr when both are
BExprP b_and(BExprP a, BExprP b);
bool eval(const BExprP& e, const EvalEnv& env);  // nullptr -> true
std::string to_string(const BExprP& e);          // nullptr -> "1"
BExprP parse_bexpr(const std::string& text);

}  // namespace stitch
