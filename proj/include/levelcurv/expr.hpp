// Closed-form scalar fields f : R^n -> R (n = 2, 3) with exact first and
// second derivatives by forward-mode differentiation on the syntax tree.
//
// Grammar (precedence high to low): ^  unary-  * /  + -
//   expr   := term { ('+'|'-') term }
//   term   := unary { ('*'|'/') unary }
//   unary  := '-' unary | power
//   power  := atom { '^' exponent }
//   atom   := number | 'x'|'y'|'z' | '(' expr ')' | ('exp'|'sqrt') '(' expr ')'
// Exponents must fold to a non-negative integer constant.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace levelcurv {

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

struct DomainError : std::runtime_error {
  DomainError(const std::string& msg, const std::string& subexpr)
      : std::runtime_error(msg + " in subexpression \"" + subexpr + "\""),
        subexpression(subexpr) {}
  std::string subexpression;
};

enum class NodeKind : std::uint8_t {
  Constant, Variable, Add, Sub, Mul, Div, Neg, Pow, Exp, Sqrt
};

struct Node {
  NodeKind kind;
  std::int32_t a = -1;      // left / only child
  std::int32_t b = -1;      // right child
  double constant = 0.0;    // Constant payload
  int var = -1;             // Variable payload
  int exponent = 0;         // Pow payload
  std::uint32_t src_begin = 0, src_end = 0;
};

// Parsed expression tree. Nodes are stored children-before-parent, so index
// order doubles as the evaluation order. Immutable after parse; all
// evaluation entry points are const and thread-safe.
class ScalarField {
 public:
  int arity() const { return arity_; }
  const std::string& source_text() const { return source_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int root() const { return static_cast<int>(nodes_.size()) - 1; }

  std::string unparse() const;
  std::string subexpression_text(int node) const;

  friend ScalarField parse(const std::string& text, int arity);

 private:
  std::vector<Node> nodes_;
  int arity_ = 0;
  std::string source_;
};

ScalarField parse(const std::string& text, int arity);

bool same_tree(const ScalarField& a, const ScalarField& b);

// Value, gradient and Hessian of a field at a point. The Hessian is kept as
// a packed upper triangle so symmetry is exact by construction.
struct Jet2 {
  double value = 0.0;
  double grad[3] = {0, 0, 0};
  double hess[6] = {0, 0, 0, 0, 0, 0};  // (0,0)(0,1)(0,2)(1,1)(1,2)(2,2)
  int dim = 0;

  Eigen::VectorXd gradient() const {
    return Eigen::Map<const Eigen::VectorXd>(grad, dim);
  }
  Eigen::MatrixXd hessian() const;
  double hess_at(int i, int j) const;
};

// Reusable evaluator over one field; keeps scratch buffers so per-point
// evaluation does not allocate. Each thread should own its own Evaluator.
class Evaluator {
 public:
  explicit Evaluator(const ScalarField& field);

  const ScalarField& field() const { return *field_; }
  int dim() const { return field_->arity(); }

  // Fast paths: return NaN(s) on domain errors and record the offending node.
  double value(const double* x) const;
  double value(const Eigen::VectorXd& x) const { return value(x.data()); }
  // value + gradient
  bool jet1(const double* x, double& v, double* g) const;
  // value + gradient + Hessian
  bool jet2(const double* x, Jet2& out) const;

  // Checked path: throws DomainError naming the offending subexpression.
  Jet2 eval2(const Eigen::VectorXd& x) const;

  int last_error_node() const { return last_error_; }

 private:
  const ScalarField* field_;
  mutable std::vector<double> val_;
  mutable std::vector<double> g_;   // 3 per node
  mutable std::vector<double> h_;   // 6 per node
  mutable int last_error_ = -1;
};

// Convenience wrapper used by tests and cold paths.
Jet2 eval2(const ScalarField& field, const Eigen::VectorXd& point);

}  // namespace levelcurv
