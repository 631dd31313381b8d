#include "levelcurv/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

namespace levelcurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Packed upper-triangle index tables for n <= 3.
constexpr int kI[6] = {0, 0, 0, 1, 1, 2};
constexpr int kJ[6] = {0, 1, 2, 1, 2, 2};

struct Tokenizer {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  bool accept(char c) {
    if (peek() == c) { ++pos; return true; }
    return false;
  }
  void expect(char c, const char* what) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "' " + what, pos);
  }
};

class Parser {
 public:
  Parser(const std::string& text, int arity) : tok_{text}, arity_(arity) {}

  std::vector<Node> run() {
    int root = parse_expr();
    tok_.skip_ws();
    if (tok_.pos != tok_.s.size())
      throw ParseError("unexpected trailing input", tok_.pos);
    (void)root;
    return std::move(nodes_);
  }

 private:
  Tokenizer tok_;
  int arity_;
  std::vector<Node> nodes_;

  int emit(Node n) {
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int parse_expr() {
    std::size_t begin = (tok_.peek(), tok_.pos);
    int lhs = parse_term();
    for (;;) {
      char c = tok_.peek();
      if (c != '+' && c != '-') break;
      ++tok_.pos;
      int rhs = parse_term();
      Node n;
      n.kind = (c == '+') ? NodeKind::Add : NodeKind::Sub;
      n.a = lhs; n.b = rhs;
      n.src_begin = static_cast<std::uint32_t>(begin);
      n.src_end = static_cast<std::uint32_t>(tok_.pos);
      lhs = emit(n);
    }
    return lhs;
  }

  int parse_term() {
    std::size_t begin = (tok_.peek(), tok_.pos);
    int lhs = parse_unary();
    for (;;) {
      char c = tok_.peek();
      if (c != '*' && c != '/') break;
      ++tok_.pos;
      int rhs = parse_unary();
      Node n;
      n.kind = (c == '*') ? NodeKind::Mul : NodeKind::Div;
      n.a = lhs; n.b = rhs;
      n.src_begin = static_cast<std::uint32_t>(begin);
      n.src_end = static_cast<std::uint32_t>(tok_.pos);
      lhs = emit(n);
    }
    return lhs;
  }

  int parse_unary() {
    std::size_t begin = (tok_.peek(), tok_.pos);
    if (tok_.accept('-')) {
      int child = parse_unary();
      Node n;
      n.kind = NodeKind::Neg;
      n.a = child;
      n.src_begin = static_cast<std::uint32_t>(begin);
      n.src_end = static_cast<std::uint32_t>(tok_.pos);
      return emit(n);
    }
    return parse_power();
  }

  int parse_power() {
    std::size_t begin = (tok_.peek(), tok_.pos);
    int base = parse_atom();
    while (tok_.peek() == '^') {
      ++tok_.pos;
      int expo = parse_exponent();
      Node n;
      n.kind = NodeKind::Pow;
      n.a = base;
      n.exponent = expo;
      n.src_begin = static_cast<std::uint32_t>(begin);
      n.src_end = static_cast<std::uint32_t>(tok_.pos);
      base = emit(n);
    }
    return base;
  }

  // An exponent is an atom-level expression that must fold to a non-negative
  // integer constant; anything else ("x^(1/2)", "x^y") is rejected here.
  int parse_exponent() {
    std::size_t at = (tok_.peek(), tok_.pos);
    std::size_t save_nodes = nodes_.size();
    int sub;
    if (tok_.peek() == '(') {
      tok_.expect('(', "to open exponent");
      sub = parse_expr();
      tok_.expect(')', "to close exponent");
    } else {
      sub = parse_atom();
    }
    double v;
    if (!fold_constant(sub, v))
      throw ParseError("exponent must be a constant integer", at);
    nodes_.resize(save_nodes);  // the exponent subtree is not part of the field
    double rounded = std::nearbyint(v);
    if (!(std::abs(v - rounded) < 1e-12) || rounded < 0.0 || rounded > 64.0)
      throw ParseError("non-integer exponent", at);
    return static_cast<int>(rounded);
  }

  bool fold_constant(int node, double& out) const {
    const Node& n = nodes_[node];
    double a = 0, b = 0;
    switch (n.kind) {
      case NodeKind::Constant: out = n.constant; return true;
      case NodeKind::Variable: return false;
      case NodeKind::Neg:
        if (!fold_constant(n.a, a)) return false;
        out = -a; return true;
      case NodeKind::Add:
        if (!fold_constant(n.a, a) || !fold_constant(n.b, b)) return false;
        out = a + b; return true;
      case NodeKind::Sub:
        if (!fold_constant(n.a, a) || !fold_constant(n.b, b)) return false;
        out = a - b; return true;
      case NodeKind::Mul:
        if (!fold_constant(n.a, a) || !fold_constant(n.b, b)) return false;
        out = a * b; return true;
      case NodeKind::Div:
        if (!fold_constant(n.a, a) || !fold_constant(n.b, b)) return false;
        out = a / b; return true;
      case NodeKind::Pow:
        if (!fold_constant(n.a, a)) return false;
        out = std::pow(a, n.exponent); return true;
      case NodeKind::Exp:
        if (!fold_constant(n.a, a)) return false;
        out = std::exp(a); return true;
      case NodeKind::Sqrt:
        if (!fold_constant(n.a, a)) return false;
        out = std::sqrt(a); return true;
    }
    return false;
  }

  int parse_atom() {
    std::size_t begin = (tok_.peek(), tok_.pos);
    char c = tok_.peek();
    if (c == '(') {
      ++tok_.pos;
      int inner = parse_expr();
      tok_.expect(')', "to close group");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return parse_number(begin);
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      return parse_ident(begin);
    }
    throw ParseError("expected number, variable or '('", tok_.pos);
  }

  int parse_number(std::size_t begin) {
    std::size_t p = tok_.pos;
    while (p < tok_.s.size() && std::isdigit(static_cast<unsigned char>(tok_.s[p]))) ++p;
    if (p < tok_.s.size() && tok_.s[p] == '.') {
      ++p;
      while (p < tok_.s.size() && std::isdigit(static_cast<unsigned char>(tok_.s[p]))) ++p;
    }
    if (p < tok_.s.size() && (tok_.s[p] == 'e' || tok_.s[p] == 'E')) {
      std::size_t q = p + 1;
      if (q < tok_.s.size() && (tok_.s[q] == '+' || tok_.s[q] == '-')) ++q;
      if (q < tok_.s.size() && std::isdigit(static_cast<unsigned char>(tok_.s[q]))) {
        ++q;
        while (q < tok_.s.size() && std::isdigit(static_cast<unsigned char>(tok_.s[q]))) ++q;
        p = q;
      }
    }
    std::string lit = tok_.s.substr(tok_.pos, p - tok_.pos);
    char* endp = nullptr;
    double v = std::strtod(lit.c_str(), &endp);
    if (endp == lit.c_str()) throw ParseError("malformed number", tok_.pos);
    tok_.pos = p;
    Node n;
    n.kind = NodeKind::Constant;
    n.constant = v;
    n.src_begin = static_cast<std::uint32_t>(begin);
    n.src_end = static_cast<std::uint32_t>(tok_.pos);
    return emit(n);
  }

  int parse_ident(std::size_t begin) {
    std::size_t p = tok_.pos;
    while (p < tok_.s.size() && std::isalpha(static_cast<unsigned char>(tok_.s[p]))) ++p;
    std::string name = tok_.s.substr(tok_.pos, p - tok_.pos);
    tok_.pos = p;

    if (name == "exp" || name == "sqrt") {
      tok_.expect('(', "after function name");
      int inner = parse_expr();
      tok_.expect(')', "to close function call");
      Node n;
      n.kind = (name == "exp") ? NodeKind::Exp : NodeKind::Sqrt;
      n.a = inner;
      n.src_begin = static_cast<std::uint32_t>(begin);
      n.src_end = static_cast<std::uint32_t>(tok_.pos);
      return emit(n);
    }

    int var = -1;
    if (name == "x") var = 0;
    else if (name == "y") var = 1;
    else if (name == "z") var = 2;
    if (var < 0) throw ParseError("unknown identifier '" + name + "'", begin);
    if (var >= arity_)
      throw ParseError("variable '" + name + "' exceeds arity " + std::to_string(arity_), begin);
    Node n;
    n.kind = NodeKind::Variable;
    n.var = var;
    n.src_begin = static_cast<std::uint32_t>(begin);
    n.src_end = static_cast<std::uint32_t>(tok_.pos);
    return emit(n);
  }
};

int precedence(NodeKind k) {
  switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub: return 1;
    case NodeKind::Mul:
    case NodeKind::Div: return 2;
    case NodeKind::Neg: return 3;
    case NodeKind::Pow: return 4;
    default: return 5;
  }
}

void unparse_node(const std::vector<Node>& nodes, int idx, std::string& out) {
  const Node& n = nodes[idx];
  auto child = [&](int c, bool paren) {
    if (paren) out += '(';
    unparse_node(nodes, c, out);
    if (paren) out += ')';
  };
  switch (n.kind) {
    case NodeKind::Constant: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", n.constant);
      out += buf;
      break;
    }
    case NodeKind::Variable:
      out += "xyz"[n.var];
      break;
    case NodeKind::Add:
    case NodeKind::Sub:
      child(n.a, precedence(nodes[n.a].kind) < 1);
      out += (n.kind == NodeKind::Add) ? " + " : " - ";
      child(n.b, precedence(nodes[n.b].kind) <= 1);
      break;
    case NodeKind::Mul:
    case NodeKind::Div:
      child(n.a, precedence(nodes[n.a].kind) < 2);
      out += (n.kind == NodeKind::Mul) ? "*" : "/";
      child(n.b, precedence(nodes[n.b].kind) <= 2);
      break;
    case NodeKind::Neg:
      out += '-';
      child(n.a, precedence(nodes[n.a].kind) < 3);
      break;
    case NodeKind::Pow:
      child(n.a, precedence(nodes[n.a].kind) < 5);
      out += '^';
      out += std::to_string(n.exponent);
      break;
    case NodeKind::Exp:
      out += "exp(";
      unparse_node(nodes, n.a, out);
      out += ')';
      break;
    case NodeKind::Sqrt:
      out += "sqrt(";
      unparse_node(nodes, n.a, out);
      out += ')';
      break;
  }
}

}  // namespace

ScalarField parse(const std::string& text, int arity) {
  if (arity != 2 && arity != 3)
    throw ParseError("arity must be 2 or 3", 0);
  Parser p(text, arity);
  ScalarField f;
  f.nodes_ = p.run();
  f.arity_ = arity;
  f.source_ = text;
  return f;
}

std::string ScalarField::unparse() const {
  std::string out;
  unparse_node(nodes_, root(), out);
  return out;
}

std::string ScalarField::subexpression_text(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) return source_;
  const Node& n = nodes_[node];
  if (n.src_end <= n.src_begin || n.src_end > source_.size()) return source_;
  return source_.substr(n.src_begin, n.src_end - n.src_begin);
}

bool same_tree(const ScalarField& a, const ScalarField& b) {
  if (a.arity() != b.arity()) return false;
  const auto& na = a.nodes();
  const auto& nb = b.nodes();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].kind != nb[i].kind || na[i].a != nb[i].a || na[i].b != nb[i].b ||
        na[i].var != nb[i].var || na[i].exponent != nb[i].exponent ||
        na[i].constant != nb[i].constant)
      return false;
  }
  return true;
}

Eigen::MatrixXd Jet2::hessian() const {
  Eigen::MatrixXd H(dim, dim);
  for (int k = 0; k < 6; ++k) {
    int i = kI[k], j = kJ[k];
    if (i < dim && j < dim) {
      H(i, j) = hess[k];
      H(j, i) = hess[k];
    }
  }
  return H;
}

double Jet2::hess_at(int i, int j) const {
  if (i > j) std::swap(i, j);
  for (int k = 0; k < 6; ++k)
    if (kI[k] == i && kJ[k] == j) return hess[k];
  return 0.0;
}

Evaluator::Evaluator(const ScalarField& field) : field_(&field) {
  std::size_t n = field.nodes().size();
  val_.resize(n);
  g_.resize(3 * n);
  h_.resize(6 * n);
}

double Evaluator::value(const double* x) const {
  const auto& nodes = field_->nodes();
  last_error_ = -1;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    double v;
    switch (n.kind) {
      case NodeKind::Constant: v = n.constant; break;
      case NodeKind::Variable: v = x[n.var]; break;
      case NodeKind::Add: v = val_[n.a] + val_[n.b]; break;
      case NodeKind::Sub: v = val_[n.a] - val_[n.b]; break;
      case NodeKind::Mul: v = val_[n.a] * val_[n.b]; break;
      case NodeKind::Div:
        if (val_[n.b] == 0.0) { last_error_ = static_cast<int>(i); return kNaN; }
        v = val_[n.a] / val_[n.b];
        break;
      case NodeKind::Neg: v = -val_[n.a]; break;
      case NodeKind::Pow: {
        double base = val_[n.a], acc = 1.0;
        int e = n.exponent;
        while (e > 0) {
          if (e & 1) acc *= base;
          base *= base;
          e >>= 1;
        }
        v = acc;
        break;
      }
      case NodeKind::Exp: v = std::exp(val_[n.a]); break;
      case NodeKind::Sqrt:
        if (val_[n.a] < 0.0) { last_error_ = static_cast<int>(i); return kNaN; }
        v = std::sqrt(val_[n.a]);
        break;
    }
    val_[i] = v;
  }
  return val_.back();
}

namespace {

// First-order slot arithmetic; dim-generic over n in {2,3}.
inline void j1_lin(double* g, const double* ga, const double* gb, double sb, int n) {
  for (int i = 0; i < n; ++i) g[i] = ga[i] + sb * gb[i];
}

}  // namespace

bool Evaluator::jet1(const double* x, double& v_out, double* g_out) const {
  const auto& nodes = field_->nodes();
  const int n = field_->arity();
  last_error_ = -1;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& nd = nodes[i];
    double* g = &g_[3 * i];
    double v;
    switch (nd.kind) {
      case NodeKind::Constant:
        v = nd.constant;
        g[0] = g[1] = g[2] = 0;
        break;
      case NodeKind::Variable:
        v = x[nd.var];
        g[0] = g[1] = g[2] = 0;
        g[nd.var] = 1.0;
        break;
      case NodeKind::Add:
        v = val_[nd.a] + val_[nd.b];
        j1_lin(g, &g_[3 * nd.a], &g_[3 * nd.b], 1.0, n);
        break;
      case NodeKind::Sub:
        v = val_[nd.a] - val_[nd.b];
        j1_lin(g, &g_[3 * nd.a], &g_[3 * nd.b], -1.0, n);
        break;
      case NodeKind::Mul: {
        double va = val_[nd.a], vb = val_[nd.b];
        const double* ga = &g_[3 * nd.a];
        const double* gb = &g_[3 * nd.b];
        v = va * vb;
        for (int k = 0; k < n; ++k) g[k] = ga[k] * vb + gb[k] * va;
        break;
      }
      case NodeKind::Div: {
        double vb = val_[nd.b];
        if (vb == 0.0) { last_error_ = static_cast<int>(i); return false; }
        double inv = 1.0 / vb;
        double q = val_[nd.a] * inv;
        const double* ga = &g_[3 * nd.a];
        const double* gb = &g_[3 * nd.b];
        v = q;
        for (int k = 0; k < n; ++k) g[k] = (ga[k] - q * gb[k]) * inv;
        break;
      }
      case NodeKind::Neg:
        v = -val_[nd.a];
        for (int k = 0; k < n; ++k) g[k] = -g_[3 * nd.a + k];
        break;
      case NodeKind::Pow: {
        // d(u^e) = e u^(e-1) du; evaluated without log/exp so negative bases
        // stay exact.
        double u = val_[nd.a];
        int e = nd.exponent;
        const double* ga = &g_[3 * nd.a];
        if (e == 0) {
          v = 1.0;
          g[0] = g[1] = g[2] = 0;
        } else {
          double um1 = 1.0;  // u^(e-1)
          for (int t = 0; t < e - 1; ++t) um1 *= u;
          v = um1 * u;
          double c = e * um1;
          for (int k = 0; k < n; ++k) g[k] = c * ga[k];
        }
        break;
      }
      case NodeKind::Exp: {
        double ev = std::exp(val_[nd.a]);
        const double* ga = &g_[3 * nd.a];
        v = ev;
        for (int k = 0; k < n; ++k) g[k] = ev * ga[k];
        break;
      }
      case NodeKind::Sqrt: {
        double u = val_[nd.a];
        if (u <= 0.0) { last_error_ = static_cast<int>(i); return false; }
        double s = std::sqrt(u);
        double c = 0.5 / s;
        const double* ga = &g_[3 * nd.a];
        v = s;
        for (int k = 0; k < n; ++k) g[k] = c * ga[k];
        break;
      }
    }
    val_[i] = v;
  }
  v_out = val_.back();
  const double* gr = &g_[3 * (nodes.size() - 1)];
  for (int k = 0; k < n; ++k) g_out[k] = gr[k];
  return true;
}

bool Evaluator::jet2(const double* x, Jet2& out) const {
  const auto& nodes = field_->nodes();
  const int n = field_->arity();
  const int np = n * (n + 1) / 2;
  // Upper-triangle pair tables restricted to dimension n.
  int I[6], J[6];
  {
    int c = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) { I[c] = i; J[c] = j; ++c; }
  }
  last_error_ = -1;

  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    const Node& nd = nodes[idx];
    double* g = &g_[3 * idx];
    double* h = &h_[6 * idx];
    double v = 0;
    switch (nd.kind) {
      case NodeKind::Constant:
        v = nd.constant;
        for (int k = 0; k < 3; ++k) g[k] = 0;
        for (int k = 0; k < 6; ++k) h[k] = 0;
        break;
      case NodeKind::Variable:
        v = x[nd.var];
        for (int k = 0; k < 3; ++k) g[k] = 0;
        for (int k = 0; k < 6; ++k) h[k] = 0;
        g[nd.var] = 1.0;
        break;
      case NodeKind::Add: {
        const double* ga = &g_[3 * nd.a]; const double* gb = &g_[3 * nd.b];
        const double* ha = &h_[6 * nd.a]; const double* hb = &h_[6 * nd.b];
        v = val_[nd.a] + val_[nd.b];
        for (int k = 0; k < n; ++k) g[k] = ga[k] + gb[k];
        for (int k = 0; k < np; ++k) h[k] = ha[k] + hb[k];
        break;
      }
      case NodeKind::Sub: {
        const double* ga = &g_[3 * nd.a]; const double* gb = &g_[3 * nd.b];
        const double* ha = &h_[6 * nd.a]; const double* hb = &h_[6 * nd.b];
        v = val_[nd.a] - val_[nd.b];
        for (int k = 0; k < n; ++k) g[k] = ga[k] - gb[k];
        for (int k = 0; k < np; ++k) h[k] = ha[k] - hb[k];
        break;
      }
      case NodeKind::Mul: {
        double va = val_[nd.a], vb = val_[nd.b];
        const double* ga = &g_[3 * nd.a]; const double* gb = &g_[3 * nd.b];
        const double* ha = &h_[6 * nd.a]; const double* hb = &h_[6 * nd.b];
        v = va * vb;
        for (int k = 0; k < np; ++k)
          h[k] = ha[k] * vb + hb[k] * va + ga[I[k]] * gb[J[k]] + ga[J[k]] * gb[I[k]];
        for (int k = 0; k < n; ++k) g[k] = ga[k] * vb + gb[k] * va;
        break;
      }
      case NodeKind::Div: {
        double vb = val_[nd.b];
        if (vb == 0.0) { last_error_ = static_cast<int>(idx); return false; }
        double inv = 1.0 / vb;
        double q = val_[nd.a] * inv;
        const double* ga = &g_[3 * nd.a]; const double* gb = &g_[3 * nd.b];
        const double* ha = &h_[6 * nd.a]; const double* hb = &h_[6 * nd.b];
        double gq[3];
        for (int k = 0; k < n; ++k) gq[k] = (ga[k] - q * gb[k]) * inv;
        for (int k = 0; k < np; ++k)
          h[k] = (ha[k] - q * hb[k] - gq[I[k]] * gb[J[k]] - gq[J[k]] * gb[I[k]]) * inv;
        for (int k = 0; k < n; ++k) g[k] = gq[k];
        v = q;
        break;
      }
      case NodeKind::Neg: {
        const double* ga = &g_[3 * nd.a];
        const double* ha = &h_[6 * nd.a];
        v = -val_[nd.a];
        for (int k = 0; k < n; ++k) g[k] = -ga[k];
        for (int k = 0; k < np; ++k) h[k] = -ha[k];
        break;
      }
      case NodeKind::Pow: {
        // Repeated-squaring on full jets keeps negative bases exact.
        int e = nd.exponent;
        double bv = val_[nd.a];
        double bg[3], bh[6];
        const double* ga = &g_[3 * nd.a];
        const double* ha = &h_[6 * nd.a];
        for (int k = 0; k < 3; ++k) bg[k] = ga[k];
        for (int k = 0; k < 6; ++k) bh[k] = ha[k];
        double av = 1.0, ag[3] = {0, 0, 0}, ah[6] = {0, 0, 0, 0, 0, 0};
        while (e > 0) {
          if (e & 1) {
            double nv = av * bv;
            double ng[3], nh[6];
            for (int k = 0; k < np; ++k)
              nh[k] = ah[k] * bv + bh[k] * av + ag[I[k]] * bg[J[k]] + ag[J[k]] * bg[I[k]];
            for (int k = 0; k < n; ++k) ng[k] = ag[k] * bv + bg[k] * av;
            av = nv;
            for (int k = 0; k < n; ++k) ag[k] = ng[k];
            for (int k = 0; k < np; ++k) ah[k] = nh[k];
          }
          e >>= 1;
          if (e > 0) {
            double nv = bv * bv;
            double ng[3], nh[6];
            for (int k = 0; k < np; ++k)
              nh[k] = 2.0 * (bh[k] * bv + bg[I[k]] * bg[J[k]]);
            for (int k = 0; k < n; ++k) ng[k] = 2.0 * bg[k] * bv;
            bv = nv;
            for (int k = 0; k < n; ++k) bg[k] = ng[k];
            for (int k = 0; k < np; ++k) bh[k] = nh[k];
          }
        }
        v = av;
        for (int k = 0; k < n; ++k) g[k] = ag[k];
        for (int k = 0; k < np; ++k) h[k] = ah[k];
        break;
      }
      case NodeKind::Exp: {
        double ev = std::exp(val_[nd.a]);
        const double* ga = &g_[3 * nd.a];
        const double* ha = &h_[6 * nd.a];
        for (int k = 0; k < np; ++k)
          h[k] = ev * (ha[k] + ga[I[k]] * ga[J[k]]);
        for (int k = 0; k < n; ++k) g[k] = ev * ga[k];
        v = ev;
        break;
      }
      case NodeKind::Sqrt: {
        double u = val_[nd.a];
        if (u <= 0.0) { last_error_ = static_cast<int>(idx); return false; }
        double s = std::sqrt(u);
        double c1 = 0.5 / s;
        double c2 = 0.25 / (s * u);
        const double* ga = &g_[3 * nd.a];
        const double* ha = &h_[6 * nd.a];
        for (int k = 0; k < np; ++k)
          h[k] = c1 * ha[k] - c2 * ga[I[k]] * ga[J[k]];
        for (int k = 0; k < n; ++k) g[k] = c1 * ga[k];
        v = s;
        break;
      }
    }
    val_[idx] = v;
  }

  out.dim = n;
  out.value = val_.back();
  const double* gr = &g_[3 * (nodes.size() - 1)];
  const double* hr = &h_[6 * (nodes.size() - 1)];
  for (int k = 0; k < 3; ++k) out.grad[k] = (k < n) ? gr[k] : 0.0;
  // Re-expand the packed-by-n triangle into the fixed packed-by-3 layout.
  for (int k = 0; k < 6; ++k) out.hess[k] = 0.0;
  {
    int c = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        for (int k = 0; k < 6; ++k)
          if (kI[k] == i && kJ[k] == j) out.hess[k] = hr[c];
        ++c;
      }
  }
  return true;
}

Jet2 Evaluator::eval2(const Eigen::VectorXd& x) const {
  Jet2 out;
  if (!jet2(x.data(), out)) {
    int bad = last_error_;
    const Node& n = field_->nodes()[bad];
    const char* what = (n.kind == NodeKind::Div) ? "division by zero"
                                                 : "sqrt of non-positive argument";
    throw DomainError(what, field_->subexpression_text(bad));
  }
  return out;
}

Jet2 eval2(const ScalarField& field, const Eigen::VectorXd& point) {
  Evaluator ev(field);
  return ev.eval2(point);
}

}  // namespace levelcurv
