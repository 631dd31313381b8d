#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "levelcurv/expr.hpp"

using namespace levelcurv;

namespace {

// Central finite differences of f itself check the gradient; the Hessian is
// checked against central differences of the AD gradient, since second
// differences of f alone bottom out near 1e-5 relative error in double
// precision and cannot certify 1e-6.
void check_derivatives(const ScalarField& f, const Eigen::VectorXd& x) {
  const int n = f.arity();
  Evaluator ev(f);
  Jet2 jet = ev.eval2(x);
  const double step = 1e-5;

  for (int d = 0; d < n; ++d) {
    Eigen::VectorXd xp = x, xm = x;
    xp[d] += step;
    xm[d] -= step;
    double fd = (ev.value(xp) - ev.value(xm)) / (2 * step);
    double ad = jet.grad[d];
    double err = std::abs(fd - ad);
    if (std::abs(fd) < 1.0)
      CHECK(err < 1e-8 * (1 + std::abs(fd)) + 1e-8);
    else
      CHECK(err / std::abs(fd) < 1e-6);
  }
  for (int a = 0; a < n; ++a) {
    Eigen::VectorXd xp = x, xm = x;
    xp[a] += step;
    xm[a] -= step;
    Jet2 jp = ev.eval2(xp);
    Jet2 jm = ev.eval2(xm);
    for (int b = 0; b < n; ++b) {
      double fd = (jp.grad[b] - jm.grad[b]) / (2 * step);
      double ad = jet.hess_at(a, b);
      double err = std::abs(fd - ad);
      if (std::abs(fd) < 1.0)
        CHECK(err < 1e-8 * (1 + std::abs(fd)) + 1e-8);
      else
        CHECK(err / std::abs(fd) < 1e-6);
    }
  }
}

}  // namespace

TEST_CASE("parse accepts the paper example and simple fields") {
  ScalarField f = parse("y*(2*x^2*y^2 - 9*x*y + 12)", 2);
  CHECK(f.arity() == 2);
  ScalarField g = parse("x^2+y^2+z^2", 3);
  CHECK(g.arity() == 3);
  Evaluator ev(g);
  double p[3] = {1, 2, 3};
  CHECK(ev.value(p) == doctest::Approx(14.0));
}

TEST_CASE("parse errors carry byte offsets") {
  CHECK_THROWS_AS(parse("x^(1/2)", 2), ParseError);
  try {
    parse("x^(1/2)", 2);
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == 2);
    CHECK(std::string(e.what()).find("non-integer exponent") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("x + w", 2), ParseError);
  CHECK_THROWS_AS(parse("x + z", 2), ParseError);  // arity violation
  CHECK_THROWS_AS(parse("x + ", 2), ParseError);
  CHECK_THROWS_AS(parse("(x", 2), ParseError);
  CHECK_THROWS_AS(parse("x^y", 2), ParseError);
  CHECK_THROWS_AS(parse("x^-2", 2), ParseError);
  CHECK_NOTHROW(parse("x^(1+1)", 2));
  CHECK_NOTHROW(parse("x + z", 3));
}

TEST_CASE("unparse round-trips to an identical tree") {
  const char* sources[] = {
      "y*(2*x^2*y^2 - 9*x*y + 12)",
      "x^2+y^2",
      "-x^2",
      "(x - y)^3/(1 + x^2)",
      "exp(x - y^2) + 0.5*x",
      "sqrt(1 + x^2 + y^2)",
      "x/(y - 2) - -y",
      "1.5e-3*x + 2.25*y^4",
  };
  for (const char* src : sources) {
    ScalarField f = parse(src, 2);
    ScalarField g = parse(f.unparse(), 2);
    CHECK_MESSAGE(same_tree(f, g), src);
  }
}

TEST_CASE("precedence: caret binds tighter than unary minus") {
  ScalarField f = parse("-x^2", 2);
  Evaluator ev(f);
  double p[3] = {3, 0, 0};
  CHECK(ev.value(p) == doctest::Approx(-9.0));
}

TEST_CASE("eval2 trivial examples") {
  {
    ScalarField f = parse("x^2+y^2", 2);
    Jet2 j = eval2(f, Eigen::Vector2d(1, 0));
    CHECK(j.value == doctest::Approx(1.0));
    CHECK(j.grad[0] == doctest::Approx(2.0));
    CHECK(j.grad[1] == doctest::Approx(0.0));
    CHECK(j.hess_at(0, 0) == doctest::Approx(2.0));
    CHECK(j.hess_at(1, 1) == doctest::Approx(2.0));
    CHECK(j.hess_at(0, 1) == doctest::Approx(0.0));
  }
  {
    ScalarField f = parse("x*y", 2);
    Jet2 j = eval2(f, Eigen::Vector2d(0.3, -1.7));
    CHECK(j.hess_at(0, 0) == doctest::Approx(0.0));
    CHECK(j.hess_at(0, 1) == doctest::Approx(1.0));
    CHECK(j.hess_at(1, 1) == doctest::Approx(0.0));
  }
}

TEST_CASE("paper example value and gradient at (1,1)") {
  ScalarField f = parse("y*(2*x^2*y^2 - 9*x*y + 12)", 2);
  Evaluator ev(f);
  Jet2 j = ev.eval2(Eigen::Vector2d(1, 1));
  CHECK(j.value == doctest::Approx(5.0));
  check_derivatives(f, Eigen::Vector2d(1, 1));
}

TEST_CASE("AD matches finite differences at random points") {
  struct Case {
    const char* src;
    int arity;
    bool positive_only;  // restrict sampling for sqrt domains
  };
  const Case cases[] = {
      {"y*(2*x^2*y^2 - 9*x*y + 12)", 2, false},
      {"x^2+y^2", 2, false},
      {"x*y", 2, false},
      {"x^2+y^2+z^2", 3, false},
      {"z - x^2 + y^2", 3, false},
      {"(sqrt(x^2+y^2) - 2)^2 + z^2", 3, true},
      {"exp(x - y^2) + x", 2, false},
      {"sqrt(1 + x^2 + y^2)", 2, false},
      {"1/(1 + x^2 + y^2)", 2, false},
      {"(x - y)^3/(1 + x^2)", 2, false},
  };
  std::mt19937 rng(20240811);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (const Case& c : cases) {
    ScalarField f = parse(c.src, c.arity);
    int done = 0;
    while (done < 100) {
      Eigen::VectorXd x(c.arity);
      for (int d = 0; d < c.arity; ++d) x[d] = uni(rng);
      if (c.positive_only && x.head(2).norm() < 0.3) continue;  // keep sqrt smooth
      check_derivatives(f, x);
      ++done;
    }
  }
}

TEST_CASE("hessian symmetry is exact by construction") {
  ScalarField f = parse("exp(x*y - z^2)*sqrt(1 + x^2) + x^5*y^3", 3);
  Evaluator ev(f);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uni(-1.5, 1.5);
  for (int it = 0; it < 50; ++it) {
    Eigen::Vector3d x(uni(rng), uni(rng), uni(rng));
    Jet2 j = ev.eval2(x);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(j.hess_at(a, b) == j.hess_at(b, a));  // bitwise: shared storage
  }
}

TEST_CASE("domain errors name the offending subexpression") {
  ScalarField f = parse("sqrt(x) + y", 2);
  CHECK_THROWS_AS(eval2(f, Eigen::Vector2d(-1.0, 0.0)), DomainError);
  try {
    eval2(f, Eigen::Vector2d(-1.0, 0.0));
  } catch (const DomainError& e) {
    CHECK(e.subexpression.find("sqrt(x)") != std::string::npos);
  }
  ScalarField g = parse("1/(x - 1)", 2);
  CHECK_THROWS_AS(eval2(g, Eigen::Vector2d(1.0, 0.0)), DomainError);
  Evaluator ev(g);
  double p[3] = {1.0, 0.0, 0.0};
  CHECK(std::isnan(ev.value(p)));  // hot path reports NaN instead of throwing
}

TEST_CASE("integer powers stay exact at negative bases") {
  ScalarField f = parse("x^5", 2);
  Evaluator ev(f);
  double p[3] = {-2.0, 0.0, 0.0};
  CHECK(ev.value(p) == -32.0);
  Jet2 j = ev.eval2(Eigen::Vector2d(-2.0, 0.0));
  CHECK(j.grad[0] == doctest::Approx(80.0));     // 5 x^4
  CHECK(j.hess_at(0, 0) == doctest::Approx(-160.0));  // 20 x^3
}
