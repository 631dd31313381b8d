#include "levelcurv/geometry.hpp"

#include <cmath>

namespace levelcurv {

namespace {

Eigen::Vector3d to3(const Eigen::VectorXd& x) {
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  out.head(x.size()) = x;
  return out;
}

}  // namespace

TangentFrame frame_from_normal(const Eigen::Vector3d& base_point,
                               const Eigen::Vector3d& nu, int dim) {
  TangentFrame fr;
  fr.base_point = base_point;
  fr.normal = nu;
  fr.dim = dim;
  if (dim == 2) {
    // Rotate the normal by -90 degrees; (b1, nu) is then direct.
    fr.tangent_basis.col(0) = Eigen::Vector3d(nu.y(), -nu.x(), 0.0);
    return fr;
  }
  // Two axes least aligned with nu, Gram-Schmidt, then orientation fix.
  int i0 = 0, i1 = 1;
  {
    double a[3] = {std::abs(nu.x()), std::abs(nu.y()), std::abs(nu.z())};
    int order[3] = {0, 1, 2};
    if (a[order[0]] > a[order[1]]) std::swap(order[0], order[1]);
    if (a[order[1]] > a[order[2]]) std::swap(order[1], order[2]);
    if (a[order[0]] > a[order[1]]) std::swap(order[0], order[1]);
    i0 = std::min(order[0], order[1]);
    i1 = std::max(order[0], order[1]);
  }
  Eigen::Vector3d e0 = Eigen::Vector3d::Unit(i0);
  Eigen::Vector3d e1 = Eigen::Vector3d::Unit(i1);
  Eigen::Vector3d b0 = (e0 - e0.dot(nu) * nu).normalized();
  Eigen::Vector3d b1 = e1 - e1.dot(nu) * nu - e1.dot(b0) * b0;
  b1.normalize();
  Eigen::Matrix3d M;
  M.col(0) = b0; M.col(1) = b1; M.col(2) = nu;
  if (M.determinant() < 0) b1 = -b1;
  fr.tangent_basis.col(0) = b0;
  fr.tangent_basis.col(1) = b1;
  return fr;
}

double PointCurvature::eigen_zero_tol() const {
  double rho = 0.0;
  for (int i = 0; i < dim - 1; ++i) rho = std::max(rho, std::abs(principal[i]));
  return 1e-7 * std::max(1.0, rho);
}

PointCurvature curvature_from_jet(const Jet2& jet) {
  const int n = jet.dim;
  PointCurvature pc;
  pc.dim = n;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) g[i] = jet.grad[i];
  const double gn = g.norm();
  Eigen::Vector3d nu = g / gn;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  TangentFrame fr = frame_from_normal(p, nu, n);

  if (n == 2) {
    const Eigen::Vector3d b = fr.tangent_basis.col(0);
    double hbb = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) hbb += b[i] * jet.hess_at(i, j) * b[j];
    const double k = hbb / gn;
    pc.shape(0, 0) = k;
    pc.principal[0] = k;
    pc.gauss = k;
    pc.index = (k < 0.0) ? 1 : 0;
    pc.degenerate = std::abs(k) < pc.eigen_zero_tol();
    return pc;
  }

  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) H(i, j) = jet.hess_at(i, j);
  Eigen::Matrix<double, 3, 2> B = fr.tangent_basis;
  Eigen::Matrix2d S = (B.transpose() * H * B) / gn;
  S = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(S);
  pc.shape = S;
  pc.principal = es.eigenvalues();  // ascending
  pc.gauss = pc.principal[0] * pc.principal[1];
  pc.index = (pc.principal[0] < 0.0 ? 1 : 0) + (pc.principal[1] < 0.0 ? 1 : 0);
  const double tol = pc.eigen_zero_tol();
  pc.degenerate = std::abs(pc.principal[0]) < tol || std::abs(pc.principal[1]) < tol;
  return pc;
}

Eigen::Vector3d gauss_map(const ScalarField& field, const Eigen::VectorXd& x) {
  Evaluator ev(field);
  const int n = field.arity();
  double v, g[3];
  if (!ev.jet1(x.data(), v, g))
    throw DomainError("evaluation failed", field.subexpression_text(ev.last_error_node()));
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) grad[i] = g[i];
  if (grad.norm() < grad_floor(to3(x), n)) throw NearCriticalError(x);
  return grad.normalized();
}

Eigen::Vector3d gauss_differential(const ScalarField& field, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& xi) {
  Jet2 jet = eval2(field, x);
  const int n = field.arity();
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) g[i] = jet.grad[i];
  const double gn = g.norm();
  if (gn < grad_floor(to3(x), n)) throw NearCriticalError(x);
  Eigen::Vector3d nu = g / gn;
  Eigen::Vector3d hxi = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) hxi[i] += jet.hess_at(i, j) * xi[j];
  return (hxi - hxi.dot(nu) * nu) / gn;
}

PointCurvature shape_operator(const ScalarField& field, const Eigen::VectorXd& x) {
  Jet2 jet = eval2(field, x);
  const int n = field.arity();
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) g[i] = jet.grad[i];
  if (g.norm() < grad_floor(to3(x), n)) throw NearCriticalError(x);
  return curvature_from_jet(jet);
}

double lk_density_from_curvature(const PointCurvature& pc, int q) {
  const int n = pc.dim;
  if (q < 1 || q > n - 1)
    throw std::invalid_argument("lk_density: q out of range");
  if (q == n - 1) return pc.gauss;
  // n = 3, q = 1: integral of kappa_1 cos^2 + kappa_2 sin^2 over the
  // unit-speed Grassmann circle.
  return M_PI * (pc.principal[0] + pc.principal[1]);
}

double lk_density(const ScalarField& field, const Eigen::VectorXd& x, int q) {
  return lk_density_from_curvature(shape_operator(field, x), q);
}

std::pair<Eigen::Vector3d, double> psi(const ScalarField& field, const Eigen::VectorXd& x) {
  Eigen::Vector3d nu = gauss_map(field, x);
  Evaluator ev(field);
  return {nu, ev.value(x.data())};
}

std::optional<Eigen::Vector3d> newton_normal_preimage(const Evaluator& ev, double t,
                                                      const Eigen::Vector3d& u,
                                                      Eigen::Vector3d seed,
                                                      double tol_scale) {
  const int n = ev.dim();
  TangentFrame fr = frame_from_normal(Eigen::Vector3d::Zero(), u, n);
  Eigen::Vector3d x = seed;
  Jet2 jet;
  const int max_iter = 40;
  double prev_res = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    if (!ev.jet2(x.data(), jet)) return std::nullopt;
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) g[i] = jet.grad[i];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) H(i, j) = jet.hess_at(i, j);
    // Residual: level equation plus tangential components of the gradient.
    Eigen::VectorXd F(n);
    F[0] = jet.value - t;
    for (int k = 0; k < n - 1; ++k) F[1 + k] = fr.tangent_basis.col(k).head(n).dot(g.head(n));
    const double fscale = 1.0 + std::abs(t);
    const double gscale = 1.0 + g.norm();
    const double res = std::abs(F[0]) / fscale + F.tail(n - 1).norm() / gscale;
    if (res < 1e-12 * tol_scale) return x;
    Eigen::MatrixXd J(n, n);
    for (int j = 0; j < n; ++j) J(0, j) = g[j];
    for (int k = 0; k < n - 1; ++k)
      J.row(1 + k) = (fr.tangent_basis.col(k).head(n).transpose() * H.topLeftCorner(n, n))
                         .head(n);
    Eigen::VectorXd delta = J.fullPivLu().solve(-F);
    if (!delta.allFinite()) return std::nullopt;
    // Step cap keeps the iteration from leaving the basin.
    double cap = 0.5 * (1.0 + x.head(n).norm());
    double len = delta.norm();
    if (len > cap) delta *= cap / len;
    for (int i = 0; i < n; ++i) x[i] += delta[i];
    if (it > 10 && res > 0.9 * prev_res && res > 1e-9)
      return std::nullopt;  // stagnating
    prev_res = std::min(prev_res, res);
  }
  return std::nullopt;
}

}  // namespace levelcurv
