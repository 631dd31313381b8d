// Pointwise differential geometry of level sets F_t = f^-1(t): the Gauss map
// nu = grad f / |grad f|, its differential, the shape operator in an
// orthonormal tangent frame, principal curvatures, the tangent Gauss index,
// and Lipschitz-Killing curvature densities.
#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>

#include "levelcurv/expr.hpp"

namespace levelcurv {

struct NearCriticalError : std::runtime_error {
  explicit NearCriticalError(const Eigen::VectorXd& x)
      : std::runtime_error("gradient below floor; point treated as critical"),
        point(x) {}
  Eigen::VectorXd point;
};

// Points with |grad f| below this are treated as members of crit(f).
inline double grad_floor(const Eigen::Vector3d& x, int dim) {
  return 1e-8 * (1.0 + x.head(dim).norm());
}

struct TangentFrame {
  Eigen::Vector3d base_point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  // Columns are the n-1 tangent vectors; (basis, normal) positively oriented.
  Eigen::Matrix<double, 3, 2> tangent_basis = Eigen::Matrix<double, 3, 2>::Zero();
  int dim = 0;
};

// Deterministic frame: Gram-Schmidt applied to the coordinate axes least
// aligned with the normal.
TangentFrame frame_from_normal(const Eigen::Vector3d& base_point,
                               const Eigen::Vector3d& unit_normal, int dim);

struct PointCurvature {
  Eigen::Matrix2d shape = Eigen::Matrix2d::Zero();  // (n-1)x(n-1) block
  Eigen::Vector2d principal = Eigen::Vector2d::Zero();  // ascending
  double gauss = 0.0;
  int index = 0;     // negative principal curvatures
  bool degenerate = false;
  int dim = 0;       // ambient n

  double eigen_zero_tol() const;
};

// Shape operator and derived quantities from a precomputed jet; the hot path
// used by mesh extraction.
PointCurvature curvature_from_jet(const Jet2& jet);

Eigen::Vector3d gauss_map(const ScalarField& field, const Eigen::VectorXd& x);
Eigen::Vector3d gauss_differential(const ScalarField& field, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& xi);
PointCurvature shape_operator(const ScalarField& field, const Eigen::VectorXd& x);

// q-th Lipschitz-Killing density from principal curvatures, with the
// Grassmann circle carrying its unnormalized measure (c_{n,q} = 1).
double lk_density_from_curvature(const PointCurvature& pc, int q);
double lk_density(const ScalarField& field, const Eigen::VectorXd& x, int q);

// Psi_f(x) = (nu_f(x), f(x)).
std::pair<Eigen::Vector3d, double> psi(const ScalarField& field, const Eigen::VectorXd& x);

// Newton solve for a point p near `seed` with f(p) = t and nu_f(p) parallel
// to u. Returns nullopt on divergence.
std::optional<Eigen::Vector3d> newton_normal_preimage(const Evaluator& ev, double t,
                                                      const Eigen::Vector3d& u,
                                                      Eigen::Vector3d seed,
                                                      double tol_scale = 1.0);

}  // namespace levelcurv
