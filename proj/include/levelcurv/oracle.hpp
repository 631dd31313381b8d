// Independent estimation of K and |K| by Morse counting: critical points of
// the linear projections phi_u = <., u> restricted to the level set are
// exactly the points where nu_f = +/- u, so averaging aligned fiber counts
// (and signed index sums) over directions reproduces the curvature integrals.
// This module cross-validates the mesh-integral pipeline.
#pragma once

#include <Eigen/Dense>

#include <vector>

#include "levelcurv/expr.hpp"
#include "levelcurv/levelset.hpp"

namespace levelcurv {

struct ProjectionCritical {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
  int morse_index = 0;       // index of d nu restricted to the tangent space
  bool aligned = false;      // nu_f(point) = +u rather than -u
  bool nondegenerate = false;
  double tangential_residual = 0.0;  // |u - <u,nu> nu|
};

std::vector<ProjectionCritical> find_projection_criticals(const LevelSetMesh& mesh,
                                                          const ScalarField& field,
                                                          const Eigen::Vector3d& u);

// Independent index route: finite-difference Hessian of the graph
// parametrization of the level over its tangent plane (each graph value is a
// 1-D root solve of f itself, so no curvature formulas are shared with the
// geometry module).
bool morse_index_check(const ScalarField& field, const ProjectionCritical& p);

struct McEstimate {
  double k_est = 0.0;
  double abs_k_est = 0.0;
  double stderr_abs = 0.0;
  double stderr_k = 0.0;
  int n_used = 0;
  int n_rejected = 0;
};

// Uniform directions (deterministic low-discrepancy sequence by default,
// pseudo-random when seed >= 0), aligned preimage counts averaged and scaled
// by vol(S^{n-1}).
McEstimate mc_estimate(const ScalarField& field, double t, double R, int n_samples,
                       long seed = -1, double h = 0.0,
                       const ExtractOptions& opts = {});
McEstimate mc_estimate_mesh(const LevelSetMesh& mesh, const ScalarField& field,
                            int n_samples, long seed = -1);

}  // namespace levelcurv
