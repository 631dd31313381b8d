// Integration of pointwise curvature over extracted meshes: total curvature
// K(t;R), total absolute curvature |K|(t;R), the index decomposition
// K(lambda;t), |K|(lambda;t), truncated Lipschitz-Killing totals L_q, |L|_q,
// R-sweeps and log-log asymptotic fits.
//
// For curves the integrals are computed from the turning of the oriented
// normal between consecutive vertices, which stays exact when the curvature
// concentrates below grid scale (fold points); for surfaces the spec's
// vertex-averaged order-1 quadrature is used.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "levelcurv/expr.hpp"
#include "levelcurv/levelset.hpp"

namespace levelcurv {

struct CurvatureTotals {
  double t = 0.0;
  double R = 0.0;
  double k_total = 0.0;
  double k_abs = 0.0;
  // Index bins lambda = 0..n-1. By construction
  //   k_abs == sum of k_abs_lambda  and  k_lambda[l] == (-1)^l k_abs_lambda[l]
  // hold exactly; mass at degenerate or near-critical vertices is kept out of
  // the bins and reported in degenerate_mass.
  std::array<double, 3> k_lambda{0, 0, 0};
  std::array<double, 3> k_abs_lambda{0, 0, 0};
  // lk[q-1] = {L_q, |L|_q} for q = 1..n-1 (c_{n,q} = 1 convention).
  std::array<std::array<double, 2>, 2> lk{{{0, 0}, {0, 0}}};
  double boundary_fraction = 0.0;  // |k| mass within 2h of dropped simplices
  double degenerate_mass = 0.0;
  int n_components = 0;
  double measure = 0.0;            // total length / area
  int n_vertices = 0;
  int n_simplices = 0;
  bool extraction_ok = true;
  std::string note;
};

CurvatureTotals totals(const LevelSetMesh& mesh, const ScalarField& field);

// Grid pitch rule for sweeps: fixed h when fixed > 0, else cells_per_R.
struct HRule {
  double fixed = 0.0;
  double cells_per_R_2d = 400.0;
  double cells_per_R_3d = 40.0;
  double h_for(int dim, double R) const {
    if (fixed > 0) return fixed;
    return R / (dim == 2 ? cells_per_R_2d : cells_per_R_3d);
  }
};

std::vector<CurvatureTotals> r_sweep(const ScalarField& field, double t,
                                     const std::vector<double>& radii,
                                     const HRule& h_rule,
                                     const ExtractOptions& opts = {});

struct AsymptoticFit {
  bool ok = false;
  std::string reason;
  double exponent = 0.0;
  double coefficient = 0.0;
  double residual = 0.0;  // RMS log error
};

// Least-squares fit |L|_q(t;R) ~ c * R^a on log-log data.
AsymptoticFit asymptotic_fit(const std::vector<CurvatureTotals>& sweep, int q);
AsymptoticFit fit_power_law(const std::vector<double>& R, const std::vector<double>& y);

}  // namespace levelcurv
