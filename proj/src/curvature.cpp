#include "levelcurv/curvature.hpp"

#include <cmath>

namespace levelcurv {

namespace {

// Signed turning of the oriented normal across a segment, principal value.
double turning(const Eigen::Vector3d& na, const Eigen::Vector3d& nb) {
  double cross = na.x() * nb.y() - na.y() * nb.x();
  double dot = na.x() * nb.x() + na.y() * nb.y();
  return std::atan2(cross, dot);
}

void totals_curve(const LevelSetMesh& mesh, CurvatureTotals& out) {
  double boundary_abs = 0.0;
  for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
    const auto& sx = mesh.simplices[s];
    const std::uint8_t fa = mesh.vertex_flags[sx[0]];
    const std::uint8_t fb = mesh.vertex_flags[sx[1]];
    if ((fa | fb) & kVertexNearCritical) continue;  // no reliable normal
    double dth = turning(mesh.vertex_normal[sx[0]], mesh.vertex_normal[sx[1]]);
    double mass = std::abs(dth);
    bool degen = (fa & kVertexDegenerate) && (fb & kVertexDegenerate);
    if (degen) {
      out.degenerate_mass += mass;
      continue;
    }
    int lambda = dth >= 0 ? 0 : 1;
    out.k_abs_lambda[lambda] += mass;
    if ((fa | fb) & kVertexNearBoundary) boundary_abs += mass;
  }
  out.k_abs = out.k_abs_lambda[0] + out.k_abs_lambda[1];
  out.k_lambda[0] = out.k_abs_lambda[0];
  out.k_lambda[1] = -out.k_abs_lambda[1];
  out.k_total = out.k_lambda[0] + out.k_lambda[1];
  out.lk[0][0] = out.k_total;
  out.lk[0][1] = out.k_abs;
  out.boundary_fraction = out.k_abs > 0 ? boundary_abs / out.k_abs : 0.0;
}

void totals_surface(const LevelSetMesh& mesh, CurvatureTotals& out) {
  double boundary_abs = 0.0;
  for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
    const auto& sx = mesh.simplices[s];
    double area = mesh.simplex_measure(static_cast<int>(s));
    double w = area / 3.0;
    for (int c = 0; c < 3; ++c) {
      std::int32_t v = sx[c];
      std::uint8_t fl = mesh.vertex_flags[v];
      if (fl & kVertexNearCritical) continue;
      const PointCurvature& pc = mesh.per_vertex[v];
      double absk = std::abs(pc.gauss);
      if (fl & kVertexDegenerate) {
        out.degenerate_mass += w * absk;
        continue;
      }
      out.k_abs_lambda[pc.index] += w * absk;
      if (fl & kVertexNearBoundary) boundary_abs += w * absk;
      double lk1 = M_PI * (pc.principal[0] + pc.principal[1]);
      out.lk[0][0] += w * lk1;
      out.lk[0][1] += w * std::abs(lk1);
    }
  }
  out.k_abs = out.k_abs_lambda[0] + out.k_abs_lambda[1] + out.k_abs_lambda[2];
  for (int l = 0; l < 3; ++l)
    out.k_lambda[l] = (l % 2 == 0 ? 1.0 : -1.0) * out.k_abs_lambda[l];
  out.k_total = out.k_lambda[0] + out.k_lambda[1] + out.k_lambda[2];
  out.lk[1][0] = out.k_total;
  out.lk[1][1] = out.k_abs;
  out.boundary_fraction = out.k_abs > 0 ? boundary_abs / out.k_abs : 0.0;
}

}  // namespace

CurvatureTotals totals(const LevelSetMesh& mesh, const ScalarField& field) {
  (void)field;
  CurvatureTotals out;
  out.t = mesh.level;
  out.R = mesh.radius;
  out.n_components = mesh.n_components;
  out.measure = mesh.total_measure();
  out.n_vertices = static_cast<int>(mesh.vertices.size());
  out.n_simplices = static_cast<int>(mesh.simplices.size());
  if (mesh.empty()) return out;
  if (mesh.dim == 2) totals_curve(mesh, out);
  else totals_surface(mesh, out);
  return out;
}

std::vector<CurvatureTotals> r_sweep(const ScalarField& field, double t,
                                     const std::vector<double>& radii,
                                     const HRule& h_rule,
                                     const ExtractOptions& opts) {
  std::vector<CurvatureTotals> out;
  out.reserve(radii.size());
  for (double R : radii) {
    double h = h_rule.h_for(field.arity(), R);
    LevelSetMesh mesh = extract_level(field, t, R, h, opts);
    out.push_back(totals(mesh, field));
  }
  return out;
}

AsymptoticFit fit_power_law(const std::vector<double>& R, const std::vector<double>& y) {
  AsymptoticFit fit;
  if (R.size() < 4) {
    fit.reason = "need at least 4 radii";
    return fit;
  }
  for (double v : y)
    if (!(v > 0)) {
      fit.reason = "non-positive values cannot be fit on log-log axes";
      return fit;
    }
  const int n = static_cast<int>(R.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    double lx = std::log(R[i]), ly = std::log(y[i]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) {
    fit.reason = "degenerate abscissae";
    return fit;
  }
  double a = (n * sxy - sx * sy) / denom;
  double b = (sy - a * sx) / n;
  double rss = 0;
  for (int i = 0; i < n; ++i) {
    double e = std::log(y[i]) - (a * std::log(R[i]) + b);
    rss += e * e;
  }
  fit.ok = true;
  fit.exponent = a;
  fit.coefficient = std::exp(b);
  fit.residual = std::sqrt(rss / n);
  return fit;
}

AsymptoticFit asymptotic_fit(const std::vector<CurvatureTotals>& sweep, int q) {
  AsymptoticFit fit;
  if (sweep.empty()) {
    fit.reason = "empty sweep";
    return fit;
  }
  std::vector<double> R, y;
  for (const auto& tot : sweep) {
    R.push_back(tot.R);
    if (q < 1 || q > 2) {
      fit.reason = "q out of range";
      return fit;
    }
    y.push_back(tot.lk[q - 1][1]);
  }
  return fit_power_law(R, y);
}

}  // namespace levelcurv
