#include "levelcurv/oracle.hpp"

#include <cmath>
#include <random>

#include "levelcurv/geometry.hpp"

namespace levelcurv {

namespace {

double turning2(const Eigen::Vector3d& na, const Eigen::Vector3d& nb) {
  return std::atan2(na.x() * nb.y() - na.y() * nb.x(),
                    na.x() * nb.x() + na.y() * nb.y());
}

// Does the simplex's vertex-normal simplex cover u, and with what spread?
bool normal_cover(const LevelSetMesh& mesh, std::size_t s, const Eigen::Vector3d& u,
                  bool& tangency) {
  const auto& sx = mesh.simplices[s];
  const int dim = mesh.dim;
  for (int k = 0; k < dim; ++k)
    if (mesh.vertex_flags[sx[k]] & kVertexNearCritical) return false;
  if (dim == 2) {
    const Eigen::Vector3d& na = mesh.vertex_normal[sx[0]];
    const Eigen::Vector3d& nb = mesh.vertex_normal[sx[1]];
    double dth = turning2(na, nb);
    tangency = std::abs(dth) > M_PI / 2;
    double delta =
        std::remainder(std::atan2(u.y(), u.x()) - std::atan2(na.y(), na.x()), 2 * M_PI);
    return (dth > 0 && delta >= 0 && delta <= dth) ||
           (dth < 0 && delta <= 0 && delta >= dth);
  }
  const Eigen::Vector3d& n0 = mesh.vertex_normal[sx[0]];
  const Eigen::Vector3d& n1 = mesh.vertex_normal[sx[1]];
  const Eigen::Vector3d& n2 = mesh.vertex_normal[sx[2]];
  double det = n0.dot(n1.cross(n2));
  if (std::abs(det) < 1e-14) return false;
  double spread = 0;
  spread = std::max(spread, std::acos(std::clamp(n0.dot(n1), -1.0, 1.0)));
  spread = std::max(spread, std::acos(std::clamp(n1.dot(n2), -1.0, 1.0)));
  spread = std::max(spread, std::acos(std::clamp(n2.dot(n0), -1.0, 1.0)));
  tangency = spread > M_PI / 2;
  double sign = det > 0 ? 1.0 : -1.0;
  return sign * n0.dot(n1.cross(u)) >= 0 && sign * n1.dot(n2.cross(u)) >= 0 &&
         sign * n2.dot(n0.cross(u)) >= 0;
}

struct Located {
  std::vector<ProjectionCritical> criticals;
  bool tangency = false;
  bool diverged = false;
};

Located locate_direction(const LevelSetMesh& mesh, const Evaluator& ev,
                         const Eigen::Vector3d& u) {
  Located out;
  const int dim = mesh.dim;
  std::vector<Eigen::Vector3d> points;
  std::vector<bool> point_aligned;
  for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
    for (int sgn = 0; sgn < 2; ++sgn) {
      Eigen::Vector3d dir = sgn == 0 ? u : Eigen::Vector3d(-u);
      bool tang = false;
      if (!normal_cover(mesh, s, dir, tang)) continue;
      if (tang) {
        out.tangency = true;
        continue;
      }
      auto p = newton_normal_preimage(ev, mesh.level,  dir,
                                      mesh.simplex_barycenter(static_cast<int>(s)));
      if (!p) {
        out.diverged = true;
        continue;
      }
      if (p->norm() > mesh.radius) continue;  // refined out of the ball
      bool dup = false;
      for (const auto& q : points)
        if ((q - *p).norm() < std::max(mesh.cell_size, 1e-7 * (1 + p->norm()))) dup = true;
      if (dup) continue;
      points.push_back(*p);
      point_aligned.push_back(sgn == 0);
    }
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    Jet2 jet;
    if (!ev.jet2(points[i].data(), jet)) {
      out.diverged = true;
      continue;
    }
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (int d = 0; d < dim; ++d) g[d] = jet.grad[d];
    double gn = g.norm();
    if (gn < grad_floor(points[i], dim)) {
      out.diverged = true;
      continue;
    }
    Eigen::Vector3d nu = g / gn;
    ProjectionCritical pc;
    pc.point = points[i];
    pc.direction = u;
    pc.aligned = point_aligned[i];
    pc.tangential_residual = (u - u.dot(nu) * nu).norm();
    PointCurvature curv = curvature_from_jet(jet);
    pc.nondegenerate = !curv.degenerate;
    pc.morse_index = pc.aligned ? curv.index : (dim - 1) - curv.index;
    out.criticals.push_back(pc);
  }
  return out;
}

}  // namespace

std::vector<ProjectionCritical> find_projection_criticals(const LevelSetMesh& mesh,
                                                          const ScalarField& field,
                                                          const Eigen::Vector3d& u) {
  Evaluator ev(field);
  return locate_direction(mesh, ev, u).criticals;
}

bool morse_index_check(const ScalarField& field, const ProjectionCritical& p) {
  if (!p.nondegenerate) return false;
  Evaluator ev(field);
  const int dim = field.arity();
  const double t = ev.value(p.point.data());
  const Eigen::Vector3d u = p.direction.normalized();
  TangentFrame fr = frame_from_normal(p.point, p.aligned ? u : Eigen::Vector3d(-u), dim);

  // Graph height eta(w): f(p + B w + u eta) = t solved by 1-D Newton on
  // secant-free central differences of f only.
  auto eta = [&](double w0, double w1) -> double {
    Eigen::Vector3d base = p.point + w0 * fr.tangent_basis.col(0);
    if (dim == 3) base += w1 * fr.tangent_basis.col(1);
    double e = 0.0;
    for (int it = 0; it < 60; ++it) {
      Eigen::Vector3d q = base + e * u;
      double v, g[3];
      if (!ev.jet1(q.data(), v, g)) return std::numeric_limits<double>::quiet_NaN();
      double dfde = 0;
      for (int d = 0; d < dim; ++d) dfde += g[d] * u[d];
      if (std::abs(dfde) < 1e-14) return std::numeric_limits<double>::quiet_NaN();
      double step = (t - v) / dfde;
      e += step;
      if (std::abs(step) < 1e-13 * (1 + std::abs(e))) break;
    }
    return e;
  };

  const double delta = 1e-4 * (1.0 + p.point.norm());
  Eigen::Matrix2d Hfd = Eigen::Matrix2d::Zero();
  if (dim == 2) {
    double hp = eta(delta, 0), hm = eta(-delta, 0), h0 = eta(0, 0);
    Hfd(0, 0) = (hp + hm - 2 * h0) / (delta * delta);
  } else {
    double h0 = eta(0, 0);
    double px = eta(delta, 0), mx = eta(-delta, 0);
    double py = eta(0, delta), my = eta(0, -delta);
    double pp = eta(delta, delta), pm = eta(delta, -delta);
    double mp = eta(-delta, delta), mm = eta(-delta, -delta);
    Hfd(0, 0) = (px + mx - 2 * h0) / (delta * delta);
    Hfd(1, 1) = (py + my - 2 * h0) / (delta * delta);
    Hfd(0, 1) = Hfd(1, 0) = (pp - pm - mp + mm) / (4 * delta * delta);
  }
  if (!Hfd.allFinite()) return false;

  int graph_positive = 0, graph_negative = 0;
  if (dim == 2) {
    if (Hfd(0, 0) > 0) graph_positive = 1;
    if (Hfd(0, 0) < 0) graph_negative = 1;
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Hfd);
    for (int i = 0; i < 2; ++i) {
      if (es.eigenvalues()[i] > 0) ++graph_positive;
      if (es.eigenvalues()[i] < 0) ++graph_negative;
    }
  }

  // The level graphed along the frame normal has Hess eta = -S, so the shape
  // index counts the positive graph eigenvalues; the stored morse_index is
  // already mirrored for anti-aligned points.
  PointCurvature curv = shape_operator(field, p.point.head(dim));
  int shape_index = p.aligned ? curv.index : (dim - 1) - curv.index;
  (void)graph_negative;
  return shape_index == graph_positive && shape_index == p.morse_index;
}

McEstimate mc_estimate_mesh(const LevelSetMesh& mesh, const ScalarField& field,
                            int n_samples, long seed) {
  const int dim = mesh.dim;
  const double sphere_vol = dim == 2 ? 2 * M_PI : 4 * M_PI;
  Evaluator ev(field);

  std::mt19937_64 rng(seed >= 0 ? static_cast<unsigned long>(seed) : 0);
  std::normal_distribution<double> gauss(0, 1);
  const double golden = 0.6180339887498949;
  auto direction = [&](int k) -> Eigen::Vector3d {
    if (seed >= 0) {
      Eigen::Vector3d v(gauss(rng), gauss(rng), dim == 3 ? gauss(rng) : 0.0);
      while (v.norm() < 1e-9) v = Eigen::Vector3d(gauss(rng), gauss(rng), dim == 3 ? gauss(rng) : 0.0);
      return v.normalized();
    }
    if (dim == 2) {
      double th = 2 * M_PI * std::fmod(0.5 + golden * k, 1.0);
      return {std::cos(th), std::sin(th), 0.0};
    }
    // Fibonacci sphere.
    double z = 1.0 - (2.0 * k + 1.0) / (2.0 * n_samples + 64);
    double phi = 2 * M_PI * std::fmod(golden * k, 1.0);
    double s = std::sqrt(std::max(0.0, 1 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
  };

  McEstimate est;
  double sum_abs = 0, sum_abs2 = 0, sum_k = 0, sum_k2 = 0;
  int k = 0;
  int budget = 8 * n_samples + 64;
  while (est.n_used < n_samples && k < budget) {
    Eigen::Vector3d u = direction(k++);
    if (mesh.empty()) {
      ++est.n_used;
      continue;  // zero counts
    }
    Located loc = locate_direction(mesh, ev, u);
    if (loc.tangency || loc.diverged) {
      ++est.n_rejected;
      continue;
    }
    int count = 0, signed_sum = 0;
    for (const auto& pc : loc.criticals) {
      if (!pc.aligned) continue;
      if (!pc.nondegenerate) continue;
      ++count;
      signed_sum += (pc.morse_index % 2 == 0) ? 1 : -1;
    }
    sum_abs += count;
    sum_abs2 += static_cast<double>(count) * count;
    sum_k += signed_sum;
    sum_k2 += static_cast<double>(signed_sum) * signed_sum;
    ++est.n_used;
  }
  if (est.n_used == 0) return est;
  double n = est.n_used;
  double mean_abs = sum_abs / n, mean_k = sum_k / n;
  est.abs_k_est = sphere_vol * mean_abs;
  est.k_est = sphere_vol * mean_k;
  if (est.n_used > 1) {
    double var_abs = std::max(0.0, (sum_abs2 / n - mean_abs * mean_abs) / (n - 1));
    double var_k = std::max(0.0, (sum_k2 / n - mean_k * mean_k) / (n - 1));
    est.stderr_abs = sphere_vol * std::sqrt(var_abs);
    est.stderr_k = sphere_vol * std::sqrt(var_k);
  }
  return est;
}

McEstimate mc_estimate(const ScalarField& field, double t, double R, int n_samples,
                       long seed, double h, const ExtractOptions& opts) {
  if (h <= 0) h = auto_cell_size(field.arity(), R);
  LevelSetMesh mesh = extract_level(field, t, R, h, opts);
  return mc_estimate_mesh(mesh, field, n_samples, seed);
}

}  // namespace levelcurv
