#include "levelcurv/sphimage.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "levelcurv/geometry.hpp"

namespace levelcurv {

namespace {

double wrap_angle(double a) {  // to [0, 2*pi)
  a = std::fmod(a, 2 * M_PI);
  return a < 0 ? a + 2 * M_PI : a;
}

double turning2(const Eigen::Vector3d& na, const Eigen::Vector3d& nb) {
  return std::atan2(na.x() * nb.y() - na.y() * nb.x(),
                    na.x() * nb.x() + na.y() * nb.y());
}

}  // namespace

int default_raster_cells(int dim) { return dim == 2 ? 720 : 10242; }

SphericalPartition SphericalPartition::make(int dim, int m) {
  SphericalPartition p;
  p.dim_ = dim;
  p.m_ = m;
  if (dim == 2) {
    p.area_ = 2 * M_PI / m;
    p.ang_diam_ = 2 * M_PI / m;
    return p;
  }
  const double A = 4 * M_PI / m;
  p.area_ = A;
  // Polar caps of one cell each, then bands whose cos-boundaries advance by
  // exact multiples of A / (2*pi), so all areas equal A.
  double cos_cap = 1.0 - A / (2 * M_PI);
  double theta_cap = std::acos(std::clamp(cos_cap, -1.0, 1.0));
  int inner = m - 2;
  int nb = std::max(1, static_cast<int>(std::lround((M_PI - 2 * theta_cap) / std::sqrt(A))));
  // Ideal per-band cell counts from uniform-theta bands, rounded with a
  // running remainder so they sum to `inner`.
  std::vector<int> counts;
  {
    double acc = 0;
    int assigned = 0;
    for (int b = 0; b < nb; ++b) {
      double th0 = theta_cap + (M_PI - 2 * theta_cap) * b / nb;
      double th1 = theta_cap + (M_PI - 2 * theta_cap) * (b + 1) / nb;
      double ideal = inner * (std::cos(th0) - std::cos(th1)) / (2 * cos_cap);
      acc += ideal;
      int upto = static_cast<int>(std::lround(acc));
      counts.push_back(std::max(1, upto - assigned));
      assigned += counts.back();
    }
    counts.back() += inner - assigned;
  }
  p.counts_.push_back(1);
  for (int c : counts) p.counts_.push_back(c);
  p.counts_.push_back(1);
  p.cos_bounds_.push_back(1.0);
  double z = cos_cap;
  p.cos_bounds_.push_back(z);
  for (int c : counts) {
    z -= c * A / (2 * M_PI);
    p.cos_bounds_.push_back(z);
  }
  p.cos_bounds_.back() = -cos_cap;  // exact by construction, pinned
  p.cos_bounds_.push_back(-1.0);
  p.offs_.resize(p.counts_.size());
  int off = 0;
  for (std::size_t b = 0; b < p.counts_.size(); ++b) {
    p.offs_[b] = off;
    off += p.counts_[b];
  }
  // Angular diameter: max over bands of band height and cell width.
  double diam = 0;
  for (std::size_t b = 0; b < p.counts_.size(); ++b) {
    double th0 = std::acos(std::clamp(p.cos_bounds_[b], -1.0, 1.0));
    double th1 = std::acos(std::clamp(p.cos_bounds_[b + 1], -1.0, 1.0));
    double smax = std::max(std::sin(th0), std::sin(th1));
    double w = 2 * M_PI / p.counts_[b] * smax;
    diam = std::max(diam, std::hypot(th1 - th0, std::min(w, M_PI)));
  }
  p.ang_diam_ = diam;
  return p;
}

int SphericalPartition::cell_of(const Eigen::Vector3d& u) const {
  if (dim_ == 2) {
    double th = wrap_angle(std::atan2(u.y(), u.x()));
    int c = static_cast<int>(th / (2 * M_PI) * m_);
    return std::clamp(c, 0, m_ - 1);
  }
  double z = std::clamp(u.z() / u.norm(), -1.0, 1.0);
  // cos_bounds_ descends; band b spans (cos_bounds_[b+1], cos_bounds_[b]].
  int lo = 0, hi = static_cast<int>(counts_.size()) - 1;
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (z > cos_bounds_[mid + 1]) hi = mid;
    else lo = mid + 1;
  }
  int b = lo;
  double phi = wrap_angle(std::atan2(u.y(), u.x()));
  int k = static_cast<int>(phi / (2 * M_PI) * counts_[b]);
  k = std::clamp(k, 0, counts_[b] - 1);
  return offs_[b] + k;
}

Eigen::Vector3d SphericalPartition::center(int c) const {
  if (dim_ == 2) {
    double th = (c + 0.5) * 2 * M_PI / m_;
    return {std::cos(th), std::sin(th), 0.0};
  }
  int b = static_cast<int>(std::upper_bound(offs_.begin(), offs_.end(), c) - offs_.begin()) - 1;
  int k = c - offs_[b];
  double z = 0.5 * (cos_bounds_[b] + cos_bounds_[b + 1]);
  double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  double phi = (k + 0.5) * 2 * M_PI / counts_[b];
  return {s * std::cos(phi), s * std::sin(phi), z};
}

void SphericalPartition::cells_in_cap(const Eigen::Vector3d& u, double ang_radius,
                                      std::vector<int>& out) const {
  out.clear();
  if (dim_ == 2) {
    double th = wrap_angle(std::atan2(u.y(), u.x()));
    double w0 = 2 * M_PI / m_;
    int c0 = static_cast<int>(std::floor((th - ang_radius) / w0 - 0.5));
    int c1 = static_cast<int>(std::ceil((th + ang_radius) / w0 - 0.5));
    for (int c = c0; c <= c1; ++c) out.push_back(((c % m_) + m_) % m_);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return;
  }
  if (ang_radius >= M_PI) {
    for (int c = 0; c < m_; ++c) out.push_back(c);
    return;
  }
  Eigen::Vector3d un = u.normalized();
  double thu = std::acos(std::clamp(un.z(), -1.0, 1.0));
  double th_lo = thu - ang_radius, th_hi = thu + ang_radius;
  double phi_u = wrap_angle(std::atan2(un.y(), un.x()));
  for (std::size_t b = 0; b < counts_.size(); ++b) {
    double bth0 = std::acos(std::clamp(cos_bounds_[b], -1.0, 1.0));
    double bth1 = std::acos(std::clamp(cos_bounds_[b + 1], -1.0, 1.0));
    if (bth1 < th_lo || bth0 > th_hi) continue;
    int kb = counts_[b];
    double smin = std::min(std::sin(std::max(bth0, 1e-9)), std::sin(std::min(bth1, M_PI - 1e-9)));
    if (bth0 <= M_PI / 2 && bth1 >= M_PI / 2) smin = 1.0;  // band crosses equator
    // smin here is the max sin over the band; width of the needed phi window.
    double smax_band = (bth0 <= M_PI / 2 && bth1 >= M_PI / 2)
                           ? 1.0
                           : std::max(std::sin(bth0), std::sin(bth1));
    (void)smin;
    double sin_floor = std::max(1e-6, std::min(std::sin(bth0), std::sin(bth1)));
    if (th_lo <= 0 || th_hi >= M_PI || ang_radius / sin_floor >= M_PI ||
        kb <= 4) {
      for (int k = 0; k < kb; ++k) out.push_back(offs_[b] + k);
      continue;
    }
    (void)smax_band;
    double half = ang_radius / sin_floor + 2 * M_PI / kb;
    double w0 = 2 * M_PI / kb;
    int k0 = static_cast<int>(std::floor((phi_u - half) / w0 - 0.5));
    int k1 = static_cast<int>(std::ceil((phi_u + half) / w0 - 0.5));
    if (k1 - k0 >= kb) {
      for (int k = 0; k < kb; ++k) out.push_back(offs_[b] + k);
    } else {
      for (int k = k0; k <= k1; ++k) out.push_back(offs_[b] + ((k % kb) + kb) % kb);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

void SphericalPartition::neighbors(int c, std::vector<int>& out) const {
  if (dim_ == 2) {
    out = {((c - 1) % m_ + m_) % m_, (c + 1) % m_};
    return;
  }
  cells_in_cap(center(c), 1.2 * ang_diam_, out);
  out.erase(std::remove(out.begin(), out.end(), c), out.end());
}

std::vector<int> SphericalRaster::covered_cells() const {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(fiber_count.size()); ++c)
    if (fiber_count[c] > 0) out.push_back(c);
  return out;
}

double SphericalRaster::abs_area() const {
  double s = 0;
  for (int c = 0; c < static_cast<int>(fiber_count.size()); ++c) s += fiber_count[c];
  return s * part->cell_area();
}

double SphericalRaster::signed_area() const {
  double s = 0;
  for (int c = 0; c < static_cast<int>(degree.size()); ++c) s += degree[c];
  return s * part->cell_area();
}

SphericalRaster rasterize(const LevelSetMesh& mesh, const ScalarField& field, int m,
                          std::shared_ptr<const SphericalPartition> part) {
  (void)field;
  const int dim = mesh.dim == 0 ? 2 : mesh.dim;
  if (!part) part = std::make_shared<SphericalPartition>(SphericalPartition::make(dim, m));
  SphericalRaster r;
  r.level = mesh.level;
  r.part = part;
  r.fiber_count.assign(part->size(), 0);
  r.degree.assign(part->size(), 0);
  r.flagged.assign(part->size(), 0);
  if (mesh.empty()) return r;

  if (dim == 2) {
    const double w0 = 2 * M_PI / part->size();
    const int mm = part->size();
    for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
      const auto& sx = mesh.simplices[s];
      if ((mesh.vertex_flags[sx[0]] | mesh.vertex_flags[sx[1]]) & kVertexNearCritical) {
        ++r.skipped_simplices;
        continue;
      }
      const Eigen::Vector3d& na = mesh.vertex_normal[sx[0]];
      const Eigen::Vector3d& nb = mesh.vertex_normal[sx[1]];
      double dth = turning2(na, nb);
      if (std::abs(dth) < 1e-13) { ++r.skipped_simplices; continue; }
      bool flag = std::abs(dth) > M_PI / 2;
      double tha = wrap_angle(std::atan2(na.y(), na.x()));
      int sign = dth > 0 ? 1 : -1;
      // Half-open coverage keeps chained segments from double counting:
      // ccw segments cover (tha, tha+dth], cw segments [tha+dth, tha).
      if (dth > 0) {
        int c0 = static_cast<int>(std::ceil(tha / w0 - 0.5 + 1e-12));
        for (int c = c0;; ++c) {
          double delta = (c + 0.5) * w0 - tha;
          if (delta <= 0) continue;
          if (delta > dth) break;
          int cell = ((c % mm) + mm) % mm;
          r.fiber_count[cell] += 1;
          r.degree[cell] += sign;
          if (flag) r.flagged[cell] = 1;
        }
      } else {
        int c0 = static_cast<int>(std::floor(tha / w0 - 0.5 - 1e-12));
        for (int c = c0;; --c) {
          double delta = (c + 0.5) * w0 - tha;
          if (delta >= 0) continue;
          if (delta < dth) break;
          int cell = ((c % mm) + mm) % mm;
          r.fiber_count[cell] += 1;
          r.degree[cell] += sign;
          if (flag) r.flagged[cell] = 1;
        }
      }
    }
    return r;
  }

  std::vector<int> cand;
  for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
    const auto& sx = mesh.simplices[s];
    if ((mesh.vertex_flags[sx[0]] | mesh.vertex_flags[sx[1]] | mesh.vertex_flags[sx[2]]) &
        kVertexNearCritical) {
      ++r.skipped_simplices;
      continue;
    }
    const Eigen::Vector3d& n0 = mesh.vertex_normal[sx[0]];
    const Eigen::Vector3d& n1 = mesh.vertex_normal[sx[1]];
    const Eigen::Vector3d& n2 = mesh.vertex_normal[sx[2]];
    double det = n0.dot(n1.cross(n2));
    double a01 = std::acos(std::clamp(n0.dot(n1), -1.0, 1.0));
    double a12 = std::acos(std::clamp(n1.dot(n2), -1.0, 1.0));
    double a20 = std::acos(std::clamp(n2.dot(n0), -1.0, 1.0));
    double spread = std::max({a01, a12, a20});
    Eigen::Vector3d mid = n0 + n1 + n2;
    if (std::abs(det) < 1e-12) {
      // Degenerate spherical simplex: covers (almost) nothing; flag nearby.
      if (mid.norm() > 1e-9) {
        part->cells_in_cap(mid.normalized(), spread + part->cell_angular_diameter(), cand);
        for (int c : cand) r.flagged[c] = 1;
      }
      ++r.skipped_simplices;
      continue;
    }
    int sign = det > 0 ? 1 : -1;
    bool flag = spread > M_PI / 2;
    if (mid.norm() < 1e-9) {
      for (int c = 0; c < part->size(); ++c) r.flagged[c] = 1;
      ++r.skipped_simplices;
      continue;
    }
    Eigen::Vector3d cn = mid.normalized();
    double rad = 0;
    rad = std::max(rad, std::acos(std::clamp(cn.dot(n0), -1.0, 1.0)));
    rad = std::max(rad, std::acos(std::clamp(cn.dot(n1), -1.0, 1.0)));
    rad = std::max(rad, std::acos(std::clamp(cn.dot(n2), -1.0, 1.0)));
    part->cells_in_cap(cn, rad + 0.8 * part->cell_angular_diameter(), cand);
    for (int c : cand) {
      Eigen::Vector3d u = part->center(c);
      double d0 = sign * n0.dot(n1.cross(u));
      double d1 = sign * n1.dot(n2.cross(u));
      double d2 = sign * n2.dot(n0.cross(u));
      if (d0 >= 0 && d1 >= 0 && d2 >= 0) {
        r.fiber_count[c] += 1;
        r.degree[c] += sign;
        if (flag) r.flagged[c] = 1;
      }
    }
  }
  return r;
}

std::map<int, double> strata_areas(const SphericalRaster& raster) {
  std::map<int, double> out;
  for (int c = 0; c < static_cast<int>(raster.fiber_count.size()); ++c) {
    int k = raster.fiber_count[c];
    if (k > 0) out[k] += raster.part->cell_area();
  }
  return out;
}

DegreeCheckStats degree_check(const SphericalRaster& raster, const LevelSetMesh& mesh,
                              const ScalarField& field, int samples, unsigned seed) {
  DegreeCheckStats st;
  st.requested = samples;
  std::vector<int> pool;
  for (int c = 0; c < static_cast<int>(raster.fiber_count.size()); ++c)
    if (raster.fiber_count[c] > 0 && !raster.flagged[c]) pool.push_back(c);
  if (pool.empty()) return st;
  std::mt19937 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (static_cast<int>(pool.size()) > samples) pool.resize(samples);
  std::unordered_set<int> chosen(pool.begin(), pool.end());

  // One sweep over simplices collecting candidate seeds per sampled cell.
  std::unordered_map<int, std::vector<int>> cand;  // cell -> simplex ids
  std::vector<int> cells;
  const int dim = mesh.dim;
  for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
    const auto& sx = mesh.simplices[s];
    bool nc = false;
    for (int c = 0; c < dim; ++c)
      if (mesh.vertex_flags[sx[c]] & kVertexNearCritical) nc = true;
    if (nc) continue;
    if (dim == 2) {
      const Eigen::Vector3d& na = mesh.vertex_normal[sx[0]];
      const Eigen::Vector3d& nb = mesh.vertex_normal[sx[1]];
      double dth = turning2(na, nb);
      if (std::abs(dth) < 1e-13) continue;
      double tha = wrap_angle(std::atan2(na.y(), na.x()));
      raster.part->cells_in_cap(na, std::abs(dth) + raster.part->cell_angular_diameter(),
                                cells);
      for (int c : cells) {
        if (!chosen.count(c)) continue;
        double thc = (0.5 + (c % raster.part->size())) * 2 * M_PI / raster.part->size();
        double delta = std::remainder(thc - tha, 2 * M_PI);
        if ((dth > 0 && delta > 0 && delta <= dth) ||
            (dth < 0 && delta < 0 && delta >= dth))
          cand[c].push_back(static_cast<int>(s));
      }
    } else {
      const Eigen::Vector3d& n0 = mesh.vertex_normal[sx[0]];
      const Eigen::Vector3d& n1 = mesh.vertex_normal[sx[1]];
      const Eigen::Vector3d& n2 = mesh.vertex_normal[sx[2]];
      double det = n0.dot(n1.cross(n2));
      if (std::abs(det) < 1e-12) continue;
      int sign = det > 0 ? 1 : -1;
      Eigen::Vector3d mid = (n0 + n1 + n2);
      if (mid.norm() < 1e-9) continue;
      Eigen::Vector3d cn = mid.normalized();
      double rad = 0;
      rad = std::max(rad, std::acos(std::clamp(cn.dot(n0), -1.0, 1.0)));
      rad = std::max(rad, std::acos(std::clamp(cn.dot(n1), -1.0, 1.0)));
      rad = std::max(rad, std::acos(std::clamp(cn.dot(n2), -1.0, 1.0)));
      raster.part->cells_in_cap(cn, rad + 0.8 * raster.part->cell_angular_diameter(), cells);
      for (int c : cells) {
        if (!chosen.count(c)) continue;
        Eigen::Vector3d u = raster.part->center(c);
        if (sign * n0.dot(n1.cross(u)) >= 0 && sign * n1.dot(n2.cross(u)) >= 0 &&
            sign * n2.dot(n0.cross(u)) >= 0)
          cand[c].push_back(static_cast<int>(s));
      }
    }
  }

  Evaluator ev(field);
  for (int c : pool) {
    auto it = cand.find(c);
    if (it == cand.end()) {
      ++st.flagged_samples;  // coverage without locatable preimage seeds
      continue;
    }
    Eigen::Vector3d u = raster.part->center(c);
    std::vector<Eigen::Vector3d> points;
    bool diverged = false;
    for (int s : it->second) {
      Eigen::Vector3d seed = mesh.simplex_barycenter(s);
      auto p = newton_normal_preimage(ev, mesh.level, u, seed);
      if (!p) { diverged = true; break; }
      bool dup = false;
      for (const auto& q : points)
        if ((q - *p).norm() < std::max(mesh.cell_size, 1e-7 * (1 + p->norm()))) dup = true;
      if (!dup) points.push_back(*p);
    }
    if (diverged || points.empty()) {
      ++st.flagged_samples;
      continue;
    }
    int sum = 0;
    bool bad = false;
    for (const auto& p : points) {
      Jet2 jet;
      if (!ev.jet2(p.data(), jet)) { bad = true; break; }
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      for (int d = 0; d < dim; ++d) g[d] = jet.grad[d];
      if (g.norm() < grad_floor(p, dim)) { bad = true; break; }
      if (g.normalized().dot(u) < 0) continue;  // antipodal preimage
      PointCurvature pc = curvature_from_jet(jet);
      if (pc.degenerate) { bad = true; break; }
      sum += (pc.index % 2 == 0) ? 1 : -1;
    }
    if (bad) {
      ++st.flagged_samples;
      continue;
    }
    ++st.usable;
    if (sum == raster.degree[c]) ++st.agree;
  }
  st.rate = st.usable > 0 ? static_cast<double>(st.agree) / st.usable : 0.0;
  return st;
}

HausdorffEstimate hausdorff(const std::vector<int>& a, const std::vector<int>& b,
                            const SphericalPartition& part) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("hausdorff: distance to an empty set is undefined");
  std::vector<Eigen::Vector3d> pa, pb;
  pa.reserve(a.size());
  pb.reserve(b.size());
  for (int c : a) pa.push_back(part.center(c));
  for (int c : b) pb.push_back(part.center(c));
  HausdorffEstimate est;
  auto directed = [&](const std::vector<Eigen::Vector3d>& from,
                      const std::vector<Eigen::Vector3d>& to, Eigen::Vector3d& wa,
                      Eigen::Vector3d& wb) {
    double worst = -1;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      Eigen::Vector3d bq = to.front();
      for (const auto& q : to) {
        double d = (p - q).norm();
        if (d < best) { best = d; bq = q; }
      }
      if (best > worst) { worst = best; wa = p; wb = bq; }
    }
    return worst;
  };
  Eigen::Vector3d a1, b1, a2, b2;
  double d_ab = directed(pa, pb, a1, b1);
  double d_ba = directed(pb, pa, b2, a2);
  if (d_ab >= d_ba) {
    est.value = d_ab;
    est.witness_a = a1;
    est.witness_b = b1;
  } else {
    est.value = d_ba;
    est.witness_a = a2;
    est.witness_b = b2;
  }
  return est;
}

double OneSidedLimitResult::weighted_area() const {
  double s = 0;
  for (const auto& [k, cells] : v_k) s += static_cast<double>(k) * cells.size();
  return s * cell_area;
}

double OneSidedLimitResult::plain_area() const {
  return static_cast<double>(v_total.size()) * cell_area;
}

OneSidedLimitResult one_sided_limit(const ScalarField& field, double c, int side,
                                    const OneSidedLimitParams& params) {
  const int dim = field.arity();
  const int m = params.m > 0 ? params.m : default_raster_cells(dim);
  auto part = std::make_shared<SphericalPartition>(SphericalPartition::make(dim, m));
  OneSidedLimitResult out;
  out.cell_area = part->cell_area();

  std::vector<std::vector<std::int32_t>> fibers;
  std::vector<std::vector<int>> covered_sets;
  for (int j = 0; j <= params.J; ++j) {
    double t = c + side * params.delta0 * std::pow(2.0, -j);
    bool near_crit = false;
    for (double cv : params.critical_values)
      if (std::abs(t - cv) < 1e-9 * (1 + std::abs(cv))) near_crit = true;
    if (near_crit) continue;
    double R = params.R;
    if (params.radius_growth > 0)
      R = std::max(R, params.radius_growth / std::abs(t - c));
    double h = params.h > 0 ? params.h * (R / params.R) : auto_cell_size(dim, R);
    LevelSetMesh mesh = extract_level(field, t, R, h, params.extract);
    SphericalRaster raster = rasterize(mesh, field, m, part);
    out.t_samples.push_back(t);
    fibers.push_back(raster.fiber_count);
    covered_sets.push_back(raster.covered_cells());
  }
  for (std::size_t j = 0; j + 1 < covered_sets.size(); ++j) {
    if (covered_sets[j].empty() || covered_sets[j + 1].empty()) {
      out.hausdorff_seq.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.hausdorff_seq.push_back(hausdorff(covered_sets[j], covered_sets[j + 1], *part).value);
  }
  const int w = std::min<int>(params.window, static_cast<int>(fibers.size()));
  if (w == 0) return out;
  for (int cell = 0; cell < m; ++cell) {
    std::int32_t v = fibers[fibers.size() - 1][cell];
    bool stable = true;
    for (int k = 2; k <= w; ++k)
      if (fibers[fibers.size() - k][cell] != v) stable = false;
    if (!stable) {
      ++out.oscillating_cells;
      continue;
    }
    if (v > 0) {
      out.v_k[v].push_back(cell);
      out.v_total.push_back(cell);
    }
  }
  return out;
}

// --- Escape diagnostic -------------------------------------------------------

namespace {

struct Tracer {
  const Evaluator& ev;
  int dim;
  Eigen::Vector3d u;
  Eigen::Matrix<double, 3, 2> B;  // basis of u-perp

  bool constraint(const Eigen::Vector3d& x, Eigen::VectorXd& G, Eigen::MatrixXd& A,
                  Eigen::Vector3d& grad, double& fval) const {
    Jet2 jet;
    if (!ev.jet2(x.data(), jet)) return false;
    fval = jet.value;
    grad = Eigen::Vector3d::Zero();
    for (int d = 0; d < dim; ++d) grad[d] = jet.grad[d];
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) H(i, j) = jet.hess_at(i, j);
    G.resize(dim - 1);
    A.resize(dim - 1, dim);
    for (int k = 0; k < dim - 1; ++k) {
      G[k] = B.col(k).head(dim).dot(grad.head(dim));
      A.row(k) = (B.col(k).head(dim).transpose() * H.topLeftCorner(dim, dim));
    }
    return true;
  }

  bool tangent(const Eigen::MatrixXd& A, Eigen::Vector3d& tau) const {
    if (dim == 2) {
      tau = Eigen::Vector3d(-A(0, 1), A(0, 0), 0.0);
    } else {
      Eigen::Vector3d r0 = A.row(0), r1 = A.row(1);
      tau = r0.cross(r1);
    }
    double n = tau.norm();
    if (n < 1e-14) return false;
    tau /= n;
    return true;
  }

  bool correct(Eigen::Vector3d& x, const Eigen::Vector3d& tau, int& iters) const {
    Eigen::VectorXd G;
    Eigen::MatrixXd A;
    Eigen::Vector3d grad;
    double fv;
    for (iters = 0; iters < 8; ++iters) {
      if (!constraint(x, G, A, grad, fv)) return false;
      double scale = 1.0 + grad.norm();
      if (G.norm() <= 1e-11 * scale) return true;
      Eigen::MatrixXd M(dim, dim);
      Eigen::VectorXd rhs(dim);
      for (int k = 0; k < dim - 1; ++k) {
        M.row(k) = A.row(k);
        rhs[k] = -G[k];
      }
      M.row(dim - 1) = tau.head(dim).transpose();
      rhs[dim - 1] = 0.0;
      Eigen::VectorXd delta = M.fullPivLu().solve(rhs);
      if (!delta.allFinite()) return false;
      for (int d = 0; d < dim; ++d) x[d] += delta[d];
    }
    Eigen::VectorXd G2;
    Eigen::Vector3d g2;
    double f2;
    Eigen::MatrixXd A2;
    if (!constraint(x, G2, A2, g2, f2)) return false;
    return G2.norm() <= 1e-9 * (1.0 + g2.norm());
  }
};

struct EndRecord {
  bool open = false;
  bool exits = false;
  bool stalled = false;
  bool hit_critical = false;
  double f_end = 0.0;
  std::optional<double> f_limit;
};

EndRecord trace_direction(const Tracer& tr, const Eigen::Vector3d& start, int dir,
                          double trace_radius, int max_steps, double& fmin, double& fmax,
                          std::vector<Eigen::Vector3d>* polyline, int& steps_out) {
  EndRecord end;
  Eigen::Vector3d x = start;
  Eigen::VectorXd G;
  Eigen::MatrixXd A;
  Eigen::Vector3d grad, tau_prev = Eigen::Vector3d::Zero();
  double fv;
  if (!tr.constraint(x, G, A, grad, fv)) { end.stalled = true; return end; }
  Eigen::Vector3d tau;
  if (!tr.tangent(A, tau)) { end.stalled = true; return end; }
  tau *= dir;
  tau_prev = tau;

  const double mark1 = trace_radius / 4, mark2 = trace_radius / 2;
  double f_at_mark[3] = {0, 0, 0};
  bool seen_mark[3] = {false, false, false};
  double r_prev = x.norm();
  double ds = 0.01 * (1.0 + x.norm());
  int steps = 0;
  while (steps < max_steps) {
    ++steps;
    Eigen::Vector3d xp = x + ds * tau;
    int iters = 0;
    Eigen::Vector3d xc = xp;
    bool ok = tr.correct(xc, tau, iters);
    if (ok) {
      Eigen::VectorXd Gn;
      Eigen::MatrixXd An;
      Eigen::Vector3d gn;
      double fn;
      if (!tr.constraint(xc, Gn, An, gn, fn)) ok = false;
      else {
        Eigen::Vector3d tau_new;
        if (!tr.tangent(An, tau_new)) ok = false;
        else {
          if (tau_new.dot(tau) < 0) tau_new = -tau_new;
          double turn = std::acos(std::clamp(tau_new.dot(tau), -1.0, 1.0));
          if (turn > 0.5 && ds > 1e-11 * (1 + x.norm())) {
            ok = false;  // too much bend, retry smaller
          } else {
            // Accept.
            double r_new = xc.norm();
            double marks[3] = {mark1, mark2, trace_radius};
            for (int q = 0; q < 3; ++q) {
              if (!seen_mark[q] && r_prev < marks[q] && r_new >= marks[q]) {
                double w = (marks[q] - r_prev) / std::max(1e-300, r_new - r_prev);
                f_at_mark[q] = fv + w * (fn - fv);
                seen_mark[q] = true;
              }
            }
            x = xc;
            fv = fn;
            grad = gn;
            r_prev = r_new;
            fmin = std::min(fmin, fv);
            fmax = std::max(fmax, fv);
            if (polyline && steps % 8 == 0) polyline->push_back(x);
            if (grad.norm() < grad_floor(x, tr.dim)) {
              end.hit_critical = true;
              end.f_end = fv;
              break;
            }
            if (r_new >= trace_radius) {
              end.open = true;
              end.exits = true;
              end.f_end = fv;
              if (seen_mark[0] && seen_mark[1] && seen_mark[2]) {
                double d1 = f_at_mark[1] - f_at_mark[0];
                double d2 = f_at_mark[2] - f_at_mark[1];
                if (std::abs(d2 - d1) > 1e-300) {
                  double ext = f_at_mark[2] - d2 * d2 / (d2 - d1);
                  end.f_limit = ext;
                }
              }
              break;
            }
            // Loop closure against the departure point.
            if (steps > 24 && (x - start).norm() < 0.5 * ds) break;
            tau = tau_new;
            if (iters <= 2 && turn < 0.1) ds = std::min(ds * 1.4, 0.05 * (1 + x.norm()));
            continue;
          }
        }
      }
    }
    ds *= 0.5;
    if (ds < 1e-12 * (1 + x.norm())) {
      end.open = true;
      end.stalled = true;
      end.f_end = fv;
      break;
    }
  }
  if (steps >= max_steps) {
    end.open = true;
    end.stalled = true;
    end.f_end = fv;
  }
  steps_out += steps;
  return end;
}

}  // namespace

EscapeComponent trace_gauss_fiber(const ScalarField& field, const Eigen::Vector3d& x0,
                                  double c, const EscapeParams& params) {
  Evaluator ev(field);
  const int dim = field.arity();
  double v, g[3];
  EscapeComponent comp;
  comp.seed = x0;
  if (!ev.jet1(x0.data(), v, g)) {
    comp.stalled = true;
    return comp;
  }
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
  for (int d = 0; d < dim; ++d) grad[d] = g[d];
  Eigen::Vector3d u = grad.normalized();
  Tracer tr{ev, dim, u, frame_from_normal(Eigen::Vector3d::Zero(), u, dim).tangent_basis};

  double trace_radius = params.trace_radius > 0 ? params.trace_radius
                                                : 32.0 * std::max(1.0, x0.norm());
  comp.f_min = comp.f_max = v;
  int steps = 0;
  EndRecord e1 = trace_direction(tr, x0, +1, trace_radius, params.max_steps, comp.f_min,
                                 comp.f_max, nullptr, steps);
  EndRecord e2 = trace_direction(tr, x0, -1, trace_radius, params.max_steps, comp.f_min,
                                 comp.f_max, nullptr, steps);
  comp.steps = steps;
  comp.exits_ball = e1.exits || e2.exits;
  comp.stalled = e1.stalled || e2.stalled;
  comp.hit_critical = e1.hit_critical || e2.hit_critical;
  comp.crosses_c = comp.f_min < c && c < comp.f_max;
  auto assign = [&](const EndRecord& e) {
    if (!e.open) return;
    if (e.f_end <= comp.f_min + 1e-12 * (1 + std::abs(comp.f_min))) {
      comp.min_open = true;
      if (e.f_limit) comp.f_limit_low = e.f_limit;
    }
    if (e.f_end >= comp.f_max - 1e-12 * (1 + std::abs(comp.f_max))) {
      comp.max_open = true;
      if (e.f_limit) comp.f_limit_high = e.f_limit;
    }
  };
  assign(e1);
  assign(e2);
  return comp;
}

std::vector<EscapeComponent> escape_diagnostic(const ScalarField& field, double c,
                                               const Eigen::Vector3d& u, double eps,
                                               double R, const EscapeParams& params) {
  const int dim = field.arity();
  Evaluator ev(field);
  std::vector<EscapeComponent> out;
  std::vector<Eigen::Vector3d> seeds;

  for (double t : {c - eps, c + eps}) {
    double h = params.h > 0 ? params.h : auto_cell_size(dim, R);
    LevelSetMesh mesh = extract_level(field, t, R, h, params.extract);
    // Simplices whose vertex-normal simplex covers u give Newton seeds.
    for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
      const auto& sx = mesh.simplices[s];
      bool nc = false;
      for (int k = 0; k < dim; ++k)
        if (mesh.vertex_flags[sx[k]] & kVertexNearCritical) nc = true;
      if (nc) continue;
      bool covers;
      if (dim == 2) {
        const Eigen::Vector3d& na = mesh.vertex_normal[sx[0]];
        const Eigen::Vector3d& nb = mesh.vertex_normal[sx[1]];
        double dth = turning2(na, nb);
        double delta = std::remainder(std::atan2(u.y(), u.x()) - std::atan2(na.y(), na.x()),
                                      2 * M_PI);
        covers = (dth > 0 && delta >= 0 && delta <= dth) ||
                 (dth < 0 && delta <= 0 && delta >= dth);
      } else {
        const Eigen::Vector3d& n0 = mesh.vertex_normal[sx[0]];
        const Eigen::Vector3d& n1 = mesh.vertex_normal[sx[1]];
        const Eigen::Vector3d& n2 = mesh.vertex_normal[sx[2]];
        double det = n0.dot(n1.cross(n2));
        if (std::abs(det) < 1e-14) continue;
        double sign = det > 0 ? 1.0 : -1.0;
        covers = sign * n0.dot(n1.cross(u)) >= 0 && sign * n1.dot(n2.cross(u)) >= 0 &&
                 sign * n2.dot(n0.cross(u)) >= 0;
      }
      if (!covers) continue;
      auto p = newton_normal_preimage(ev, t, u, mesh.simplex_barycenter(static_cast<int>(s)));
      if (!p) continue;
      double v, g[3];
      if (!ev.jet1(p->data(), v, g)) continue;
      Eigen::Vector3d grad = Eigen::Vector3d::Zero();
      for (int d = 0; d < dim; ++d) grad[d] = g[d];
      if (grad.norm() < grad_floor(*p, dim)) continue;
      if (grad.normalized().dot(u) < 0.9) continue;  // aligned seeds only
      bool dup = false;
      for (const auto& q : seeds)
        if ((q - *p).norm() < 2 * h) dup = true;
      if (!dup) seeds.push_back(*p);
    }
  }

  EscapeParams tp = params;
  if (tp.trace_radius <= 0) tp.trace_radius = 32.0 * R;
  for (const auto& seed : seeds) {
    // Skip seeds lying on an already-traced component.
    bool done = false;
    for (const auto& comp : out) {
      if ((comp.seed - seed).norm() < 1e-6) done = true;
    }
    if (done) continue;
    EscapeComponent comp = trace_gauss_fiber(field, seed, c, tp);
    // Deduplicate by f-range overlap and seed proximity.
    bool dup = false;
    for (const auto& prev : out) {
      if ((prev.seed - seed).norm() < 4 * auto_cell_size(dim, R) &&
          std::abs(prev.f_min - comp.f_min) < 1e-6 * (1 + std::abs(comp.f_min)) &&
          std::abs(prev.f_max - comp.f_max) < 1e-6 * (1 + std::abs(comp.f_max)))
        dup = true;
    }
    if (!dup) out.push_back(comp);
  }
  return out;
}

}  // namespace levelcurv
