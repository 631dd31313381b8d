#include "levelcurv/levelset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace levelcurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  int T = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (T < 1) T = 1;
  if (T == 1 || n < 256) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::int64_t chunk = (n + T - 1) / T;
  for (int t = 0; t < T; ++t) {
    std::int64_t lo = t * chunk, hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

struct UnionFind {
  std::vector<std::int32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<std::int32_t>(i);
  }
  std::int32_t find(std::int32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a); b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct EdgeCut {
  std::int64_t key;   // min_cid * n_corners + max_cid
  double s;           // interpolation parameter from the lower corner id
};

struct Grid {
  int dim;
  double h;
  double R;
  int i_min, i_max;   // same range on every axis
  std::int64_t n1;    // corners per axis
  std::int64_t n_corners;

  double coord(std::int64_t i) const { return (static_cast<double>(i + i_min) + 0.5) * h; }

  std::int64_t cid2(std::int64_t i, std::int64_t j) const { return i * n1 + j; }
  std::int64_t cid3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return (i * n1 + j) * n1 + k;
  }
  Eigen::Vector3d corner_pos(std::int64_t cid) const {
    if (dim == 2) {
      return {coord(cid / n1), coord(cid % n1), 0.0};
    }
    std::int64_t k = cid % n1, rest = cid / n1;
    return {coord(rest / n1), coord(rest % n1), coord(k)};
  }
};

Grid make_grid(int dim, double R, double h) {
  Grid g;
  g.dim = dim;
  g.h = h;
  g.R = R;
  g.i_min = static_cast<int>(std::ceil(-R / h - 0.5));
  g.i_max = static_cast<int>(std::floor(R / h - 0.5));
  g.n1 = g.i_max - g.i_min + 1;
  g.n_corners = 1;
  for (int d = 0; d < dim; ++d) g.n_corners *= g.n1;
  return g;
}

// ---------------------------------------------------------------------------
// Marching squares (n = 2). Segments are oriented so the f > t side lies to
// the right of travel, which makes the left-rotated segment normal agree
// with nu_f.
struct Seg2 {
  EdgeCut a, b;
};

// Edge ids inside a cell: 0 bottom, 1 right, 2 top, 3 left.
void marching_square(const Grid& g, std::int64_t i, std::int64_t j, const double f[4],
                     double t, std::vector<Seg2>& out) {
  int cs = 0;
  if (f[0] > t) cs |= 1;  // (i, j)
  if (f[1] > t) cs |= 2;  // (i+1, j)
  if (f[2] > t) cs |= 4;  // (i+1, j+1)
  if (f[3] > t) cs |= 8;  // (i, j+1)
  if (cs == 0 || cs == 15) return;

  auto cut = [&](int edge) -> EdgeCut {
    std::int64_t ca, cb;
    double fa, fb;
    switch (edge) {
      case 0: ca = g.cid2(i, j);     cb = g.cid2(i + 1, j);     fa = f[0]; fb = f[1]; break;
      case 1: ca = g.cid2(i + 1, j); cb = g.cid2(i + 1, j + 1); fa = f[1]; fb = f[2]; break;
      case 2: ca = g.cid2(i, j + 1); cb = g.cid2(i + 1, j + 1); fa = f[3]; fb = f[2]; break;
      default: ca = g.cid2(i, j);    cb = g.cid2(i, j + 1);     fa = f[0]; fb = f[3]; break;
    }
    if (ca > cb) { std::swap(ca, cb); std::swap(fa, fb); }
    double s = (t - fa) / (fb - fa);
    s = std::clamp(s, 0.0, 1.0);
    return EdgeCut{ca * g.n_corners + cb, s};
  };
  auto emit = [&](int ea, int eb) { out.push_back(Seg2{cut(ea), cut(eb)}); };

  switch (cs) {
    case 1:  emit(3, 0); break;
    case 2:  emit(0, 1); break;
    case 4:  emit(1, 2); break;
    case 8:  emit(2, 3); break;
    case 3:  emit(3, 1); break;
    case 6:  emit(0, 2); break;
    case 12: emit(1, 3); break;
    case 9:  emit(2, 0); break;
    case 7:  emit(3, 2); break;
    case 11: emit(2, 1); break;
    case 13: emit(1, 0); break;
    case 14: emit(0, 3); break;
    case 5: case 10: {
      // Asymptotic decider: value of the bilinear interpolant at its saddle.
      double denom = f[0] + f[2] - f[1] - f[3];
      double center = (std::abs(denom) > 1e-300)
                          ? (f[0] * f[2] - f[1] * f[3]) / denom
                          : 0.25 * (f[0] + f[1] + f[2] + f[3]);
      if (cs == 5) {
        if (center > t) { emit(1, 0); emit(3, 2); }
        else            { emit(3, 0); emit(1, 2); }
      } else {
        if (center > t) { emit(0, 3); emit(2, 1); }
        else            { emit(0, 1); emit(2, 3); }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Marching tetrahedra (n = 3) on the Kuhn subdivision. All cubes use the same
// main diagonal so faces match across neighbours and the mesh is watertight.
struct Tri3 {
  EdgeCut v[3];
};

constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                             {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

void marching_cube_tets(const Grid& g, std::int64_t i, std::int64_t j, std::int64_t k,
                        const double f[8], double t, std::vector<Tri3>& out) {
  bool any_lo = false, any_hi = false;
  for (int c = 0; c < 8; ++c) {
    if (f[c] > t) any_hi = true; else any_lo = true;
  }
  if (!any_lo || !any_hi) return;

  auto corner_cid = [&](int mask) {
    return g.cid3(i + (mask & 1), j + ((mask >> 1) & 1), k + ((mask >> 2) & 1));
  };
  auto corner_rel = [&](int mask) {
    return Eigen::Vector3d(mask & 1, (mask >> 1) & 1, (mask >> 2) & 1);
  };

  for (const auto& perm : kPerm) {
    int m[4];
    m[0] = 0;
    m[1] = 1 << perm[0];
    m[2] = m[1] | (1 << perm[1]);
    m[3] = 7;
    double fv[4] = {f[m[0]], f[m[1]], f[m[2]], f[m[3]]};
    int pos_mask = 0, n_pos = 0;
    for (int c = 0; c < 4; ++c)
      if (fv[c] > t) { pos_mask |= 1 << c; ++n_pos; }
    if (n_pos == 0 || n_pos == 4) continue;

    auto cut = [&](int a, int b) -> EdgeCut {
      std::int64_t ca = corner_cid(m[a]), cb = corner_cid(m[b]);
      double fa = fv[a], fb = fv[b];
      if (ca > cb) { std::swap(ca, cb); std::swap(fa, fb); }
      double s = (t - fa) / (fb - fa);
      s = std::clamp(s, 0.0, 1.0);
      return EdgeCut{ca * g.n_corners + cb, s};
    };
    auto cut_rel = [&](int a, int b) -> Eigen::Vector3d {
      double s = (t - fv[a]) / (fv[b] - fv[a]);
      return corner_rel(m[a]) + s * (corner_rel(m[b]) - corner_rel(m[a]));
    };
    // Reference direction toward the f > t side, used to fix the winding.
    Eigen::Vector3d dpos = Eigen::Vector3d::Zero(), dneg = Eigen::Vector3d::Zero();
    int np = 0, nn = 0;
    for (int c = 0; c < 4; ++c) {
      if (pos_mask & (1 << c)) { dpos += corner_rel(m[c]); ++np; }
      else                     { dneg += corner_rel(m[c]); ++nn; }
    }
    Eigen::Vector3d ref = dpos / np - dneg / nn;

    auto push = [&](int a0, int b0, int a1, int b1, int a2, int b2) {
      Tri3 tri{{cut(a0, b0), cut(a1, b1), cut(a2, b2)}};
      Eigen::Vector3d p0 = cut_rel(a0, b0), p1 = cut_rel(a1, b1), p2 = cut_rel(a2, b2);
      if ((p1 - p0).cross(p2 - p0).dot(ref) < 0) std::swap(tri.v[1], tri.v[2]);
      out.push_back(tri);
    };

    if (n_pos == 1 || n_pos == 3) {
      int lone = -1;
      for (int c = 0; c < 4; ++c) {
        bool p = (pos_mask >> c) & 1;
        if ((n_pos == 1 && p) || (n_pos == 3 && !p)) lone = c;
      }
      int others[3], w = 0;
      for (int c = 0; c < 4; ++c)
        if (c != lone) others[w++] = c;
      push(lone, others[0], lone, others[1], lone, others[2]);
    } else {
      int P[2], N[2], wp = 0, wn = 0;
      for (int c = 0; c < 4; ++c) {
        if ((pos_mask >> c) & 1) P[wp++] = c; else N[wn++] = c;
      }
      // Quad cycle (P0N0, P0N1, P1N1, P1N0) split into two triangles.
      push(P[0], N[0], P[0], N[1], P[1], N[1]);
      push(P[0], N[0], P[1], N[1], P[1], N[0]);
    }
  }
}

// ---------------------------------------------------------------------------

struct Projector {
  const Grid& g;
  const Evaluator& ev;
  double t;

  // Damped Newton along grad f / |grad f|^2, falling back to bisection along
  // the generating grid edge (whose endpoints bracket t by construction).
  // Returns 0 on Newton success, 1 on fallback success, -1 on failure.
  int project(std::int64_t key, double s0, Eigen::Vector3d& out) const {
    std::int64_t ca = key / g.n_corners, cb = key % g.n_corners;
    Eigen::Vector3d pa = g.corner_pos(ca), pb = g.corner_pos(cb);
    Eigen::Vector3d x = pa + s0 * (pb - pa);
    const double tol = 1e-10 * (1.0 + std::abs(t));
    const int n = g.dim;

    double v, grad[3];
    double r_prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int it = 0; it < 20; ++it) {
      if (!ev.jet1(x.data(), v, grad)) { ok = false; break; }
      double r = v - t;
      if (std::abs(r) <= tol) { out = x; return 0; }
      double g2 = 0;
      for (int d = 0; d < n; ++d) g2 += grad[d] * grad[d];
      if (g2 < 1e-30) { ok = false; break; }
      if (it > 0 && std::abs(r) > (1.0 - 1e-6) * r_prev) { ok = false; break; }
      r_prev = std::abs(r);
      double lam = 1.0;
      bool accepted = false;
      for (int half = 0; half < 8; ++half) {
        Eigen::Vector3d xn = x;
        for (int d = 0; d < n; ++d) xn[d] -= lam * r * grad[d] / g2;
        double vn = ev.value(xn.data());
        if (std::isfinite(vn) && std::abs(vn - t) < std::abs(r)) {
          x = xn;
          accepted = true;
          break;
        }
        lam *= 0.5;
      }
      if (!accepted) { ok = false; break; }
    }
    (void)ok;

    // Bisection along the original edge.
    double fa = ev.value(pa.data()), fb = ev.value(pb.data());
    if (!std::isfinite(fa) || !std::isfinite(fb) || (fa - t) * (fb - t) > 0) return -1;
    Eigen::Vector3d lo = pa, hi = pb;
    double flo = fa;
    for (int it = 0; it < 80; ++it) {
      Eigen::Vector3d mid = 0.5 * (lo + hi);
      double fm = ev.value(mid.data());
      if (!std::isfinite(fm)) return -1;
      if (std::abs(fm - t) <= tol) { out = mid; return 1; }
      if ((flo - t) * (fm - t) <= 0) hi = mid;
      else { lo = mid; flo = fm; }
    }
    Eigen::Vector3d mid = 0.5 * (lo + hi);
    if (std::abs(ev.value(mid.data()) - t) <= 10 * tol) { out = mid; return 1; }
    return -1;
  }
};

struct CoarsePass {
  std::int64_t nc1 = 0;            // coarse corners per axis
  int P = 1;
  std::vector<double> values;      // coarse corner f values
  std::vector<std::int64_t> flagged;  // coarse cell linear ids, sorted
};

// Flags every coarse block that can intersect the level: blocks whose corner
// values straddle t, plus a safety band |f - t| <= safety * |grad est| * diag
// so sub-corner slivers are not missed, all dilated by one block.
CoarsePass coarse_pass_2d(const Grid& g, const ScalarField& field, double t,
                          const ExtractOptions& opts) {
  CoarsePass cp;
  cp.P = std::max(1, opts.prune_factor);
  std::int64_t ncell = (g.n1 - 1 + cp.P - 1) / cp.P;  // coarse cells per axis
  cp.nc1 = ncell + 1;
  cp.values.assign(cp.nc1 * cp.nc1, 0.0);
  parallel_for(cp.nc1, opts.threads, [&](std::int64_t lo, std::int64_t hi) {
    Evaluator ev(field);
    for (std::int64_t I = lo; I < hi; ++I) {
      double x = g.coord(std::min<std::int64_t>(I * cp.P, g.n1 - 1));
      for (std::int64_t J = 0; J < cp.nc1; ++J) {
        double y = g.coord(std::min<std::int64_t>(J * cp.P, g.n1 - 1));
        double p[3] = {x, y, 0};
        cp.values[I * cp.nc1 + J] = ev.value(p);
      }
    }
  });

  const double diag = cp.P * g.h * std::sqrt(2.0);
  std::vector<std::uint8_t> flag(ncell * ncell, 0);
  for (std::int64_t I = 0; I < ncell; ++I) {
    for (std::int64_t J = 0; J < ncell; ++J) {
      double cx = g.coord(std::min<std::int64_t>(I * cp.P + cp.P / 2, g.n1 - 1));
      double cy = g.coord(std::min<std::int64_t>(J * cp.P + cp.P / 2, g.n1 - 1));
      if (std::hypot(cx, cy) > g.R + diag) continue;
      double v[4] = {cp.values[I * cp.nc1 + J], cp.values[(I + 1) * cp.nc1 + J],
                     cp.values[(I + 1) * cp.nc1 + J + 1], cp.values[I * cp.nc1 + J + 1]};
      bool nan = false, lo = false, hi = false;
      double mind = std::numeric_limits<double>::infinity();
      for (double w : v) {
        if (!std::isfinite(w)) { nan = true; break; }
        if (w > t) hi = true; else lo = true;
        mind = std::min(mind, std::abs(w - t));
      }
      if (nan || (lo && hi)) { flag[I * ncell + J] = 1; continue; }
      double ge = 0.0;
      ge = std::max(ge, std::abs(v[1] - v[0]));
      ge = std::max(ge, std::abs(v[2] - v[1]));
      ge = std::max(ge, std::abs(v[2] - v[3]));
      ge = std::max(ge, std::abs(v[3] - v[0]));
      ge /= cp.P * g.h;
      if (mind <= opts.prune_safety * ge * diag) flag[I * ncell + J] = 1;
    }
  }
  // Dilate by one block.
  for (std::int64_t I = 0; I < ncell; ++I)
    for (std::int64_t J = 0; J < ncell; ++J) {
      if (!flag[I * ncell + J]) continue;
      if (flag[I * ncell + J] == 2) continue;
      for (std::int64_t di = -1; di <= 1; ++di)
        for (std::int64_t dj = -1; dj <= 1; ++dj) {
          std::int64_t a = I + di, b = J + dj;
          if (a < 0 || b < 0 || a >= ncell || b >= ncell) continue;
          if (!flag[a * ncell + b]) flag[a * ncell + b] = 2;
        }
    }
  for (std::int64_t c = 0; c < ncell * ncell; ++c)
    if (flag[c]) cp.flagged.push_back(c);
  return cp;
}

CoarsePass coarse_pass_3d(const Grid& g, const ScalarField& field, double t,
                          const ExtractOptions& opts) {
  CoarsePass cp;
  cp.P = std::max(1, opts.prune_factor);
  std::int64_t ncell = (g.n1 - 1 + cp.P - 1) / cp.P;
  cp.nc1 = ncell + 1;
  cp.values.assign(cp.nc1 * cp.nc1 * cp.nc1, 0.0);
  parallel_for(cp.nc1, opts.threads, [&](std::int64_t lo, std::int64_t hi) {
    Evaluator ev(field);
    for (std::int64_t I = lo; I < hi; ++I) {
      double x = g.coord(std::min<std::int64_t>(I * cp.P, g.n1 - 1));
      for (std::int64_t J = 0; J < cp.nc1; ++J) {
        double y = g.coord(std::min<std::int64_t>(J * cp.P, g.n1 - 1));
        for (std::int64_t K = 0; K < cp.nc1; ++K) {
          double z = g.coord(std::min<std::int64_t>(K * cp.P, g.n1 - 1));
          double p[3] = {x, y, z};
          cp.values[(I * cp.nc1 + J) * cp.nc1 + K] = ev.value(p);
        }
      }
    }
  });

  const double diag = cp.P * g.h * std::sqrt(3.0);
  std::vector<std::uint8_t> flag(ncell * ncell * ncell, 0);
  auto cv = [&](std::int64_t I, std::int64_t J, std::int64_t K) {
    return cp.values[(I * cp.nc1 + J) * cp.nc1 + K];
  };
  for (std::int64_t I = 0; I < ncell; ++I)
    for (std::int64_t J = 0; J < ncell; ++J)
      for (std::int64_t K = 0; K < ncell; ++K) {
        double cx = g.coord(std::min<std::int64_t>(I * cp.P + cp.P / 2, g.n1 - 1));
        double cy = g.coord(std::min<std::int64_t>(J * cp.P + cp.P / 2, g.n1 - 1));
        double cz = g.coord(std::min<std::int64_t>(K * cp.P + cp.P / 2, g.n1 - 1));
        if (std::sqrt(cx * cx + cy * cy + cz * cz) > g.R + diag) continue;
        double v[8];
        int w = 0;
        bool nan = false, lo = false, hi = false;
        double mind = std::numeric_limits<double>::infinity();
        for (int dk = 0; dk <= 1; ++dk)
          for (int dj = 0; dj <= 1; ++dj)
            for (int di = 0; di <= 1; ++di) v[w++] = cv(I + di, J + dj, K + dk);
        double gmax = 0.0;
        for (int a = 0; a < 8; ++a) {
          if (!std::isfinite(v[a])) { nan = true; break; }
          if (v[a] > t) hi = true; else lo = true;
          mind = std::min(mind, std::abs(v[a] - t));
          for (int b = a + 1; b < 8; ++b)
            gmax = std::max(gmax, std::abs(v[b] - v[a]));
        }
        std::int64_t id = (I * ncell + J) * ncell + K;
        if (nan || (lo && hi)) { flag[id] = 1; continue; }
        double ge = gmax / (cp.P * g.h);
        if (mind <= opts.prune_safety * ge * diag) flag[id] = 1;
      }
  for (std::int64_t I = 0; I < ncell; ++I)
    for (std::int64_t J = 0; J < ncell; ++J)
      for (std::int64_t K = 0; K < ncell; ++K) {
        std::int64_t id = (I * ncell + J) * ncell + K;
        if (flag[id] != 1) continue;
        for (std::int64_t a = std::max<std::int64_t>(0, I - 1); a <= std::min(ncell - 1, I + 1); ++a)
          for (std::int64_t b = std::max<std::int64_t>(0, J - 1); b <= std::min(ncell - 1, J + 1); ++b)
            for (std::int64_t c = std::max<std::int64_t>(0, K - 1); c <= std::min(ncell - 1, K + 1); ++c) {
              std::int64_t q = (a * ncell + b) * ncell + c;
              if (!flag[q]) flag[q] = 2;
            }
      }
  for (std::int64_t c = 0; c < static_cast<std::int64_t>(flag.size()); ++c)
    if (flag[c]) cp.flagged.push_back(c);
  return cp;
}

}  // namespace

double LevelSetMesh::simplex_measure(int s) const {
  const auto& sx = simplices[s];
  if (dim == 2) return (vertices[sx[1]] - vertices[sx[0]]).norm();
  return 0.5 * (vertices[sx[1]] - vertices[sx[0]])
                   .cross(vertices[sx[2]] - vertices[sx[0]])
                   .norm();
}

double LevelSetMesh::total_measure() const {
  double m = 0;
  for (int s = 0; s < static_cast<int>(simplices.size()); ++s) m += simplex_measure(s);
  return m;
}

Eigen::Vector3d LevelSetMesh::simplex_barycenter(int s) const {
  const auto& sx = simplices[s];
  if (dim == 2) return 0.5 * (vertices[sx[0]] + vertices[sx[1]]);
  return (vertices[sx[0]] + vertices[sx[1]] + vertices[sx[2]]) / 3.0;
}

double auto_cell_size(int dim, double R) {
  return dim == 2 ? R / 400.0 : R / 40.0;
}

LevelSetMesh extract_level(const ScalarField& field, double t, double R, double h,
                           const ExtractOptions& opts) {
  const int dim = field.arity();
  if (!(h > 0) || h >= R / 8.0)
    throw std::invalid_argument("extract_level: need 0 < h < R/8");

  Grid g = make_grid(dim, R, h);
  LevelSetMesh mesh;
  mesh.dim = dim;
  mesh.level = t;
  mesh.radius = R;
  mesh.cell_size = h;
  if (g.n1 < 2) return mesh;

  // --- Fine marching over flagged coarse blocks ---------------------------
  std::vector<Seg2> segs;
  std::vector<Tri3> tris;
  int skipped_nan = 0;

  if (dim == 2) {
    CoarsePass cp = coarse_pass_2d(g, field, t, opts);
    std::int64_t ncell = cp.nc1 - 1;
    const int P = cp.P;
    std::vector<std::vector<Seg2>> chunks(cp.flagged.size());
    std::vector<int> nan_counts(cp.flagged.size(), 0);
    parallel_for(static_cast<std::int64_t>(cp.flagged.size()), opts.threads,
                 [&](std::int64_t lo, std::int64_t hi) {
      Evaluator ev(field);
      std::vector<double> local((P + 1) * (P + 1));
      for (std::int64_t c = lo; c < hi; ++c) {
        std::int64_t I = cp.flagged[c] / ncell, J = cp.flagged[c] % ncell;
        std::int64_t fi0 = I * P, fj0 = J * P;
        std::int64_t fi1 = std::min<std::int64_t>(fi0 + P, g.n1 - 1);
        std::int64_t fj1 = std::min<std::int64_t>(fj0 + P, g.n1 - 1);
        for (std::int64_t i = fi0; i <= fi1; ++i) {
          double x = g.coord(i);
          for (std::int64_t j = fj0; j <= fj1; ++j) {
            double p[3] = {x, g.coord(j), 0};
            local[(i - fi0) * (P + 1) + (j - fj0)] = ev.value(p);
          }
        }
        for (std::int64_t i = fi0; i < fi1; ++i) {
          for (std::int64_t j = fj0; j < fj1; ++j) {
            double cx = 0.5 * (g.coord(i) + g.coord(i + 1));
            double cy = 0.5 * (g.coord(j) + g.coord(j + 1));
            if (std::hypot(cx, cy) > g.R + h) continue;
            double f[4] = {local[(i - fi0) * (P + 1) + (j - fj0)],
                           local[(i + 1 - fi0) * (P + 1) + (j - fj0)],
                           local[(i + 1 - fi0) * (P + 1) + (j + 1 - fj0)],
                           local[(i - fi0) * (P + 1) + (j + 1 - fj0)]};
            if (!std::isfinite(f[0]) || !std::isfinite(f[1]) || !std::isfinite(f[2]) ||
                !std::isfinite(f[3])) {
              ++nan_counts[c];
              continue;
            }
            marching_square(g, i, j, f, t, chunks[c]);
          }
        }
      }
    });
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      segs.insert(segs.end(), chunks[c].begin(), chunks[c].end());
      skipped_nan += nan_counts[c];
    }
  } else {
    CoarsePass cp = coarse_pass_3d(g, field, t, opts);
    std::int64_t ncell = cp.nc1 - 1;
    const int P = cp.P;
    std::vector<std::vector<Tri3>> chunks(cp.flagged.size());
    std::vector<int> nan_counts(cp.flagged.size(), 0);
    parallel_for(static_cast<std::int64_t>(cp.flagged.size()), opts.threads,
                 [&](std::int64_t lo, std::int64_t hi) {
      Evaluator ev(field);
      const int L = P + 1;
      std::vector<double> local(L * L * L);
      for (std::int64_t c = lo; c < hi; ++c) {
        std::int64_t rem = cp.flagged[c];
        std::int64_t I = rem / (ncell * ncell);
        rem %= ncell * ncell;
        std::int64_t J = rem / ncell, K = rem % ncell;
        std::int64_t fi0 = I * P, fj0 = J * P, fk0 = K * P;
        std::int64_t fi1 = std::min<std::int64_t>(fi0 + P, g.n1 - 1);
        std::int64_t fj1 = std::min<std::int64_t>(fj0 + P, g.n1 - 1);
        std::int64_t fk1 = std::min<std::int64_t>(fk0 + P, g.n1 - 1);
        for (std::int64_t i = fi0; i <= fi1; ++i)
          for (std::int64_t j = fj0; j <= fj1; ++j)
            for (std::int64_t k = fk0; k <= fk1; ++k) {
              double p[3] = {g.coord(i), g.coord(j), g.coord(k)};
              local[((i - fi0) * L + (j - fj0)) * L + (k - fk0)] = ev.value(p);
            }
        auto lv = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
          return local[((i - fi0) * L + (j - fj0)) * L + (k - fk0)];
        };
        for (std::int64_t i = fi0; i < fi1; ++i)
          for (std::int64_t j = fj0; j < fj1; ++j)
            for (std::int64_t k = fk0; k < fk1; ++k) {
              double cx = 0.5 * (g.coord(i) + g.coord(i + 1));
              double cy = 0.5 * (g.coord(j) + g.coord(j + 1));
              double cz = 0.5 * (g.coord(k) + g.coord(k + 1));
              if (std::sqrt(cx * cx + cy * cy + cz * cz) > g.R + h) continue;
              double f[8];
              bool nan = false;
              for (int b = 0; b < 8; ++b) {
                f[b] = lv(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                if (!std::isfinite(f[b])) nan = true;
              }
              if (nan) { ++nan_counts[c]; continue; }
              marching_cube_tets(g, i, j, k, f, t, chunks[c]);
            }
      }
    });
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      tris.insert(tris.end(), chunks[c].begin(), chunks[c].end());
      skipped_nan += nan_counts[c];
    }
  }
  mesh.skipped_nan_cells = skipped_nan;

  // --- Vertex dedup -------------------------------------------------------
  std::unordered_map<std::int64_t, std::int32_t> vid_of;
  std::vector<std::int64_t> vkey;
  std::vector<double> vparam;
  auto intern = [&](const EdgeCut& ec) -> std::int32_t {
    auto it = vid_of.find(ec.key);
    if (it != vid_of.end()) return it->second;
    std::int32_t id = static_cast<std::int32_t>(vkey.size());
    vid_of.emplace(ec.key, id);
    vkey.push_back(ec.key);
    vparam.push_back(ec.s);
    return id;
  };
  std::vector<std::array<std::int32_t, 3>> raw;
  if (dim == 2) {
    raw.reserve(segs.size());
    for (const auto& s : segs) raw.push_back({intern(s.a), intern(s.b), -1});
  } else {
    raw.reserve(tris.size());
    for (const auto& s : tris) raw.push_back({intern(s.v[0]), intern(s.v[1]), intern(s.v[2])});
  }

  // --- Projection onto F_t -------------------------------------------------
  const std::int64_t nv = static_cast<std::int64_t>(vkey.size());
  std::vector<Eigen::Vector3d> pos(nv);
  std::vector<std::int8_t> status(nv, 0);  // 0 newton, 1 fallback, -1 dropped
  parallel_for(nv, opts.threads, [&](std::int64_t lo, std::int64_t hi) {
    Evaluator ev(field);
    Projector pr{g, ev, t};
    for (std::int64_t v = lo; v < hi; ++v) {
      Eigen::Vector3d p;
      int st = pr.project(vkey[v], vparam[v], p);
      status[v] = static_cast<std::int8_t>(st);
      if (st >= 0) pos[v] = p;
    }
  });
  for (std::int64_t v = 0; v < nv; ++v) {
    if (status[v] == 1) ++mesh.projection_fallbacks;
    if (status[v] < 0) ++mesh.projection_failures;
  }

  // --- Drop simplices outside the ball or with failed vertices ------------
  std::vector<std::uint8_t> vertex_boundary_adj(nv, 0);
  std::vector<std::array<std::int32_t, 3>> kept;
  kept.reserve(raw.size());
  const int nvx = dim;  // vertices per simplex
  for (const auto& sx : raw) {
    bool drop = false;
    for (int c = 0; c < nvx; ++c) {
      std::int32_t v = sx[c];
      if (status[v] < 0 || pos[v].norm() > R) drop = true;
    }
    if (drop) {
      for (int c = 0; c < nvx; ++c)
        if (status[sx[c]] >= 0) vertex_boundary_adj[sx[c]] = 1;
      continue;
    }
    kept.push_back(sx);
  }

  // --- Compact vertices ----------------------------------------------------
  std::vector<std::int32_t> remap(nv, -1);
  for (const auto& sx : kept)
    for (int c = 0; c < nvx; ++c) remap[sx[c]] = 0;
  std::int32_t nv2 = 0;
  for (std::int64_t v = 0; v < nv; ++v)
    if (remap[v] == 0) remap[v] = nv2++;
  mesh.vertices.resize(nv2);
  mesh.vertex_flags.assign(nv2, 0);
  for (std::int64_t v = 0; v < nv; ++v) {
    if (remap[v] < 0) continue;
    mesh.vertices[remap[v]] = pos[v];
    if (vertex_boundary_adj[v] || pos[v].norm() > R - 2 * h)
      mesh.vertex_flags[remap[v]] |= kVertexNearBoundary;
  }
  mesh.simplices.reserve(kept.size());
  for (auto sx : kept) {
    for (int c = 0; c < nvx; ++c) sx[c] = remap[sx[c]];
    mesh.simplices.push_back(sx);
  }
  mesh.simplex_flags.assign(mesh.simplices.size(), 0);

  // --- Per-vertex jets, normals, curvature ---------------------------------
  mesh.vertex_normal.assign(nv2, Eigen::Vector3d::Zero());
  mesh.per_vertex.assign(nv2, PointCurvature{});
  std::vector<std::uint8_t> nc_flag(nv2, 0);
  parallel_for(nv2, opts.threads, [&](std::int64_t lo, std::int64_t hi) {
    Evaluator ev(field);
    Jet2 jet;
    for (std::int64_t v = lo; v < hi; ++v) {
      const Eigen::Vector3d& p = mesh.vertices[v];
      if (!ev.jet2(p.data(), jet)) { nc_flag[v] = 1; continue; }
      Eigen::Vector3d grad = Eigen::Vector3d::Zero();
      for (int d = 0; d < dim; ++d) grad[d] = jet.grad[d];
      double gn = grad.norm();
      if (gn < grad_floor(p, dim)) { nc_flag[v] = 1; continue; }
      mesh.vertex_normal[v] = grad / gn;
      if (opts.compute_curvature) {
        mesh.per_vertex[v] = curvature_from_jet(jet);
        if (mesh.per_vertex[v].degenerate) mesh.vertex_flags[v] |= kVertexDegenerate;
      }
    }
  });
  for (std::int32_t v = 0; v < nv2; ++v)
    if (nc_flag[v]) {
      mesh.vertex_flags[v] |= kVertexNearCritical;
      ++mesh.near_critical_vertices;
    }

  // --- Stitch sub-grid folds (n = 2) ---------------------------------------
  if (dim == 2 && opts.stitch && !mesh.simplices.empty()) {
    std::vector<int> out_deg(nv2, 0), in_deg(nv2, 0);
    for (const auto& sx : mesh.simplices) {
      ++out_deg[sx[0]];
      ++in_deg[sx[1]];
    }
    std::vector<std::int32_t> ends;  // degree-1 interior endpoints with normals
    for (std::int32_t v = 0; v < nv2; ++v) {
      if (in_deg[v] + out_deg[v] != 1) continue;
      if (mesh.vertex_flags[v] & (kVertexNearBoundary | kVertexNearCritical)) continue;
      if (mesh.vertices[v].norm() > R - 2.5 * h) continue;
      ends.push_back(v);
    }
    std::vector<int> mate(ends.size(), -1);
    for (std::size_t a = 0; a < ends.size(); ++a) {
      double best = 4.0 * h;
      for (std::size_t b = 0; b < ends.size(); ++b) {
        if (a == b) continue;
        double d = (mesh.vertices[ends[a]] - mesh.vertices[ends[b]]).norm();
        if (d < best &&
            mesh.vertex_normal[ends[a]].dot(mesh.vertex_normal[ends[b]]) < -0.5) {
          best = d;
          mate[a] = static_cast<int>(b);
        }
      }
    }
    for (std::size_t a = 0; a < ends.size(); ++a) {
      int b = mate[a];
      if (b < 0 || mate[b] != static_cast<int>(a) || b < static_cast<int>(a)) continue;
      std::int32_t va = ends[a], vb = ends[b];
      // The bridge runs from the head of one polyline to the tail of the other.
      std::int32_t from, to;
      if (in_deg[va] == 1 && out_deg[vb] == 1) { from = va; to = vb; }
      else if (in_deg[vb] == 1 && out_deg[va] == 1) { from = vb; to = va; }
      else continue;
      mesh.simplices.push_back({from, to, -1});
      mesh.simplex_flags.push_back(kSimplexBridge);
      mesh.vertex_flags[va] |= kVertexStitchEnd;
      mesh.vertex_flags[vb] |= kVertexStitchEnd;
      ++mesh.stitched_pairs;
    }
  }

  // --- Dust removal + components ------------------------------------------
  {
    UnionFind uf(nv2);
    for (const auto& sx : mesh.simplices)
      for (int c = 1; c < nvx; ++c) uf.unite(sx[0], sx[c]);
    std::unordered_map<std::int32_t, int> simplex_count;
    for (const auto& sx : mesh.simplices) ++simplex_count[uf.find(sx[0])];

    std::vector<std::array<std::int32_t, 3>> final_simplices;
    std::vector<std::uint8_t> final_flags;
    for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
      std::int32_t root = uf.find(mesh.simplices[s][0]);
      if (simplex_count[root] < opts.dust_min_simplices) continue;
      final_simplices.push_back(mesh.simplices[s]);
      final_flags.push_back(mesh.simplex_flags[s]);
    }
    int dust = 0;
    for (const auto& [root, cnt] : simplex_count)
      if (cnt < opts.dust_min_simplices) ++dust;
    mesh.dust_removed = dust;
    mesh.simplices = std::move(final_simplices);
    mesh.simplex_flags = std::move(final_flags);

    // Compact vertices again after dust removal.
    std::vector<std::int32_t> remap2(nv2, -1);
    for (const auto& sx : mesh.simplices)
      for (int c = 0; c < nvx; ++c) remap2[sx[c]] = 0;
    std::int32_t nv3 = 0;
    for (std::int32_t v = 0; v < nv2; ++v)
      if (remap2[v] == 0) remap2[v] = nv3++;
    auto compact = [&](auto& vec) {
      auto copy = vec;
      vec.resize(nv3);
      for (std::int32_t v = 0; v < nv2; ++v)
        if (remap2[v] >= 0) vec[remap2[v]] = copy[v];
    };
    compact(mesh.vertices);
    compact(mesh.vertex_normal);
    compact(mesh.per_vertex);
    compact(mesh.vertex_flags);
    for (auto& sx : mesh.simplices)
      for (int c = 0; c < nvx; ++c) sx[c] = remap2[sx[c]];
    nv2 = nv3;
  }

  // --- Final component labelling -------------------------------------------
  {
    UnionFind uf(nv2);
    for (const auto& sx : mesh.simplices)
      for (int c = 1; c < nvx; ++c) uf.unite(sx[0], sx[c]);
    std::unordered_map<std::int32_t, std::int32_t> comp_of_root;
    mesh.component_id.assign(nv2, -1);
    for (std::int32_t v = 0; v < nv2; ++v) {
      std::int32_t root = uf.find(v);
      auto it = comp_of_root.find(root);
      if (it == comp_of_root.end())
        it = comp_of_root.emplace(root, static_cast<std::int32_t>(comp_of_root.size())).first;
      mesh.component_id[v] = it->second;
    }
    mesh.n_components = static_cast<int>(comp_of_root.size());
    mesh.component_measure.assign(mesh.n_components, 0.0);
    mesh.touches_boundary.assign(mesh.n_components, 0);
    for (std::size_t s = 0; s < mesh.simplices.size(); ++s)
      mesh.component_measure[mesh.component_id[mesh.simplices[s][0]]] +=
          mesh.simplex_measure(static_cast<int>(s));
    for (std::int32_t v = 0; v < nv2; ++v)
      if (mesh.vertex_flags[v] & kVertexNearBoundary)
        mesh.touches_boundary[mesh.component_id[v]] = 1;
  }

  // --- Orientation statistic ------------------------------------------------
  {
    Evaluator ev(field);
    double v;
    double grad[3];
    for (std::size_t s = 0; s < mesh.simplices.size(); ++s) {
      Eigen::Vector3d bc = mesh.simplex_barycenter(static_cast<int>(s));
      if (!ev.jet1(bc.data(), v, grad)) continue;
      Eigen::Vector3d gv = Eigen::Vector3d::Zero();
      for (int d = 0; d < dim; ++d) gv[d] = grad[d];
      Eigen::Vector3d n;
      const auto& sx = mesh.simplices[s];
      if (dim == 2) {
        Eigen::Vector3d tau = mesh.vertices[sx[1]] - mesh.vertices[sx[0]];
        n = Eigen::Vector3d(tau.y(), -tau.x(), 0.0);
      } else {
        n = (mesh.vertices[sx[1]] - mesh.vertices[sx[0]])
                .cross(mesh.vertices[sx[2]] - mesh.vertices[sx[0]]);
      }
      if (n.dot(gv) < 0) {
        mesh.simplex_flags[s] |= kSimplexOrientationOff;
        ++mesh.orientation_mismatches;
      }
    }
  }

  return mesh;
}

ComponentSummary components(const LevelSetMesh& mesh) {
  ComponentSummary cs;
  cs.count = mesh.n_components;
  cs.measure = mesh.component_measure;
  cs.touches_boundary.assign(mesh.touches_boundary.begin(), mesh.touches_boundary.end());
  return cs;
}

void export_obj(const LevelSetMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.12g %.12g %.12g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& s : mesh.simplices) {
    if (mesh.dim == 2)
      std::snprintf(buf, sizeof(buf), "l %d %d\n", s[0] + 1, s[1] + 1);
    else
      std::snprintf(buf, sizeof(buf), "f %d %d %d\n", s[0] + 1, s[1] + 1, s[2] + 1);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace levelcurv
