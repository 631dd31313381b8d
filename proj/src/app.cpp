#include "levelcurv/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "levelcurv/geometry.hpp"

namespace levelcurv {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double percentile_median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<double> find_critical_values(const ScalarField& field, double R) {
  const int dim = field.arity();
  Evaluator ev(field);
  const int N = dim == 2 ? 96 : 40;
  const double step = 2.0 * R / N;

  std::vector<Eigen::Vector3d> candidates;
  std::vector<double> g2map;
  auto grad2 = [&](const Eigen::Vector3d& p) -> double {
    double v, g[3];
    if (!ev.jet1(p.data(), v, g)) return std::numeric_limits<double>::infinity();
    double s = 0;
    for (int d = 0; d < dim; ++d) s += g[d] * g[d];
    return s;
  };

  if (dim == 2) {
    g2map.assign((N + 1) * (N + 1), 0.0);
    for (int i = 0; i <= N; ++i)
      for (int j = 0; j <= N; ++j)
        g2map[i * (N + 1) + j] =
            grad2({-R + i * step, -R + j * step, 0.0});
    for (int i = 1; i < N; ++i)
      for (int j = 1; j < N; ++j) {
        double v = g2map[i * (N + 1) + j];
        if (!std::isfinite(v)) continue;
        bool min = true;
        for (int di = -1; di <= 1 && min; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            if (g2map[(i + di) * (N + 1) + j + dj] < v) { min = false; break; }
        if (min) candidates.push_back({-R + i * step, -R + j * step, 0.0});
      }
  } else {
    g2map.assign((N + 1) * (N + 1) * (N + 1), 0.0);
    auto at = [&](int i, int j, int k) -> double& {
      return g2map[(i * (N + 1) + j) * (N + 1) + k];
    };
    for (int i = 0; i <= N; ++i)
      for (int j = 0; j <= N; ++j)
        for (int k = 0; k <= N; ++k)
          at(i, j, k) = grad2({-R + i * step, -R + j * step, -R + k * step});
    for (int i = 1; i < N; ++i)
      for (int j = 1; j < N; ++j)
        for (int k = 1; k < N; ++k) {
          double v = at(i, j, k);
          if (!std::isfinite(v)) continue;
          bool min = true;
          for (int di = -1; di <= 1 && min; ++di)
            for (int dj = -1; dj <= 1 && min; ++dj)
              for (int dk = -1; dk <= 1; ++dk)
                if (at(i + di, j + dj, k + dk) < v) { min = false; break; }
          if (min) candidates.push_back({-R + i * step, -R + j * step, -R + k * step});
        }
  }

  std::vector<double> values;
  Jet2 jet;
  for (Eigen::Vector3d x : candidates) {
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
      if (!ev.jet2(x.data(), jet)) break;
      Eigen::VectorXd g(dim);
      for (int d = 0; d < dim; ++d) g[d] = jet.grad[d];
      if (g.norm() <= 1e-11 * (1.0 + x.norm())) { converged = true; break; }
      Eigen::MatrixXd H(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) H(i, j) = jet.hess_at(i, j);
      Eigen::VectorXd delta =
          H.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(-g);
      if (!delta.allFinite()) break;
      double cap = 0.5 * step;
      if (delta.norm() > cap) delta *= cap / delta.norm();
      double before = g.squaredNorm();
      Eigen::Vector3d xn = x;
      bool improved = false;
      double lam = 1.0;
      for (int half = 0; half < 12; ++half) {
        xn = x;
        for (int d = 0; d < dim; ++d) xn[d] += lam * delta[d];
        double after = grad2(xn);
        if (after < before) { improved = true; break; }
        lam *= 0.5;
      }
      if (!improved) break;
      x = xn;
    }
    if (!converged) continue;
    if (x.norm() > R) continue;
    double v = ev.value(x.data());
    if (!std::isfinite(v)) continue;
    bool dup = false;
    for (double w : values)
      if (std::abs(w - v) < 1e-8 * (1.0 + std::abs(w))) dup = true;
    if (!dup) values.push_back(v);
  }
  std::sort(values.begin(), values.end());
  return values;
}

namespace {

LevelRecord compute_level(const ScalarField& field, double t, double R, double h,
                          const ExtractOptions& opts) {
  LevelRecord rec;
  try {
    LevelSetMesh mesh = extract_level(field, t, R, h, opts);
    rec.totals = totals(mesh, field);
    rec.ok = true;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      if (mesh.vertex_flags[v] & kVertexNearCritical) continue;
      double a = std::abs(mesh.dim == 2 ? mesh.per_vertex[v].principal[0]
                                        : mesh.per_vertex[v].gauss);
      if (a > rec.max_abs_k) {
        rec.max_abs_k = a;
        rec.max_k_point = mesh.vertices[v];
      }
    }
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.totals.t = t;
    rec.totals.R = R;
    rec.totals.extraction_ok = false;
    rec.totals.note = e.what();
  }
  return rec;
}

}  // namespace

CurvatureProfile scan(const ScalarField& field, double t_min, double t_max, int n_t,
                      double R, double h, const ExtractOptions& opts) {
  if (n_t < 2) throw NumericError("scan: need at least two grid points");
  if (!(t_max > t_min)) throw NumericError("scan: empty t range");
  CurvatureProfile prof;
  prof.field = field;
  prof.dim = field.arity();
  prof.R = R;
  prof.h = h > 0 ? h : auto_cell_size(prof.dim, R);
  prof.extract = opts;
  prof.grid.resize(n_t);
  for (int i = 0; i < n_t; ++i)
    prof.grid[i] = t_min + (t_max - t_min) * i / (n_t - 1);
  prof.critical_values_detected = find_critical_values(field, R);
  prof.levels.reserve(n_t);
  for (double t : prof.grid)
    prof.levels.push_back(compute_level(field, t, R, prof.h, opts));
  return prof;
}

LimitEstimate estimate_limit(const CurvatureProfile& profile, double c, int side,
                             const std::vector<std::pair<double, double>>& exclusions) {
  LimitEstimate est;
  std::vector<std::pair<double, int>> order;  // |t-c|, index
  for (std::size_t i = 0; i < profile.grid.size(); ++i) {
    double t = profile.grid[i];
    if (side * (t - c) <= 0) continue;
    if (!profile.levels[i].ok) continue;
    bool excluded = false;
    for (const auto& [lo, hi] : exclusions)
      if (t >= lo - 1e-15 && t <= hi + 1e-15) excluded = true;
    for (double cv : profile.critical_values_detected)
      if (std::abs(t - cv) < 1e-9 * (1.0 + std::abs(cv))) excluded = true;
    if (excluded) continue;
    order.push_back({std::abs(t - c), static_cast<int>(i)});
  }
  if (order.empty()) return est;
  std::sort(order.begin(), order.end());
  int take = std::min<int>(3, static_cast<int>(order.size()));
  // Linear least-squares in t, evaluated at c: removes the first-order term
  // of the approach without the noise blow-up of higher-order extrapolation.
  double sx = 0, sy = 0, sk = 0, sxx = 0, sxy = 0, sxk = 0;
  for (int a = 0; a < take; ++a) {
    const auto& lv = profile.levels[order[a].second];
    double x = profile.grid[order[a].second] - c;
    sx += x; sxx += x * x;
    sy += lv.totals.k_abs; sxy += x * lv.totals.k_abs;
    sk += lv.totals.k_total; sxk += x * lv.totals.k_total;
  }
  est.samples_used = take;
  est.valid = true;
  if (take == 1) {
    est.abs_k = sy;
    est.k = sk;
    return est;
  }
  double denom = take * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) {
    est.abs_k = sy / take;
    est.k = sk / take;
    return est;
  }
  double slope_abs = (take * sxy - sx * sy) / denom;
  double slope_k = (take * sxk - sx * sk) / denom;
  est.abs_k = (sy - slope_abs * sx) / take;
  est.k = (sk - slope_k * sx) / take;
  return est;
}

namespace {

struct Region {
  int cell_lo = 0, cell_hi = 0;  // candidate cells [i, i+1] per index
  double t_lo = 0, t_hi = 0;
  double max_delta = 0;
};

}  // namespace

JumpReport detect_jumps(const CurvatureProfile& profile, int refine_budget) {
  JumpReport report;
  const auto& grid = profile.grid;
  const int n = static_cast<int>(grid.size());
  if (n < 2) return report;
  const double spacing = grid[1] - grid[0];

  std::vector<double> deltas;
  std::vector<int> delta_idx;
  for (int i = 0; i + 1 < n; ++i) {
    if (!profile.levels[i].ok || !profile.levels[i + 1].ok) continue;
    deltas.push_back(std::abs(profile.levels[i + 1].totals.k_abs -
                              profile.levels[i].totals.k_abs));
    delta_idx.push_back(i);
  }
  if (deltas.empty()) return report;
  double maxval = 0;
  for (const auto& lv : profile.levels)
    if (lv.ok) maxval = std::max(maxval, lv.totals.k_abs);
  report.threshold = std::max(5.0 * percentile_median(deltas), 1e-9 + 1e-9 * maxval);

  std::vector<int> cand;
  for (std::size_t d = 0; d < deltas.size(); ++d)
    if (deltas[d] > report.threshold) cand.push_back(delta_idx[d]);
  if (cand.empty()) return report;

  std::vector<Region> regions;
  for (int idx : cand) {
    if (!regions.empty() && idx - regions.back().cell_hi <= 2) {
      regions.back().cell_hi = idx;
    } else {
      Region r;
      r.cell_lo = r.cell_hi = idx;
      regions.push_back(r);
    }
  }
  for (auto& r : regions) {
    r.t_lo = grid[r.cell_lo];
    r.t_hi = grid[r.cell_hi + 1];
    for (int i = r.cell_lo; i <= r.cell_hi; ++i)
      r.max_delta = std::max(r.max_delta, std::abs(profile.levels[i + 1].totals.k_abs -
                                                   profile.levels[i].totals.k_abs));
  }

  auto abs_k_at = [&](double t) -> std::pair<bool, CurvatureTotals> {
    LevelRecord rec = compute_level(profile.field, t, profile.R, profile.h, profile.extract);
    return {rec.ok, rec.totals};
  };

  struct Candidate {
    double c;
    JumpKind kind;
    double zone_lo, zone_hi;
    bool keep;
  };
  std::vector<Candidate> jumps;

  for (const auto& r : regions) {
    // Bisection refinement inside the steepest cell: a genuine jump keeps its
    // delta as the bracket shrinks, a steep smooth ramp halves it.
    int steep = r.cell_lo;
    double best = -1;
    for (int i = r.cell_lo; i <= r.cell_hi; ++i) {
      double d = std::abs(profile.levels[i + 1].totals.k_abs -
                          profile.levels[i].totals.k_abs);
      if (d > best) { best = d; steep = i; }
    }
    double ta = grid[steep], tb = grid[steep + 1];
    double va = profile.levels[steep].totals.k_abs;
    double vb = profile.levels[steep + 1].totals.k_abs;
    const double d0 = std::abs(vb - va);
    int used = 0;
    for (; used < refine_budget; ++used) {
      double tm = 0.5 * (ta + tb);
      auto [ok, tot] = abs_k_at(tm);
      if (!ok) break;
      double vm = tot.k_abs;
      if (std::abs(vm - va) >= std::abs(vb - vm)) { tb = tm; vb = vm; }
      else { ta = tm; va = vm; }
    }
    bool sharp = std::abs(vb - va) > 0.5 * d0;
    double c_loc = 0.5 * (ta + tb);

    // Classification, in precedence order.
    double crit = std::numeric_limits<double>::quiet_NaN();
    for (double cv : profile.critical_values_detected)
      if (cv >= r.t_lo - 2 * spacing && cv <= r.t_hi + 2 * spacing) crit = cv;
    if (std::isfinite(crit)) {
      jumps.push_back({crit, JumpKind::CriticalValue,
                       std::min(r.t_lo, crit), std::max(r.t_hi, crit), true});
      continue;
    }

    // Escape analysis from the plateau side: trace the Gauss fiber through the
    // sharpest mesh point; an open end whose f-limit lands in or next to the
    // region identifies the true bifurcation value.
    bool classified = false;
    int lo_idx = r.cell_lo - 1, hi_idx = r.cell_hi + 2;
    double lo_val = (lo_idx >= 0 && profile.levels[lo_idx].ok)
                        ? profile.levels[lo_idx].totals.k_abs
                        : -1;
    double hi_val = (hi_idx < n && profile.levels[hi_idx].ok)
                        ? profile.levels[hi_idx].totals.k_abs
                        : -1;
    std::vector<int> probes;
    if (hi_val >= lo_val) {
      if (hi_idx < n) probes.push_back(hi_idx);
      if (lo_idx >= 0) probes.push_back(lo_idx);
    } else {
      if (lo_idx >= 0) probes.push_back(lo_idx);
      if (hi_idx < n) probes.push_back(hi_idx);
    }
    for (int pi : probes) {
      const LevelRecord& lv = profile.levels[pi];
      if (!lv.ok || lv.max_abs_k <= 0) continue;
      EscapeParams ep;
      ep.trace_radius = 32.0 * profile.R;
      EscapeComponent comp = trace_gauss_fiber(profile.field, lv.max_k_point, grid[pi], ep);
      for (const auto& lim : {comp.f_limit_low, comp.f_limit_high}) {
        if (!lim) continue;
        if (*lim >= r.t_lo - 2 * spacing && *lim <= r.t_hi + 2 * spacing) {
          jumps.push_back({*lim, JumpKind::RegularBifurcation,
                           std::min(r.t_lo, *lim), std::max(r.t_hi, *lim), true});
          classified = true;
          break;
        }
      }
      if (classified) break;
    }
    if (classified) continue;

    if (sharp) {
      jumps.push_back({c_loc, JumpKind::Unresolved, r.t_lo, r.t_hi, true});
    } else {
      ++report.candidates_dropped;
    }
  }

  // Merge nearby detections (the two flanks of one bifurcation resolve to the
  // same limit value).
  std::sort(jumps.begin(), jumps.end(),
            [](const Candidate& a, const Candidate& b) { return a.c < b.c; });
  for (std::size_t i = 0; i + 1 < jumps.size(); ++i) {
    if (!jumps[i].keep) continue;
    std::size_t j = i + 1;
    while (j < jumps.size() && jumps[j].c - jumps[i].c <= spacing) {
      if (jumps[j].kind == JumpKind::CriticalValue) {
        jumps[i].c = jumps[j].c;
        jumps[i].kind = JumpKind::CriticalValue;
      } else if (jumps[i].kind != JumpKind::CriticalValue) {
        jumps[i].c = 0.5 * (jumps[i].c + jumps[j].c);
      }
      jumps[i].zone_lo = std::min(jumps[i].zone_lo, jumps[j].zone_lo);
      jumps[i].zone_hi = std::max(jumps[i].zone_hi, jumps[j].zone_hi);
      jumps[j].keep = false;
      ++j;
    }
  }

  std::vector<std::pair<double, double>> zones;
  for (const auto& jc : jumps)
    if (jc.keep) zones.push_back({jc.zone_lo, jc.zone_hi});

  for (const auto& jc : jumps) {
    if (!jc.keep) continue;
    Jump out;
    out.c = jc.c;
    out.kind = jc.kind;
    out.zone_lo = jc.zone_lo;
    out.zone_hi = jc.zone_hi;
    LimitEstimate left = estimate_limit(profile, jc.c, -1, zones);
    LimitEstimate right = estimate_limit(profile, jc.c, +1, zones);
    out.has_left = left.valid;
    out.has_right = right.valid;
    out.left_limit = left.abs_k;
    out.right_limit = right.abs_k;
    out.k_left = left.k;
    out.k_right = right.k;
    auto [ok, tot] = abs_k_at(jc.c);
    out.value_known = ok;
    if (ok) {
      out.value_at_c = tot.k_abs;
      out.k_at_c = tot.k_total;
    }
    double scale = std::max({std::abs(out.left_limit), std::abs(out.right_limit), 1.0});
    double ktol = 0.04 * scale + 0.1;
    out.k_continuous = true;
    if (out.has_left && ok && std::abs(out.k_left - out.k_at_c) > ktol)
      out.k_continuous = false;
    if (out.has_right && ok && std::abs(out.k_right - out.k_at_c) > ktol)
      out.k_continuous = false;
    double min_lim = std::numeric_limits<double>::infinity();
    if (out.has_left) min_lim = std::min(min_lim, out.left_limit);
    if (out.has_right) min_lim = std::min(min_lim, out.right_limit);
    if (ok && std::isfinite(min_lim))
      out.min_rule_ok = out.value_at_c <= min_lim * 1.02 + 1e-6;
    report.jumps.push_back(out);
  }
  return report;
}

std::string csv_header(int dim) {
  std::string h = "t,R,K,absK";
  for (int l = 0; l < dim; ++l) h += ",K_l" + std::to_string(l);
  for (int l = 0; l < dim; ++l) h += ",absK_l" + std::to_string(l);
  for (int q = 1; q <= dim - 1; ++q)
    h += ",L_" + std::to_string(q) + ",absL_" + std::to_string(q);
  h += ",n_components,boundary_fraction,degenerate_mass";
  return h;
}

std::string csv_row(const CurvatureTotals& t, int dim) {
  std::string r = fmt(t.t) + "," + fmt(t.R) + "," + fmt(t.k_total) + "," + fmt(t.k_abs);
  for (int l = 0; l < dim; ++l) r += "," + fmt(t.k_lambda[l]);
  for (int l = 0; l < dim; ++l) r += "," + fmt(t.k_abs_lambda[l]);
  for (int q = 1; q <= dim - 1; ++q)
    r += "," + fmt(t.lk[q - 1][0]) + "," + fmt(t.lk[q - 1][1]);
  r += "," + std::to_string(t.n_components) + "," + fmt(t.boundary_fraction) + "," +
       fmt(t.degenerate_mass);
  return r;
}

namespace {

const char* kind_name(JumpKind k) {
  switch (k) {
    case JumpKind::CriticalValue: return "critical-value";
    case JumpKind::RegularBifurcation: return "regular-bifurcation";
    default: return "unresolved";
  }
}

void write_svg(const CurvatureProfile& prof, const JumpReport* report,
               const std::string& path) {
  const int W = 860, H = 520, ml = 70, mr = 20, mt = 20, mb = 45;
  double tmin = prof.grid.front(), tmax = prof.grid.back();
  double ymin = 0, ymax = 1e-9;
  for (const auto& lv : prof.levels) {
    if (!lv.ok) continue;
    ymin = std::min({ymin, lv.totals.k_total, lv.totals.k_abs});
    ymax = std::max({ymax, lv.totals.k_total, lv.totals.k_abs});
  }
  double pad = 0.05 * (ymax - ymin + 1e-12);
  ymin -= pad;
  ymax += pad;
  auto X = [&](double t) { return ml + (t - tmin) / (tmax - tmin) * (W - ml - mr); };
  auto Y = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("I/O: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H
      << "\" fill=\"white\"/>\n";
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << (W - ml - mr)
      << "\" height=\"" << (H - mt - mb)
      << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";

  auto polyline = [&](auto getter, const char* color, const char* dash) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (dash[0]) out << " stroke-dasharray=\"" << dash << "\"";
    out << " points=\"";
    char buf[64];
    for (std::size_t i = 0; i < prof.grid.size(); ++i) {
      if (!prof.levels[i].ok) continue;
      std::snprintf(buf, sizeof(buf), "%.6g,%.6g ", X(prof.grid[i]),
                    Y(getter(prof.levels[i].totals)));
      out << buf;
    }
    out << "\"/>\n";
  };
  polyline([](const CurvatureTotals& t) { return t.k_abs; }, "#000000", "");
  polyline([](const CurvatureTotals& t) { return t.k_total; }, "#1f6fc4", "");
  const char* lam_colors[3] = {"#2a9d3e", "#c77f00", "#8a4fb0"};
  for (int l = 0; l < prof.dim; ++l) {
    polyline([l](const CurvatureTotals& t) { return t.k_abs_lambda[l]; }, lam_colors[l],
             "6,4");
  }
  if (report) {
    for (const auto& j : report->jumps) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "<line class=\"jump\" x1=\"%.6g\" y1=\"%d\" x2=\"%.6g\" y2=\"%d\" "
                    "stroke=\"#cc2222\" stroke-width=\"1.5\" stroke-dasharray=\"3,3\"/>\n",
                    X(j.c), mt, X(j.c), H - mb);
      out << buf;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"13\" fill=\"#333\">t</text>\n",
                W / 2, H - 12);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"14\" y=\"%d\" font-size=\"13\" fill=\"#333\" "
                "transform=\"rotate(-90 14 %d)\">K(t), |K|(t)</text>\n",
                H / 2, H / 2);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"11\" fill=\"#555\">t=%.6g..%.6g  "
                "|K| black, K blue, |K|(lambda) dashed</text>\n",
                ml + 6, mt + 16, tmin, tmax);
  out << buf;
  out << "</svg>\n";
  if (!out) throw std::runtime_error("I/O: write failed " + path);
}

}  // namespace

std::vector<std::string> emit(const CurvatureProfile& profile, const JumpReport* report,
                              const std::string& out_dir, const EmitOptions& opts) {
  if (profile.empty()) throw NumericError("empty profile");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::vector<std::string> written;

  if (opts.csv) {
    std::string path = (fs::path(out_dir) / "profile.csv").string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("I/O: cannot open " + path);
    out << csv_header(profile.dim) << "\n";
    for (const auto& lv : profile.levels)
      out << csv_row(lv.totals, profile.dim) << "\n";
    if (!out) throw std::runtime_error("I/O: write failed " + path);
    written.push_back(path);
  }
  if (opts.json) {
    nlohmann::ordered_json j;
    j["function"] = profile.field.source_text();
    j["arity"] = profile.dim;
    j["radius"] = profile.R;
    j["cell"] = profile.h;
    j["t_min"] = profile.grid.front();
    j["t_max"] = profile.grid.back();
    j["n_t"] = profile.grid.size();
    j["critical_values_detected"] = profile.critical_values_detected;
    nlohmann::ordered_json failures = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < profile.levels.size(); ++i)
      if (!profile.levels[i].ok)
        failures.push_back({{"t", profile.grid[i]}, {"error", profile.levels[i].error}});
    j["level_failures"] = failures;
    if (report) {
      j["jump_threshold"] = report->threshold;
      nlohmann::ordered_json jumps = nlohmann::ordered_json::array();
      for (const auto& jp : report->jumps) {
        nlohmann::ordered_json one;
        one["c"] = jp.c;
        one["kind"] = kind_name(jp.kind);
        if (jp.has_left) one["left_limit"] = jp.left_limit;
        if (jp.has_right) one["right_limit"] = jp.right_limit;
        if (jp.value_known) one["value_at_c"] = jp.value_at_c;
        one["k_left"] = jp.k_left;
        one["k_right"] = jp.k_right;
        one["k_at_c"] = jp.k_at_c;
        one["k_continuous"] = jp.k_continuous;
        one["min_rule_ok"] = jp.min_rule_ok;
        one["zone"] = {jp.zone_lo, jp.zone_hi};
        jumps.push_back(one);
      }
      j["jumps"] = jumps;
    }
    std::string path = (fs::path(out_dir) / "report.json").string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("I/O: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("I/O: write failed " + path);
    written.push_back(path);
  }
  if (opts.svg) {
    std::string path = (fs::path(out_dir) / "profile.svg").string();
    write_svg(profile, report, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace levelcurv
