// Scan orchestration: curvature profiles over a t grid, detection and
// classification of the discontinuities of t -> |K|(t), one-sided limit
// estimation, and CSV / JSON / SVG emission.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "levelcurv/curvature.hpp"
#include "levelcurv/expr.hpp"
#include "levelcurv/sphimage.hpp"

namespace levelcurv {

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct LevelRecord {
  CurvatureTotals totals;
  bool ok = false;
  std::string error;
  // Sharpest point of the level, the natural escape-trace seed.
  double max_abs_k = 0.0;
  Eigen::Vector3d max_k_point = Eigen::Vector3d::Zero();
};

struct CurvatureProfile {
  ScalarField field;
  int dim = 0;
  double R = 0.0;
  double h = 0.0;  // fine pitch actually used
  ExtractOptions extract;
  std::vector<double> grid;
  std::vector<LevelRecord> levels;
  std::vector<double> critical_values_detected;

  bool empty() const { return grid.empty(); }
};

// Critical values of f inside B_R found by Newton descent on |grad f|^2 from
// coarse-grid candidates.
std::vector<double> find_critical_values(const ScalarField& field, double R);

CurvatureProfile scan(const ScalarField& field, double t_min, double t_max, int n_t,
                      double R, double h = 0.0, const ExtractOptions& opts = {});

enum class JumpKind { CriticalValue, RegularBifurcation, Unresolved };

struct Jump {
  double c = 0.0;
  JumpKind kind = JumpKind::Unresolved;
  double left_limit = 0.0, right_limit = 0.0;
  bool has_left = false, has_right = false;
  double value_at_c = 0.0;
  bool value_known = false;
  double k_left = 0.0, k_right = 0.0, k_at_c = 0.0;
  bool k_continuous = true;
  bool min_rule_ok = true;  // value_at_c <= min(limits) + tol
  // Grid span diagnosed as truncation-affected (excluded from limits).
  double zone_lo = 0.0, zone_hi = 0.0;
};

struct JumpReport {
  std::vector<Jump> jumps;
  double threshold = 0.0;
  int candidates_dropped = 0;
  std::vector<std::string> notes;
};

JumpReport detect_jumps(const CurvatureProfile& profile, int refine_budget = 8);

// One-sided limit estimate of |K| (and K) at c from profile samples, skipping
// samples inside diagnosed truncation zones and near critical values.
struct LimitEstimate {
  double abs_k = 0.0, k = 0.0;
  bool valid = false;
  int samples_used = 0;
};
LimitEstimate estimate_limit(const CurvatureProfile& profile, double c, int side,
                             const std::vector<std::pair<double, double>>& exclusions);

struct EmitOptions {
  bool csv = true;
  bool json = true;
  bool svg = false;
};

// Writes profile.csv, report.json, profile.svg under out_dir; returns paths.
std::vector<std::string> emit(const CurvatureProfile& profile, const JumpReport* report,
                              const std::string& out_dir, const EmitOptions& opts = {});

std::string csv_header(int dim);
std::string csv_row(const CurvatureTotals& t, int dim);

}  // namespace levelcurv
