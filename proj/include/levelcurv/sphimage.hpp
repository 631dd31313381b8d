// Gauss-image machinery on the sphere S^{n-1}: an exactly equal-area cell
// partition, rasterization of fiber counts and signed degree of the Gauss
// map, multiplicity strata, Hausdorff distances between covered-cell sets,
// one-sided Hausdorff limits along t -> c, and the escape diagnostic that
// traces the curves {nu_f = u} by predictor-corrector continuation.
#pragma once

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "levelcurv/expr.hpp"
#include "levelcurv/levelset.hpp"

namespace levelcurv {

// Equal-area partition: n=2 uses m equal arcs; n=3 uses polar caps plus
// latitude bands whose boundaries are chosen so every cell has area exactly
// 4*pi/m.
class SphericalPartition {
 public:
  static SphericalPartition make(int dim, int m);

  int dim() const { return dim_; }
  int size() const { return m_; }
  double cell_area() const { return area_; }
  double cell_angular_diameter() const { return ang_diam_; }

  int cell_of(const Eigen::Vector3d& u) const;
  Eigen::Vector3d center(int c) const;
  // Cells whose centers lie within the angular radius of the cap around u.
  void cells_in_cap(const Eigen::Vector3d& u, double ang_radius,
                    std::vector<int>& out) const;
  // Cells within graph distance 1 (one "cell ring") of c.
  void neighbors(int c, std::vector<int>& out) const;

 private:
  int dim_ = 2;
  int m_ = 0;
  double area_ = 0;
  double ang_diam_ = 0;
  // n=3 band structure: band b spans colatitude [theta_[b], theta_[b+1])
  // and holds counts_[b] cells starting at offset offs_[b].
  std::vector<double> cos_bounds_;  // descending cos(theta), size bands+1
  std::vector<int> counts_, offs_;
};

struct SphericalRaster {
  double level = 0.0;
  std::shared_ptr<const SphericalPartition> part;
  std::vector<std::int32_t> fiber_count;
  std::vector<std::int32_t> degree;
  std::vector<std::uint8_t> flagged;  // tangency-degenerate coverage nearby
  int skipped_simplices = 0;          // near-critical or zero-spread inputs

  bool covered(int c) const { return fiber_count[c] > 0; }
  std::vector<int> covered_cells() const;
  double abs_area() const;     // sum fiber * area  (Eq. (1) side)
  double signed_area() const;  // sum degree * area (Eq. (2) side)
};

// Per-simplex rasterization: each mesh simplex covers the spherical simplex
// spanned by its vertex normals, with sign given by its orientation.
// Simplices whose normal spread exceeds 90 degrees still contribute fiber
// mass but flag the cells they touch (excluded from degree statistics).
SphericalRaster rasterize(const LevelSetMesh& mesh, const ScalarField& field, int m,
                          std::shared_ptr<const SphericalPartition> part = nullptr);

int default_raster_cells(int dim);  // 720 (n=2), 10242 (n=3)

std::map<int, double> strata_areas(const SphericalRaster& raster);

struct DegreeCheckStats {
  int requested = 0;
  int usable = 0;      // unflagged covered cells actually tested
  int agree = 0;
  int flagged_samples = 0;  // refinement divergence
  double rate = 0.0;
};

DegreeCheckStats degree_check(const SphericalRaster& raster, const LevelSetMesh& mesh,
                              const ScalarField& field, int samples,
                              unsigned seed = 12345);

struct HausdorffEstimate {
  double value = 0.0;
  Eigen::Vector3d witness_a = Eigen::Vector3d::Zero();
  Eigen::Vector3d witness_b = Eigen::Vector3d::Zero();
};

// Chordal Hausdorff distance between two covered-cell sets (cell centers).
HausdorffEstimate hausdorff(const std::vector<int>& a, const std::vector<int>& b,
                            const SphericalPartition& part);

struct OneSidedLimitParams {
  double delta0 = 0.1;
  int J = 12;
  int window = 3;       // consecutive samples required for stabilization
  int m = 0;            // 0 = default cells
  double R = 4.0;
  double h = 0.0;       // 0 = auto
  double radius_growth = 0.0;  // if > 0, R_j = max(R, radius_growth / |t_j - c|)
  std::vector<double> critical_values;  // samples near these are skipped
  ExtractOptions extract;
};

struct OneSidedLimitResult {
  std::vector<double> t_samples;
  std::map<int, std::vector<int>> v_k;  // stabilized cells per multiplicity
  std::vector<int> v_total;             // stabilized covered cells
  int oscillating_cells = 0;
  std::vector<double> hausdorff_seq;    // between consecutive covered sets
  double weighted_area() const;         // sum k * area(V_k)
  double plain_area() const;
  double cell_area = 0.0;
};

OneSidedLimitResult one_sided_limit(const ScalarField& field, double c, int side,
                                    const OneSidedLimitParams& params);

// --- Escape diagnostic ------------------------------------------------------

struct EscapeComponent {
  double f_min = 0.0, f_max = 0.0;
  bool min_open = false, max_open = false;  // end left the ball / stalled
  bool crosses_c = false;
  bool exits_ball = false;
  bool stalled = false;
  bool hit_critical = false;
  // Extrapolated one-sided limit of f along an escaping end (Aitken on
  // geometrically spaced radius crossings), when available.
  std::optional<double> f_limit_low;
  std::optional<double> f_limit_high;
  Eigen::Vector3d seed = Eigen::Vector3d::Zero();
  int steps = 0;
};

struct EscapeParams {
  double trace_radius = 0.0;   // 0 = 32 * R
  int max_steps = 200000;
  double h = 0.0;              // seed-mesh pitch, 0 = auto
  ExtractOptions extract;
};

// Classify the components of Psi_f^{-1}({u} x R) met from seeds on the levels
// c - eps and c + eps inside B_R.
std::vector<EscapeComponent> escape_diagnostic(const ScalarField& field, double c,
                                               const Eigen::Vector3d& u, double eps,
                                               double R, const EscapeParams& params = {});

// Trace the single component through a given on-level point (used by jump
// classification; u = nu_f(x0)).
EscapeComponent trace_gauss_fiber(const ScalarField& field, const Eigen::Vector3d& x0,
                                  double c, const EscapeParams& params = {});

}  // namespace levelcurv
