// Extraction of an oriented simplicial mesh of F_t intersected with the open
// ball B_R: marching squares (n=2, asymptotic decider on ambiguous cells) or
// marching tetrahedra on a Kuhn-subdivided grid (n=3), vertices Newton
// projected onto the level along grad f, connected components labelled and
// boundary-touching components flagged.
//
// The fine grid is uniform with corners at (i + 1/2) h; a coarse pre-pass
// prunes grid blocks that provably stay away from the level (gradient-bound
// safety band), so cost scales with the level's area rather than the ball's.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "levelcurv/expr.hpp"
#include "levelcurv/geometry.hpp"

namespace levelcurv {

enum VertexFlag : std::uint8_t {
  kVertexNearCritical = 1,   // |grad f| under the floor; no curvature record
  kVertexDegenerate = 2,     // some principal curvature under the zero tol
  kVertexNearBoundary = 4,   // within 2h of a dropped (out-of-ball) simplex
  kVertexStitchEnd = 8,      // endpoint joined by contour stitching
};

enum SimplexFlag : std::uint8_t {
  kSimplexBridge = 1,            // inserted by stitching across a sub-grid fold
  kSimplexOrientationOff = 2,    // simplex normal disagrees with nu_f
};

struct LevelSetMesh {
  int dim = 0;
  double level = 0.0;
  double radius = 0.0;
  double cell_size = 0.0;

  std::vector<Eigen::Vector3d> vertices;         // projected onto F_t
  std::vector<Eigen::Vector3d> vertex_normal;    // nu_f at the vertex
  std::vector<PointCurvature> per_vertex;        // valid unless near-critical
  std::vector<std::uint8_t> vertex_flags;

  // n=2: oriented segments (a, b, -1); n=3: oriented triangles.
  std::vector<std::array<std::int32_t, 3>> simplices;
  std::vector<std::uint8_t> simplex_flags;

  std::vector<std::int32_t> component_id;        // per vertex
  int n_components = 0;
  std::vector<std::uint8_t> touches_boundary;    // per component
  std::vector<double> component_measure;         // length / area

  // Diagnostics.
  int projection_failures = 0;   // vertices dropped
  int projection_fallbacks = 0;  // Newton replaced by edge bisection
  int dust_removed = 0;          // sub-resolution components dropped
  int stitched_pairs = 0;
  int orientation_mismatches = 0;
  int near_critical_vertices = 0;
  int skipped_nan_cells = 0;

  bool empty() const { return simplices.empty(); }
  double total_measure() const;
  double simplex_measure(int s) const;
  Eigen::Vector3d simplex_barycenter(int s) const;
};

struct ExtractOptions {
  int prune_factor = 4;       // coarse pre-pass block size (1 = dense)
  double prune_safety = 3.0;  // gradient-bound band multiplier
  bool stitch = true;         // bridge sub-grid folds (n=2 only)
  int dust_min_simplices = 5; // drop smaller components
  bool compute_curvature = true;
  int threads = 0;            // 0 = hardware concurrency
};

LevelSetMesh extract_level(const ScalarField& field, double t, double R, double h,
                           const ExtractOptions& opts = {});

struct ComponentSummary {
  int count = 0;
  std::vector<double> measure;
  std::vector<std::uint8_t> touches_boundary;
};

ComponentSummary components(const LevelSetMesh& mesh);

void export_obj(const LevelSetMesh& mesh, const std::string& path);

// Default grid pitch when the caller does not fix one.
double auto_cell_size(int dim, double R);

}  // namespace levelcurv
