#pragma once

#include "geofm/geodesic.hpp"
#include "geofm/shot.hpp"
#include "geofm/spectral.hpp"

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>

namespace geofm {

struct PreprocessParams {
  Index target_n = 1500;
  Index k = 120;
  int shot_bins = 10;
  double shot_radius_fraction = 0.05;
};

/// Everything the pipeline needs for one shape, all at the remeshed resolution.
struct ShapeBundle {
  TriMesh mesh;
  SpectralBasis basis;
  GeodesicMatrix distances;
  DescriptorField shot;
  std::vector<Index> vertex_map;       // original vertex -> remeshed vertex
  std::vector<Index> representatives;  // remeshed vertex -> original vertex
  std::filesystem::path source_path;
  std::string content_hash;
  // original vertex -> canonical label, when a ground-truth file is attached
  std::optional<PointMap> ground_truth;

  Index size() const { return mesh.num_vertices(); }
  Index original_size() const { return static_cast<Index>(vertex_map.size()); }
};

/// Work actually performed, for verifying cache behavior.
struct StageCounters {
  std::atomic<int> simplify{0}, basis{0}, distances{0}, descriptors{0}, cache_hits{0};
};

/// FNV-1a over the mesh file bytes and the preprocessing parameters, as 16 hex digits.
std::string content_hash(const std::filesystem::path& mesh_path, const PreprocessParams& params);

/// simplify -> eig_basis -> distance_matrix -> shot, served from `cache_dir/<hash>` when present.
/// An empty cache_dir disables caching.
ShapeBundle preprocess(const std::filesystem::path& mesh_path, const PreprocessParams& params,
                       const std::filesystem::path& cache_dir, StageCounters* counters = nullptr,
                       bool* from_cache = nullptr, unsigned threads = 0);

void save_bundle(const ShapeBundle& bundle, const PreprocessParams& params, const std::filesystem::path& dir);
ShapeBundle load_bundle(const std::filesystem::path& dir);

struct ManifestEntry {
  std::filesystem::path mesh;
  std::optional<std::filesystem::path> ground_truth;
};

/// Lines `mesh_path [gt_path]`; blank lines and `#` comments skipped; relative
/// paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// `identity n` or `src tgt` lines (0-based). Sources without a line are unmatched.
/// Indices must lie in [0, n).
PointMap load_ground_truth(const std::filesystem::path& path, Index n);

/// Ground truth between the remeshed shapes of two bundles that both carry
/// ground truth: X remeshed vertex -> its original representative -> canonical
/// label -> Y original vertex -> Y remeshed vertex.
std::vector<Index> compose_ground_truth(const ShapeBundle& x, const ShapeBundle& y);

/// Ground truth after relabeling both shapes (new r = old perm[r]).
std::vector<Index> permute_ground_truth(const std::vector<Index>& gt, const std::vector<Index>& perm_x,
                                        const std::vector<Index>& perm_y);

}  // namespace geofm
