#pragma once

#include "geofm/mesh.hpp"

#include <filesystem>

namespace geofm {

/// Dense symmetric matrix of pairwise geodesic distances, stored in single precision.
struct GeodesicMatrix {
  MatrixXf d;
  double diameter = 0.0;

  Index size() const { return d.rows(); }
  /// Rows and columns relabeled so that new index r is old index perm[r].
  GeodesicMatrix permuted(const std::vector<Index>& perm) const;
};

/// First-order fast marching from `source`. Obtuse triangles are handled by
/// unfolding neighboring faces into the plane of the update triangle.
///
/// Vertices in other connected components receive 10x the bounding-box diagonal.
/// `accepted_order` (optional) receives vertices in the order they were finalized.
VectorXd fast_marching(const TriMesh& mesh, Index source, std::vector<Index>* accepted_order = nullptr);

/// Shortest paths along mesh edges (Dijkstra). Used as an upper bound in tests.
VectorXd edge_graph_distances(const TriMesh& mesh, Index source);

/// All-pairs fast marching, symmetrized as (D + D^T) / 2.
/// Refuses meshes above `max_vertices` to keep the dense matrix bounded.
GeodesicMatrix distance_matrix(const TriMesh& mesh, Index max_vertices = 20000, unsigned threads = 0);

/// Distance cache: magic "GFMDIST\0", u64 n, row-major n x n f32.
void save_distances(const GeodesicMatrix& d, const std::filesystem::path& path);
GeodesicMatrix load_distances(const std::filesystem::path& path);

}  // namespace geofm
