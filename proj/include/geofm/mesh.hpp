#pragma once

#include "geofm/common.hpp"

#include <filesystem>
#include <optional>

namespace geofm {

using VertexMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using FaceMatrix = Eigen::Matrix<int, Eigen::Dynamic, 3>;

/// Triangle mesh with lumped (barycentric) vertex areas.
///
/// Construct through make_mesh() or load_mesh(); both guarantee valid face
/// indices, no repeated vertex within a face, strictly positive triangle
/// areas and no unreferenced vertices.
struct TriMesh {
  VertexMatrix vertices;
  FaceMatrix faces;
  VectorXd vertex_areas;

  Index num_vertices() const { return vertices.rows(); }
  Index num_faces() const { return faces.rows(); }
  double total_area() const { return vertex_areas.sum(); }
};

/// Validates and cleans raw geometry: drops zero-area faces and unreferenced
/// vertices, then computes vertex areas. `kept` (optional) receives the
/// original index of every surviving vertex.
TriMesh make_mesh(VertexMatrix vertices, FaceMatrix faces, std::vector<Index>* kept = nullptr);

/// Per-face areas.
VectorXd face_areas(const VertexMatrix& vertices, const FaceMatrix& faces);

/// Area-weighted unit vertex normals.
VertexMatrix vertex_normals(const TriMesh& mesh);

double bounding_box_diagonal(const TriMesh& mesh);

/// Connected component label for each vertex, labels 0..count-1 in order of first vertex.
std::vector<Index> connected_components(const TriMesh& mesh, Index* count = nullptr);

/// Mesh file contents with optional per-vertex colors in [0,1].
struct MeshFile {
  TriMesh mesh;
  std::optional<VertexMatrix> colors;
};

/// Reads OFF or PLY (ASCII or binary little-endian), chosen by content.
MeshFile read_mesh_file(const std::filesystem::path& path);
TriMesh load_mesh(const std::filesystem::path& path);

/// Writes OFF (".off") or ASCII PLY (anything else). Coordinates use 17 significant digits.
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);

/// Writes an ASCII PLY with uchar RGB vertex properties. `colors` is n x 3 in [0,1].
void save_mesh_with_colors(const TriMesh& mesh, const Eigen::Ref<const VertexMatrix>& colors,
                           const std::filesystem::path& path);

struct SimplifyResult {
  TriMesh mesh;
  /// For each input vertex, the index of its surviving representative in `mesh`.
  std::vector<Index> vertex_map;
};

/// Quadric-error-metric edge contraction down to at most `target_vertices`.
///
/// Collapses are ordered by (cost, min index, max index) so the result is
/// deterministic. Collapses that violate the link condition, pinch a boundary,
/// or flip a face normal are skipped.
SimplifyResult simplify(const TriMesh& mesh, Index target_vertices);

/// For each low-resolution vertex, the original vertex mapped onto it that lies
/// closest to its position.
std::vector<Index> representatives(const TriMesh& full, const TriMesh& low, const std::vector<Index>& vertex_map);

/// Relabels vertices: new vertex r is old vertex perm[r].
TriMesh permute_vertices(const TriMesh& mesh, const std::vector<Index>& perm);

}  // namespace geofm
