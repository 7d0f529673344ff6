#pragma once

#include "geofm/geodesic.hpp"
#include "geofm/mesh.hpp"

#include <filesystem>

namespace geofm {

/// Per-vertex descriptors, one row per vertex.
struct DescriptorField {
  MatrixXf values;

  Index size() const { return values.rows(); }
  Index width() const { return values.cols(); }
  DescriptorField permuted(const std::vector<Index>& perm) const;
};

/// Width of a SHOT descriptor: 32 spatial volumes of (bins + 1) cosine bins.
inline Index shot_width(int bins) { return 32 * (bins + 1); }

/// SHOT signatures over Euclidean balls of `radius`.
///
/// Each descriptor has unit L2 norm, or is all zero when the neighborhood is
/// too small or its reference frame is degenerate. `frame_margin` (optional)
/// receives, per vertex, how far the local frame is from an ambiguous
/// configuration: the smaller of the relative eigenvalue gaps and the relative
/// sign-vote margins (0 for zero descriptors). A tied vote is settled by the
/// sign of the summed projections and reports a margin of at most 0.01.
DescriptorField shot_descriptors(const TriMesh& mesh, double radius, int bins = 10, VectorXd* frame_margin = nullptr,
                                 unsigned threads = 0);

/// `fraction` of the geodesic diameter; the usual choice is 5%.
double default_radius(const GeodesicMatrix& d, double fraction = 0.05);

/// Descriptor cache: magic "GFMSHOT\0", u64 n, u64 d, row-major f32.
void save_descriptors(const DescriptorField& field, const std::filesystem::path& path);
DescriptorField load_descriptors(const std::filesystem::path& path);

}  // namespace geofm
