#pragma once

// Procedural meshes used by tests, demos and the synthetic-data tool.

#include "geofm/mesh.hpp"

namespace geofm::shapes {

/// Icosahedron refined `subdivisions` times, vertices projected to a sphere.
/// Vertex counts: 12, 42, 162, 642, 2562, ...
TriMesh icosphere(int subdivisions, double radius = 1.0);

/// Regular grid over [0,width]x[0,height] with (nx+1)x(ny+1) vertices. Each
/// cell is split along the same diagonal, so all triangles are right triangles.
TriMesh grid(int nx, int ny, double width = 1.0, double height = 1.0);

/// Pose of the articulated tube figure. Angles in radians.
struct FigurePose {
  double bend = 0.0;        ///< bending angle of the first joint
  double bend2 = 0.0;       ///< bending angle of the second joint
  double bend_plane = 0.0;  ///< azimuth of the bending plane around the axis
  double twist = 0.0;       ///< total twist of the cross sections along the axis
};

/// A closed, asymmetric tube-like figure (a "worm" with bumps) of
/// rings * segments + 2 vertices. Different poses are near-isometric: the axis
/// is bent along a circular arc and cross sections ride along it, so only the
/// thin tube cross-section experiences stretch.
TriMesh tube_figure(int rings, int segments, const FigurePose& pose = {});

}  // namespace geofm::shapes
