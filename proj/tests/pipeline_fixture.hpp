#pragma once
// Small shape pairs and finite-difference helpers shared by unit and acceptance tests.

#include "geofm/fmaps.hpp"
#include "geofm/geodesic.hpp"
#include "geofm/shapes.hpp"

#include <functional>
#include <random>

namespace geofm::test {

struct TinyPair {
  ShapeTensors<double> x, y;
  std::vector<Index> gt;  // X vertex -> Y vertex
};

// Two poses of a 30-vertex figure with random d-wide descriptors (shared per
// corresponding vertex plus a little noise), basis truncated to k.
TinyPair tiny_pair(Index k, Index d, std::uint64_t seed);

struct GradCheck {
  double worst_relative = 0.0;
  int directions = 0;
};

// Compares <grad, dir> with central differences of `loss` along `directions`
// random unit directions in parameter space.
GradCheck check_param_gradient(NetParams<double> params, const std::function<double(const NetParams<double>&)>& loss,
                               const NetParams<double>& grad, int directions, double h, std::uint64_t seed);

}  // namespace geofm::test

#include "geofm/dataio.hpp"

namespace geofm::test {

// In-memory bundle of a mesh at full resolution with identity ground truth.
ShapeBundle bundle_from_mesh(const TriMesh& mesh, Index k, int bins = 10, bool with_gt = true,
                             double radius_fraction = 0.05);

}  // namespace geofm::test
