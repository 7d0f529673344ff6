#include "geofm/shapes.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <numbers>

namespace geofm::shapes {

TriMesh icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                    {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& p : v) p.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  VertexMatrix V(static_cast<Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) V.row(static_cast<Index>(i)) = radius * v[i].transpose();
  FaceMatrix F(static_cast<Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) F.row(static_cast<Index>(i)) << f[i][0], f[i][1], f[i][2];
  return make_mesh(std::move(V), std::move(F));
}

TriMesh grid(int nx, int ny, double width, double height) {
  if (nx < 1 || ny < 1) throw_usage("grid needs at least one cell per side");
  VertexMatrix V((nx + 1) * (ny + 1), 3);
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) V.row(id(i, j)) << width * i / nx, height * j / ny, 0.0;
  FaceMatrix F(2 * nx * ny, 3);
  int f = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      F.row(f++) << id(i, j), id(i + 1, j), id(i + 1, j + 1);
      F.row(f++) << id(i, j), id(i + 1, j + 1), id(i, j + 1);
    }
  return make_mesh(std::move(V), std::move(F));
}

namespace {

constexpr double kLength = 2.0;

double bump(double u, double theta, double u0, double theta0, double su, double st) {
  double dt = std::remainder(theta - theta0, 2.0 * std::numbers::pi);
  return std::exp(-((u - u0) * (u - u0) / (su * su) + dt * dt / (st * st)));
}

// Cross-section radius at axial parameter u in (0,1) and angle theta.
double radius(double u, double theta) {
  const double profile = 0.13 * std::pow(std::sin(std::numbers::pi * u), 0.6);
  const double head = 1.0 + 0.45 * std::exp(-std::pow((u - 0.14) / 0.07, 2));
  const double bumps = 1.0 + 0.35 * bump(u, theta, 0.55, 0.8, 0.06, 0.6) + 0.3 * bump(u, theta, 0.28, 2.6, 0.05, 0.5) +
                       0.25 * bump(u, theta, 0.8, -2.0, 0.05, 0.7) + 0.2 * bump(u, theta, 0.66, -0.4, 0.04, 0.5);
  return profile * head * bumps;
}

// Axis heading angle at arc length s: two smooth joints.
double heading(double s, const FigurePose& pose) {
  auto ramp = [](double x, double a, double b) {
    const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
  };
  return pose.bend * ramp(s / kLength, 0.3, 0.5) + pose.bend2 * ramp(s / kLength, 0.65, 0.8);
}

}  // namespace

TriMesh tube_figure(int rings, int segments, const FigurePose& pose) {
  if (rings < 2 || segments < 3) throw_usage("tube_figure needs rings >= 2 and segments >= 3");
  const Eigen::Vector3d ex(1, 0, 0);
  const Eigen::Vector3d bend_dir(0, std::cos(pose.bend_plane), std::sin(pose.bend_plane));
  const Eigen::Vector3d binormal = ex.cross(bend_dir);

  // Integrate the centerline c(s) = int T(s) ds on a fine grid.
  constexpr int kSteps = 4000;
  std::vector<Eigen::Vector3d> center(kSteps + 1);
  center[0].setZero();
  auto tangent = [&](double s) {
    const double a = heading(s, pose);
    return Eigen::Vector3d(std::cos(a) * ex + std::sin(a) * bend_dir);
  };
  const double ds = kLength / kSteps;
  for (int i = 0; i < kSteps; ++i)
    center[static_cast<std::size_t>(i + 1)] = center[static_cast<std::size_t>(i)] + 0.5 * ds * (tangent(i * ds) + tangent((i + 1) * ds));
  auto centerline = [&](double s) {
    const double x = std::clamp(s / ds, 0.0, static_cast<double>(kSteps));
    const int i = std::min(static_cast<int>(x), kSteps - 1);
    const double t = x - i;
    return Eigen::Vector3d((1 - t) * center[static_cast<std::size_t>(i)] + t * center[static_cast<std::size_t>(i + 1)]);
  };
  auto place = [&](double s, const Eigen::Vector3d& rest_offset) {
    const double a = heading(s, pose);
    const Eigen::Vector3d normal = -std::sin(a) * ex + std::cos(a) * bend_dir;
    return Eigen::Vector3d(centerline(s) + rest_offset.dot(bend_dir) * normal + rest_offset.dot(binormal) * binormal);
  };

  const Index n = static_cast<Index>(rings) * segments + 2;
  VertexMatrix V(n, 3);
  V.row(0) = place(0.0, Eigen::Vector3d::Zero()).transpose();
  for (int r = 0; r < rings; ++r) {
    const double u = (r + 1.0) / (rings + 1.0);
    const double s = u * kLength;
    for (int k = 0; k < segments; ++k) {
      const double theta = 2.0 * std::numbers::pi * k / segments + 0.5 * (r % 2) * 2.0 * std::numbers::pi / segments;
      const double rad = radius(u, theta);
      const double twisted = theta + pose.twist * u;
      const Eigen::Vector3d offset(0.0, rad * std::cos(twisted), rad * std::sin(twisted));
      V.row(1 + r * segments + k) = place(s, offset).transpose();
    }
  }
  V.row(n - 1) = place(kLength, Eigen::Vector3d::Zero()).transpose();
  V.rowwise() -= V.colwise().mean();

  std::vector<std::array<int, 3>> f;
  auto ring_id = [segments](int r, int k) { return 1 + r * segments + ((k % segments) + segments) % segments; };
  for (int k = 0; k < segments; ++k) f.push_back({0, ring_id(0, k + 1), ring_id(0, k)});
  for (int r = 0; r + 1 < rings; ++r) {
    // Odd rings are rotated by half a segment, giving near-equilateral triangles.
    const int shift = r % 2;
    for (int k = 0; k < segments; ++k) {
      const int a = ring_id(r, k), b = ring_id(r, k + 1);
      const int c = ring_id(r + 1, k + shift), d = ring_id(r + 1, k + 1 + shift);
      f.push_back({a, b, c});
      f.push_back({b, d, c});
    }
  }
  const int last = static_cast<int>(n - 1);
  for (int k = 0; k < segments; ++k) f.push_back({last, ring_id(rings - 1, k), ring_id(rings - 1, k + 1)});

  FaceMatrix F(static_cast<Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) F.row(static_cast<Index>(i)) << f[i][0], f[i][1], f[i][2];
  return make_mesh(std::move(V), std::move(F));
}

}  // namespace geofm::shapes
