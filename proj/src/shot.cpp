#include "geofm/shot.hpp"

#include "geofm/binio.hpp"
#include "geofm/parallel.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace geofm {

namespace {

constexpr int kSectors = 32;
constexpr int kMinNeighbors = 5;
constexpr double kRad45 = std::numbers::pi / 4.0;
constexpr double kRad90 = std::numbers::pi / 2.0;
constexpr double kRad135 = 3.0 * std::numbers::pi / 4.0;
constexpr double kPi78 = 7.0 * std::numbers::pi / 8.0;

const binio::Magic kShotMagic = binio::make_magic("GFMSHOT");

// Uniform hash grid for fixed-radius queries.
class BallQuery {
 public:
  BallQuery(const VertexMatrix& points, double radius) : points_(points), cell_(radius) {
    for (Index i = 0; i < points.rows(); ++i) cells_[key(cell_of(points.row(i)))].push_back(static_cast<int>(i));
  }

  // Neighbors within the radius (excluding coincident points), with distances.
  void query(Index center, std::vector<int>& ids, std::vector<double>& dists) const {
    ids.clear();
    dists.clear();
    const Eigen::RowVector3d p = points_.row(center);
    const Eigen::Array3i c = cell_of(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(key(c + Eigen::Array3i(dx, dy, dz)));
          if (it == cells_.end()) continue;
          for (int j : it->second) {
            const double d = (points_.row(j) - p).norm();
            if (d <= cell_ && d > 0.0) {
              ids.push_back(j);
              dists.push_back(d);
            }
          }
        }
  }

 private:
  Eigen::Array3i cell_of(const Eigen::RowVector3d& p) const {
    return (p.array() / cell_).floor().cast<int>().transpose();
  }
  static std::int64_t key(const Eigen::Array3i& c) {
    constexpr std::int64_t kOffset = 1 << 20;
    return ((c.x() + kOffset) << 42) | ((c.y() + kOffset) << 21) | (c.z() + kOffset);
  }

  const VertexMatrix& points_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

struct Frame {
  Eigen::Matrix3d axes;  // rows: x, y, z
  double margin = 0.0;
  bool valid = false;
};

// Flips `axis` toward the side holding most neighbor displacements. A tied
// vote falls back to the sign of the summed projections, then to positive.
double disambiguate(Eigen::Vector3d& axis, const std::vector<Eigen::Vector3d>& offsets) {
  int plus = 0, minus = 0;
  double sum = 0.0, total = 0.0;
  for (const auto& v : offsets) {
    const double dp = v.dot(axis);
    (dp >= 0.0 ? plus : minus)++;
    sum += dp;
    total += std::abs(dp);
  }
  if (plus != minus) {
    if (plus < minus) axis = -axis;
    return static_cast<double>(std::abs(plus - minus)) / static_cast<double>(offsets.size());
  }
  if (sum < 0.0) axis = -axis;
  return total > 0.0 ? 0.01 * std::abs(sum) / total : 0.0;
}

Frame local_frame(const std::vector<Eigen::Vector3d>& offsets, const std::vector<double>& dists, double radius,
                  const Eigen::Vector3d& normal) {
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double total = 0.0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const double w = radius - dists[i];
    cov += w * offsets[i] * offsets[i].transpose();
    total += w;
  }
  Frame frame;
  if (total <= 0.0) return frame;
  cov /= total;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> evd(cov);
  const Eigen::Vector3d lambda = evd.eigenvalues();
  if (!(lambda[2] > 0.0)) return frame;
  Eigen::Vector3d x = evd.eigenvectors().col(2);
  Eigen::Vector3d z = evd.eigenvectors().col(0);
  double gap = std::min(lambda[2] - lambda[1], lambda[1] - lambda[0]) / lambda[2];
  if (lambda[1] <= 1e-12 * lambda[2]) {
    // Collinear neighborhood: the plane is undetermined, take it from the surface normal.
    z = normal - normal.dot(x) * x;
    if (z.norm() < 1e-6) return frame;
    z.normalize();
    gap = 1.0;
  }
  const double vote_x = disambiguate(x, offsets);
  const double vote_z = disambiguate(z, offsets);
  frame.axes.row(0) = x.transpose();
  frame.axes.row(1) = z.cross(x).transpose();
  frame.axes.row(2) = z.transpose();
  frame.margin = std::min({gap, vote_x, vote_z});
  frame.valid = true;
  return frame;
}

// Quadrilinear soft binning of one neighbor into the 32-volume histogram.
void accumulate(const Eigen::Vector3d& local, double distance, double bin_distance, int bins, double radius,
                Eigen::Ref<VectorXd> shot) {
  const double r14 = radius / 4.0, r12 = radius / 2.0, r34 = 3.0 * radius / 4.0;
  double x = local.x(), y = local.y(), z = local.z();
  if (std::abs(x) < 1e-30) x = 0.0;
  if (std::abs(y) < 1e-30) y = 0.0;
  if (std::abs(z) < 1e-30) z = 0.0;

  const int bit4 = (y > 0.0 || (y == 0.0 && x < 0.0)) ? 1 : 0;
  const int bit3 = (x > 0.0 || (x == 0.0 && y > 0.0)) ? 1 - bit4 : bit4;
  int desc = ((bit4 << 3) + (bit3 << 2)) << 1;
  if (x * y > 0.0 || x == 0.0)
    desc += std::abs(x) >= std::abs(y) ? 0 : 4;
  else
    desc += std::abs(x) > std::abs(y) ? 4 : 0;
  desc += z > 0.0 ? 1 : 0;
  desc += distance > r12 ? 2 : 0;

  const int stride = bins + 1;
  const int step = static_cast<int>(std::floor(bin_distance + 0.5));
  const int volume = desc * stride;
  const double frac = bin_distance - step;
  double weight = 1.0 - std::abs(frac);

  // cosine bins
  if (frac > 0.0)
    shot[volume + (step + 1) % bins] += frac;
  else
    shot[volume + (step - 1 + bins) % bins] -= frac;

  // radial shells
  if (distance > r12) {
    const double t = (distance - r34) / r12;
    if (distance > r34) {
      weight += 1.0 - t;
    } else {
      weight += 1.0 + t;
      shot[(desc - 2) * stride + step] -= t;
    }
  } else {
    const double t = (distance - r14) / r12;
    if (distance < r14) {
      weight += 1.0 + t;
    } else {
      weight += 1.0 - t;
      shot[(desc + 2) * stride + step] += t;
    }
  }

  // elevation
  const double inclination = std::acos(std::clamp(z / distance, -1.0, 1.0));
  if (inclination > kRad90 || (std::abs(inclination - kRad90) < 1e-30 && z <= 0.0)) {
    const double t = (inclination - kRad135) / kRad90;
    if (inclination > kRad135) {
      weight += 1.0 - t;
    } else {
      weight += 1.0 + t;
      shot[(desc + 1) * stride + step] -= t;
    }
  } else {
    const double t = (inclination - kRad45) / kRad90;
    if (inclination < kRad45) {
      weight += 1.0 + t;
    } else {
      weight += 1.0 - t;
      shot[(desc - 1) * stride + step] += t;
    }
  }

  // azimuth
  if (y != 0.0 || x != 0.0) {
    const double azimuth = std::atan2(y, x);
    const int sector = desc >> 2;
    const double t = std::clamp((azimuth - (-kPi78 + kRad45 * sector)) / kRad45, -0.5, 0.5);
    if (t > 0.0) {
      weight += 1.0 - t;
      shot[((desc + 4) % kSectors) * stride + step] += t;
    } else {
      weight += 1.0 + t;
      shot[((desc - 4 + kSectors) % kSectors) * stride + step] -= t;
    }
  }

  shot[volume + step] += weight;
}

}  // namespace

DescriptorField DescriptorField::permuted(const std::vector<Index>& perm) const {
  DescriptorField out;
  out.values.resize(values.rows(), values.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) out.values.row(static_cast<Index>(r)) = values.row(perm[r]);
  return out;
}

DescriptorField shot_descriptors(const TriMesh& mesh, double radius, int bins, VectorXd* frame_margin, unsigned threads) {
  if (!(radius > 0.0)) throw_usage("SHOT radius must be positive");
  if (bins < 1) throw_usage("SHOT needs at least one bin");
  const Index n = mesh.num_vertices();
  const Index width = shot_width(bins);
  const VertexMatrix normals = vertex_normals(mesh);
  const BallQuery balls(mesh.vertices, radius);

  DescriptorField field;
  field.values.setZero(n, width);
  if (frame_margin) frame_margin->setZero(n);
  std::atomic<Index> sparse{0}, degenerate{0};

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t task) {
    const auto v = static_cast<Index>(task);
    std::vector<int> ids;
    std::vector<double> dists;
    balls.query(v, ids, dists);
    if (static_cast<int>(ids.size()) < kMinNeighbors) {
      ++sparse;
      return;
    }
    std::vector<Eigen::Vector3d> offsets(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      offsets[i] = (mesh.vertices.row(ids[i]) - mesh.vertices.row(v)).transpose();
    const Frame frame = local_frame(offsets, dists, radius, normals.row(v).transpose());
    if (!frame.valid) {
      ++degenerate;
      return;
    }
    const Eigen::Vector3d z = frame.axes.row(2).transpose();
    VectorXd shot = VectorXd::Zero(width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double cosine = std::clamp(z.dot(normals.row(ids[i]).transpose()), -1.0, 1.0);
      const double bin_distance = (1.0 + cosine) * bins / 2.0;
      accumulate(frame.axes * offsets[i], dists[i], bin_distance, bins, radius, shot);
    }
    const double norm = shot.norm();
    if (!(norm > 0.0)) {
      ++degenerate;
      return;
    }
    field.values.row(v) = (shot / norm).cast<float>().transpose();
    if (frame_margin) (*frame_margin)[v] = frame.margin;
  });
  if (sparse > 0)
    spdlog::warn("SHOT: {} vertices have fewer than {} neighbors within radius {}; descriptors set to zero",
                 sparse.load(), kMinNeighbors, radius);
  if (degenerate > 0) spdlog::warn("SHOT: {} vertices have a degenerate reference frame; descriptors set to zero", degenerate.load());
  return field;
}

double default_radius(const GeodesicMatrix& d, double fraction) {
  if (!(d.diameter > 0.0)) throw_data("degenerate diameter");
  return fraction * d.diameter;
}

void save_descriptors(const DescriptorField& field, const std::filesystem::path& path) {
  binio::Writer w(path);
  w.magic(kShotMagic);
  w.u64(static_cast<std::uint64_t>(field.size()));
  w.u64(static_cast<std::uint64_t>(field.width()));
  binio::write_rowmajor(w, field.values);
  w.commit();
}

DescriptorField load_descriptors(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kShotMagic);
  const auto n = static_cast<Index>(r.u64());
  const auto d = static_cast<Index>(r.u64());
  DescriptorField field;
  field.values.resize(n, d);
  binio::read_rowmajor(r, field.values);
  r.expect_end();
  return field;
}

}  // namespace geofm
