#include "geofm/mesh.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Geometry>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <tuple>

namespace geofm {

VectorXd face_areas(const VertexMatrix& vertices, const FaceMatrix& faces) {
  VectorXd areas(faces.rows());
  for (Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d a = vertices.row(faces(f, 0));
    const Eigen::Vector3d b = vertices.row(faces(f, 1));
    const Eigen::Vector3d c = vertices.row(faces(f, 2));
    areas[f] = 0.5 * (b - a).cross(c - a).norm();
  }
  return areas;
}

TriMesh make_mesh(VertexMatrix vertices, FaceMatrix faces, std::vector<Index>* kept) {
  const Index n = vertices.rows();
  if (n == 0 || faces.rows() == 0) throw_data("empty mesh");
  if (!vertices.allFinite()) throw_data("non-finite vertex coordinates");
  for (Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k)
      if (faces(f, k) < 0 || faces(f, k) >= n)
        throw_data("face " + std::to_string(f) + " references vertex " + std::to_string(faces(f, k)) +
                   " outside [0, " + std::to_string(n) + ")");

  // Drop faces with a repeated index or zero area.
  const VectorXd areas = face_areas(vertices, faces);
  std::vector<Index> good;
  good.reserve(static_cast<std::size_t>(faces.rows()));
  for (Index f = 0; f < faces.rows(); ++f) {
    const bool repeated = faces(f, 0) == faces(f, 1) || faces(f, 1) == faces(f, 2) || faces(f, 0) == faces(f, 2);
    if (!repeated && areas[f] > 0.0) good.push_back(f);
  }
  if (good.empty()) throw_data("mesh has no non-degenerate faces");
  if (static_cast<Index>(good.size()) != faces.rows())
    spdlog::warn("removed {} degenerate faces", faces.rows() - static_cast<Index>(good.size()));

  std::vector<Index> remap(static_cast<std::size_t>(n), -1);
  for (Index f : good)
    for (int k = 0; k < 3; ++k) remap[static_cast<std::size_t>(faces(f, k))] = 0;
  std::vector<Index> survivors;
  for (Index i = 0; i < n; ++i)
    if (remap[static_cast<std::size_t>(i)] == 0) {
      remap[static_cast<std::size_t>(i)] = static_cast<Index>(survivors.size());
      survivors.push_back(i);
    }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<Index>(survivors.size()), 3);
  for (std::size_t i = 0; i < survivors.size(); ++i) mesh.vertices.row(static_cast<Index>(i)) = vertices.row(survivors[i]);
  mesh.faces.resize(static_cast<Index>(good.size()), 3);
  for (std::size_t f = 0; f < good.size(); ++f)
    for (int k = 0; k < 3; ++k)
      mesh.faces(static_cast<Index>(f), k) = static_cast<int>(remap[static_cast<std::size_t>(faces(good[f], k))]);

  mesh.vertex_areas = VectorXd::Zero(mesh.num_vertices());
  const VectorXd kept_areas = face_areas(mesh.vertices, mesh.faces);
  for (Index f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) mesh.vertex_areas[mesh.faces(f, k)] += kept_areas[f] / 3.0;

  if (kept) *kept = std::move(survivors);
  return mesh;
}

VertexMatrix vertex_normals(const TriMesh& mesh) {
  VertexMatrix normals = VertexMatrix::Zero(mesh.num_vertices(), 3);
  for (Index f = 0; f < mesh.num_faces(); ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0));
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1));
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2));
    const Eigen::RowVector3d weighted = (b - a).cross(c - a).transpose();  // |.| = 2 * area
    for (int k = 0; k < 3; ++k) normals.row(mesh.faces(f, k)) += weighted;
  }
  for (Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 0.0) normals.row(i) /= len;
  }
  return normals;
}

double bounding_box_diagonal(const TriMesh& mesh) {
  return (mesh.vertices.colwise().maxCoeff() - mesh.vertices.colwise().minCoeff()).norm();
}

std::vector<Index> connected_components(const TriMesh& mesh, Index* count) {
  const auto n = static_cast<std::size_t>(mesh.num_vertices());
  std::vector<Index> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<Index>(i);
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (Index f = 0; f < mesh.num_faces(); ++f)
    for (int k = 1; k < 3; ++k) {
      const Index a = find(mesh.faces(f, 0)), b = find(mesh.faces(f, k));
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
  std::vector<Index> label(n, -1);
  Index next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Index root = find(static_cast<Index>(i));
    if (label[static_cast<std::size_t>(root)] < 0) label[static_cast<std::size_t>(root)] = next++;
    label[i] = label[static_cast<std::size_t>(root)];
  }
  if (count) *count = next;
  return label;
}

TriMesh permute_vertices(const TriMesh& mesh, const std::vector<Index>& perm) {
  if (static_cast<Index>(perm.size()) != mesh.num_vertices()) throw_usage("permutation size mismatch");
  const auto inv = invert_permutation(perm);
  TriMesh out;
  out.vertices.resize(mesh.num_vertices(), 3);
  out.vertex_areas.resize(mesh.num_vertices());
  for (std::size_t r = 0; r < perm.size(); ++r) {
    out.vertices.row(static_cast<Index>(r)) = mesh.vertices.row(perm[r]);
    out.vertex_areas[static_cast<Index>(r)] = mesh.vertex_areas[perm[r]];
  }
  out.faces.resize(mesh.num_faces(), 3);
  for (Index f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) out.faces(f, k) = static_cast<int>(inv[static_cast<std::size_t>(mesh.faces(f, k))]);
  return out;
}

std::vector<Index> representatives(const TriMesh& full, const TriMesh& low, const std::vector<Index>& vertex_map) {
  if (static_cast<Index>(vertex_map.size()) != full.num_vertices()) throw_usage("vertex_map size mismatch");
  std::vector<Index> rep(static_cast<std::size_t>(low.num_vertices()), kUnmatched);
  std::vector<double> best(rep.size(), std::numeric_limits<double>::infinity());
  for (Index o = 0; o < full.num_vertices(); ++o) {
    const Index r = vertex_map[static_cast<std::size_t>(o)];
    if (r < 0 || r >= low.num_vertices()) throw_usage("vertex_map entry out of range");
    const double d = (full.vertices.row(o) - low.vertices.row(r)).squaredNorm();
    if (d < best[static_cast<std::size_t>(r)]) {
      best[static_cast<std::size_t>(r)] = d;
      rep[static_cast<std::size_t>(r)] = o;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Quadric error metric simplification
// ---------------------------------------------------------------------------

namespace {

using Quadric = Eigen::Matrix4d;
using Vec3 = Eigen::Vector3d;

Quadric plane_quadric(const Vec3& normal, const Vec3& point, double weight) {
  Eigen::Vector4d p;
  p << normal, -normal.dot(point);
  return weight * p * p.transpose();
}

double quadric_cost(const Quadric& q, const Vec3& v) {
  Eigen::Vector4d h;
  h << v, 1.0;
  return std::max(0.0, h.dot(q * h));
}

struct Candidate {
  double cost;
  int a, b;  // a < b
  std::uint64_t version_a, version_b;
};

struct CandidateOrder {
  // std::priority_queue pops the "largest"; invert to pop minimum cost,
  // ties by lexicographically smaller (a, b).
  bool operator()(const Candidate& x, const Candidate& y) const {
    return std::tie(x.cost, x.a, x.b) > std::tie(y.cost, y.a, y.b);
  }
};

class Simplifier {
 public:
  explicit Simplifier(const TriMesh& mesh) {
    const auto n = static_cast<std::size_t>(mesh.num_vertices());
    pos_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pos_[i] = mesh.vertices.row(static_cast<Index>(i));
    faces_.resize(static_cast<std::size_t>(mesh.num_faces()));
    face_alive_.assign(faces_.size(), 1);
    vertex_faces_.resize(n);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      for (int k = 0; k < 3; ++k) {
        faces_[f][static_cast<std::size_t>(k)] = mesh.faces(static_cast<Index>(f), k);
        vertex_faces_[static_cast<std::size_t>(mesh.faces(static_cast<Index>(f), k))].push_back(static_cast<int>(f));
      }
    }
    alive_.assign(n, 1);
    version_.assign(n, 0);
    parent_.resize(n);
    for (std::size_t i = 0; i < n; ++i) parent_[i] = static_cast<int>(i);
    alive_count_ = static_cast<Index>(n);
    face_count_ = static_cast<Index>(faces_.size());
    build_quadrics();
  }

  void run(Index target) {
    for (int v = 0; v < static_cast<int>(pos_.size()); ++v)
      for (int u : neighbors(v))
        if (v < u) push(v, u);
    while (alive_count_ > target && !heap_.empty()) {
      const Candidate c = heap_.top();
      heap_.pop();
      if (!alive_[static_cast<std::size_t>(c.a)] || !alive_[static_cast<std::size_t>(c.b)]) continue;
      if (c.version_a != version_[static_cast<std::size_t>(c.a)] || c.version_b != version_[static_cast<std::size_t>(c.b)])
        continue;
      Vec3 target_pos;
      placement(c.a, c.b, target_pos);
      if (!collapse_is_valid(c.a, c.b, target_pos)) continue;
      collapse(c.a, c.b, target_pos);
    }
    if (alive_count_ > target)
      throw_data("simplification stalled at " + std::to_string(alive_count_) + " vertices (target " +
                 std::to_string(target) + "); remaining contractions would destroy the surface");
  }

  SimplifyResult result() const {
    std::vector<Index> compact(pos_.size(), -1);
    Index next = 0;
    for (std::size_t i = 0; i < pos_.size(); ++i)
      if (alive_[i]) compact[i] = next++;
    VertexMatrix vertices(next, 3);
    for (std::size_t i = 0; i < pos_.size(); ++i)
      if (alive_[i]) vertices.row(compact[i]) = pos_[i].transpose();
    FaceMatrix faces(face_count_, 3);
    Index fi = 0;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      for (int k = 0; k < 3; ++k) faces(fi, k) = static_cast<int>(compact[static_cast<std::size_t>(faces_[f][static_cast<std::size_t>(k)])]);
      ++fi;
    }
    SimplifyResult out;
    std::vector<Index> kept;
    out.mesh = make_mesh(std::move(vertices), std::move(faces), &kept);
    if (static_cast<Index>(kept.size()) != next) throw_numerical("simplification left unreferenced vertices");
    out.vertex_map.resize(pos_.size());
    for (std::size_t i = 0; i < pos_.size(); ++i) out.vertex_map[i] = compact[static_cast<std::size_t>(root(static_cast<int>(i)))];
    return out;
  }

 private:
  int root(int v) const {
    while (parent_[static_cast<std::size_t>(v)] != v) v = parent_[static_cast<std::size_t>(v)];
    return v;
  }

  Vec3 face_normal_raw(const std::array<int, 3>& f) const {
    return (pos_[static_cast<std::size_t>(f[1])] - pos_[static_cast<std::size_t>(f[0])])
        .cross(pos_[static_cast<std::size_t>(f[2])] - pos_[static_cast<std::size_t>(f[0])]);
  }

  void build_quadrics() {
    quadrics_.assign(pos_.size(), Quadric::Zero());
    // Boundary edges are counted to add perpendicular constraint planes.
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& face = faces_[f];
      const Vec3 raw = face_normal_raw(face);
      const double area2 = raw.norm();
      if (area2 <= 0.0) continue;
      const Vec3 normal = raw / area2;
      const Quadric q = plane_quadric(normal, pos_[static_cast<std::size_t>(face[0])], 0.5 * area2);
      for (int k = 0; k < 3; ++k) {
        quadrics_[static_cast<std::size_t>(face[static_cast<std::size_t>(k)])] += q;
        const int a = face[static_cast<std::size_t>(k)], b = face[static_cast<std::size_t>((k + 1) % 3)];
        edge_faces[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
      }
    }
    for (const auto& [edge, incident] : edge_faces) {
      if (incident.size() != 1) continue;
      const Vec3 pa = pos_[static_cast<std::size_t>(edge.first)], pb = pos_[static_cast<std::size_t>(edge.second)];
      const Vec3 e = pb - pa;
      const Vec3 fn = face_normal_raw(faces_[static_cast<std::size_t>(incident[0])]).normalized();
      const Vec3 side = e.cross(fn);
      if (side.norm() <= 0.0) continue;
      const Quadric q = plane_quadric(side.normalized(), pa, kBoundaryWeight * e.squaredNorm());
      quadrics_[static_cast<std::size_t>(edge.first)] += q;
      quadrics_[static_cast<std::size_t>(edge.second)] += q;
    }
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (int f : vertex_faces_[static_cast<std::size_t>(v)])
      for (int u : faces_[static_cast<std::size_t>(f)])
        if (u != v) out.push_back(u);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  double placement(int a, int b, Vec3& out) const {
    const Quadric q = quadrics_[static_cast<std::size_t>(a)] + quadrics_[static_cast<std::size_t>(b)];
    const Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
    const Vec3 rhs = -q.topRightCorner<3, 1>();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
    lu.setThreshold(1e-10);
    const Vec3& pa = pos_[static_cast<std::size_t>(a)];
    const Vec3& pb = pos_[static_cast<std::size_t>(b)];
    if (lu.rank() == 3) {
      const Vec3 v = lu.solve(rhs);
      // Reject optimal points far from the edge; they come from near-singular systems.
      const double reach = 2.0 * (pb - pa).norm();
      if (v.allFinite() && (v - 0.5 * (pa + pb)).norm() <= reach) {
        out = v;
        return quadric_cost(q, v);
      }
    }
    const std::array<Vec3, 3> options = {pa, pb, 0.5 * (pa + pb)};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : options) {
      const double c = quadric_cost(q, o);
      if (c < best) {
        best = c;
        out = o;
      }
    }
    return best;
  }

  void push(int a, int b) {
    if (a > b) std::swap(a, b);
    Vec3 unused;
    const double cost = placement(a, b, unused);
    heap_.push({cost, a, b, version_[static_cast<std::size_t>(a)], version_[static_cast<std::size_t>(b)]});
  }

  bool is_boundary_vertex(int v) const {
    // A vertex is on the boundary if some incident edge has exactly one face.
    std::map<int, int> count;
    for (int f : vertex_faces_[static_cast<std::size_t>(v)])
      for (int u : faces_[static_cast<std::size_t>(f)])
        if (u != v) ++count[u];
    for (const auto& [u, c] : count)
      if (c == 1) return true;
    return false;
  }

  bool collapse_is_valid(int a, int b, const Vec3& target) const {
    std::vector<int> shared_faces;
    std::vector<int> opposite;
    for (int f : vertex_faces_[static_cast<std::size_t>(a)]) {
      const auto& face = faces_[static_cast<std::size_t>(f)];
      if (std::find(face.begin(), face.end(), b) == face.end()) continue;
      shared_faces.push_back(f);
      for (int u : face)
        if (u != a && u != b) opposite.push_back(u);
    }
    if (shared_faces.empty() || shared_faces.size() > 2) return false;
    if (face_count_ - static_cast<Index>(shared_faces.size()) < 1) return false;

    // Link condition: common neighbors must be exactly the opposite vertices.
    const auto na = neighbors(a), nb = neighbors(b);
    std::vector<int> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    std::sort(opposite.begin(), opposite.end());
    if (common != opposite) return false;

    // Interior edge joining two boundary vertices would pinch the surface.
    if (shared_faces.size() == 2 && is_boundary_vertex(a) && is_boundary_vertex(b)) return false;

    // Opposite vertices must keep at least one face.
    for (int u : opposite) {
      const auto& uf = vertex_faces_[static_cast<std::size_t>(u)];
      const auto lost = std::count_if(uf.begin(), uf.end(), [&](int f) {
        return std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end();
      });
      if (static_cast<std::size_t>(lost) >= uf.size()) return false;
    }

    // Normal flips and degenerate results on faces that survive.
    for (int v : {a, b}) {
      for (int f : vertex_faces_[static_cast<std::size_t>(v)]) {
        if (std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end()) continue;
        auto face = faces_[static_cast<std::size_t>(f)];
        const Vec3 before = face_normal_raw(face);
        std::array<Vec3, 3> p;
        for (int k = 0; k < 3; ++k) {
          const int u = face[static_cast<std::size_t>(k)];
          p[static_cast<std::size_t>(k)] = (u == a || u == b) ? target : pos_[static_cast<std::size_t>(u)];
        }
        const Vec3 after = (p[1] - p[0]).cross(p[2] - p[0]);
        const double la = after.norm(), lb = before.norm();
        if (la <= 1e-12 * lb || lb <= 0.0) return false;
        if (before.dot(after) < kMinNormalCosine * la * lb) return false;
      }
    }

    // Duplicate faces after renaming b -> a.
    std::vector<std::array<int, 3>> keys;
    for (int v : {a, b})
      for (int f : vertex_faces_[static_cast<std::size_t>(v)]) {
        if (std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end()) continue;
        auto face = faces_[static_cast<std::size_t>(f)];
        for (int& u : face)
          if (u == b) u = a;
        std::sort(face.begin(), face.end());
        keys.push_back(face);
      }
    std::sort(keys.begin(), keys.end());
    return std::adjacent_find(keys.begin(), keys.end()) == keys.end();
  }

  void collapse(int a, int b, const Vec3& target) {
    for (int f : vertex_faces_[static_cast<std::size_t>(b)]) {
      auto& face = faces_[static_cast<std::size_t>(f)];
      if (std::find(face.begin(), face.end(), a) != face.end()) {
        face_alive_[static_cast<std::size_t>(f)] = 0;
        --face_count_;
        for (int u : face) {
          if (u == b) continue;
          auto& list = vertex_faces_[static_cast<std::size_t>(u)];
          list.erase(std::remove(list.begin(), list.end(), f), list.end());
        }
      } else {
        for (int& u : face)
          if (u == b) u = a;
        vertex_faces_[static_cast<std::size_t>(a)].push_back(f);
      }
    }
    vertex_faces_[static_cast<std::size_t>(b)].clear();
    pos_[static_cast<std::size_t>(a)] = target;
    quadrics_[static_cast<std::size_t>(a)] += quadrics_[static_cast<std::size_t>(b)];
    alive_[static_cast<std::size_t>(b)] = 0;
    parent_[static_cast<std::size_t>(b)] = a;
    --alive_count_;

    // The neighborhood changed: refresh every edge touching the new 1-ring.
    const auto ring = neighbors(a);
    ++version_[static_cast<std::size_t>(a)];
    for (int u : ring) ++version_[static_cast<std::size_t>(u)];
    for (int u : ring) push(a, u);
    for (int u : ring)
      for (int w : neighbors(u))
        if (w != a) push(u, w);
  }

  static constexpr double kBoundaryWeight = 10.0;
  static constexpr double kMinNormalCosine = 0.1;

  std::vector<Vec3> pos_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<char> face_alive_;
  std::vector<std::vector<int>> vertex_faces_;
  std::vector<Quadric> quadrics_;
  std::vector<char> alive_;
  std::vector<std::uint64_t> version_;
  std::vector<int> parent_;
  Index alive_count_ = 0;
  Index face_count_ = 0;
  std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap_;
};

}  // namespace

SimplifyResult simplify(const TriMesh& mesh, Index target_vertices) {
  if (target_vertices < 3) throw_usage("simplify target must be at least 3 vertices");
  if (mesh.num_vertices() <= target_vertices) {
    return {mesh, identity_permutation(mesh.num_vertices())};
  }
  Simplifier s(mesh);
  s.run(target_vertices);
  return s.result();
}

}  // namespace geofm
