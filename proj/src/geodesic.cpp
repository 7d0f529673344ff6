#include "geofm/geodesic.hpp"

#include "geofm/binio.hpp"
#include "geofm/parallel.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace geofm {

namespace {

using Vec2 = Eigen::Vector2d;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxUnfoldSteps = 24;

const binio::Magic kDistMagic = binio::make_magic("GFMDIST");

// One corner of a face seen from the vertex being updated: the two opposite
// vertices laid out in the face plane with the corner at the origin. For
// obtuse corners, `virt` is a vertex found by unfolding neighbor faces that
// splits the angle into two acute ones.
struct Corner {
  int a = -1, b = -1;
  Vec2 pa, pb;
  int virt = -1;
  Vec2 pv;
};

double cross2(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

// Places c in 2D given the edge (p, q), |c-p|, |c-q|, on the side opposite to `away`.
Vec2 unfold_point(const Vec2& p, const Vec2& q, double lp, double lq, const Vec2& away) {
  const Vec2 e = q - p;
  const double d = e.norm();
  const Vec2 ex = e / d;
  const Vec2 ey(-ex.y(), ex.x());
  const double x = (lp * lp - lq * lq + d * d) / (2.0 * d);
  const double y = std::sqrt(std::max(lp * lp - x * x, 0.0));
  const double side = cross2(ex, away - p) > 0.0 ? -1.0 : 1.0;
  return p + x * ex + side * y * ey;
}

class MarchingMesh {
 public:
  explicit MarchingMesh(const TriMesh& mesh) : mesh_(mesh) {
    const auto n = static_cast<std::size_t>(mesh.num_vertices());
    corners_.resize(n);
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (Index f = 0; f < mesh.num_faces(); ++f)
      for (int k = 0; k < 3; ++k) {
        const int a = mesh.faces(f, k), b = mesh.faces(f, (k + 1) % 3);
        edge_faces[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
      }
    for (Index f = 0; f < mesh.num_faces(); ++f) {
      for (int k = 0; k < 3; ++k) {
        const int v = mesh.faces(f, k), a = mesh.faces(f, (k + 1) % 3), b = mesh.faces(f, (k + 2) % 3);
        Corner c;
        c.a = a;
        c.b = b;
        const double la = length(v, a), lb = length(v, b), lab = length(a, b);
        c.pa = Vec2(la, 0.0);
        const double x = (la * la + lb * lb - lab * lab) / (2.0 * la);
        c.pb = Vec2(x, std::sqrt(std::max(lb * lb - x * x, 0.0)));
        if (c.pa.dot(c.pb) < 0.0) unfold(static_cast<int>(f), c, edge_faces);
        corners_[static_cast<std::size_t>(v)].push_back(c);
      }
    }
    neighbors_.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      for (const auto& c : corners_[v]) {
        neighbors_[v].push_back(c.a);
        neighbors_[v].push_back(c.b);
      }
      std::sort(neighbors_[v].begin(), neighbors_[v].end());
      neighbors_[v].erase(std::unique(neighbors_[v].begin(), neighbors_[v].end()), neighbors_[v].end());
    }
    far_value_ = 10.0 * bounding_box_diagonal(mesh);
  }

  VectorXd march(Index source, std::vector<Index>* order) const {
    const Index n = mesh_.num_vertices();
    if (source < 0 || source >= n)
      throw_usage("source vertex " + std::to_string(source) + " out of range [0, " + std::to_string(n) + ")");
    VectorXd t = VectorXd::Constant(n, kInf);
    std::vector<char> accepted(static_cast<std::size_t>(n), 0);
    using Entry = std::pair<double, Index>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    t[source] = 0.0;
    heap.emplace(0.0, source);
    if (order) order->clear();
    Index reached = 0;
    while (!heap.empty()) {
      const auto [value, v] = heap.top();
      heap.pop();
      if (accepted[static_cast<std::size_t>(v)] || value > t[v]) continue;
      accepted[static_cast<std::size_t>(v)] = 1;
      ++reached;
      if (order) order->push_back(v);
      for (int u : neighbors_[static_cast<std::size_t>(v)]) {
        if (accepted[static_cast<std::size_t>(u)]) continue;
        const double candidate = std::max(update(u, t, accepted), value);
        if (candidate < t[u]) {
          t[u] = candidate;
          heap.emplace(candidate, u);
        }
      }
    }
    if (reached < n) {
      spdlog::warn("fast marching from {}: {} vertices unreachable, assigned distance {}", source, n - reached, far_value_);
      for (Index i = 0; i < n; ++i)
        if (!accepted[static_cast<std::size_t>(i)]) t[i] = far_value_;
    }
    return t;
  }

 private:
  double length(int i, int j) const { return (mesh_.vertices.row(i) - mesh_.vertices.row(j)).norm(); }

  // Walks across faces along the acute wedge of an obtuse corner until a vertex
  // inside the wedge is found.
  void unfold(int face, Corner& c, const std::map<std::pair<int, int>, std::vector<int>>& edge_faces) const {
    int p = c.a, q = c.b;
    Vec2 pp = c.pa, pq = c.pb;
    Vec2 away = Vec2::Zero();
    int from = face;
    for (int step = 0; step < kMaxUnfoldSteps; ++step) {
      const auto it = edge_faces.find({std::min(p, q), std::max(p, q)});
      if (it == edge_faces.end()) return;
      int next = -1;
      for (int f : it->second)
        if (f != from) next = f;
      if (next < 0) return;
      int w = -1;
      for (int k = 0; k < 3; ++k) {
        const int x = mesh_.faces(next, k);
        if (x != p && x != q) w = x;
      }
      const Vec2 pw = unfold_point(pp, pq, length(w, p), length(w, q), away);
      const bool past_a = pw.dot(c.pa) <= 0.0;
      const bool past_b = pw.dot(c.pb) <= 0.0;
      if (!past_a && !past_b) {
        c.virt = w;
        c.pv = pw;
        return;
      }
      // Continue through the edge that the wedge still crosses.
      if (past_a) {
        away = pq;
        q = w;
        pq = pw;
      } else {
        away = pp;
        p = w;
        pp = pw;
      }
      from = next;
    }
  }

  // Minimizes ta + s (tb - ta) + |pa + s (pb - pa)| over s in [0, 1].
  static double segment_update(const Vec2& pa, const Vec2& pb, double ta, double tb) {
    double best = std::min(ta + pa.norm(), tb + pb.norm());
    const Vec2 e = pb - pa;
    const double len = e.norm();
    if (len <= 0.0) return best;
    const Vec2 u = e / len;
    const double g = (tb - ta) / len;
    if (std::abs(g) >= 1.0) return best;
    const double alpha = -pa.dot(u);
    const double h = std::abs(cross2(u, pa));
    const double t = alpha - g * h / std::sqrt(1.0 - g * g);
    if (t > 0.0 && t < len) best = std::min(best, ta + g * t + std::hypot(t - alpha, h));
    return best;
  }

  double update(int u, const VectorXd& t, const std::vector<char>& accepted) const {
    double best = kInf;
    auto known = [&](int x) { return x >= 0 && accepted[static_cast<std::size_t>(x)]; };
    for (const auto& c : corners_[static_cast<std::size_t>(u)]) {
      const bool ka = known(c.a), kb = known(c.b);
      if (ka) best = std::min(best, t[c.a] + c.pa.norm());
      if (kb) best = std::min(best, t[c.b] + c.pb.norm());
      if (c.virt >= 0 && known(c.virt)) {
        if (ka) best = std::min(best, segment_update(c.pa, c.pv, t[c.a], t[c.virt]));
        if (kb) best = std::min(best, segment_update(c.pv, c.pb, t[c.virt], t[c.b]));
      } else if (ka && kb) {
        best = std::min(best, segment_update(c.pa, c.pb, t[c.a], t[c.b]));
      }
    }
    return best;
  }

  const TriMesh& mesh_;
  std::vector<std::vector<Corner>> corners_;
  std::vector<std::vector<int>> neighbors_;
  double far_value_ = 0.0;
};

}  // namespace

GeodesicMatrix GeodesicMatrix::permuted(const std::vector<Index>& perm) const {
  GeodesicMatrix out;
  const Index n = size();
  out.d.resize(n, n);
  for (Index c = 0; c < n; ++c)
    for (Index r = 0; r < n; ++r) out.d(r, c) = d(perm[static_cast<std::size_t>(r)], perm[static_cast<std::size_t>(c)]);
  out.diameter = diameter;
  return out;
}

VectorXd fast_marching(const TriMesh& mesh, Index source, std::vector<Index>* accepted_order) {
  return MarchingMesh(mesh).march(source, accepted_order);
}

VectorXd edge_graph_distances(const TriMesh& mesh, Index source) {
  const Index n = mesh.num_vertices();
  if (source < 0 || source >= n) throw_usage("source vertex out of range");
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
  for (Index f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces(f, k), b = mesh.faces(f, (k + 1) % 3);
      const double len = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
      adj[static_cast<std::size_t>(a)].emplace_back(b, len);
      adj[static_cast<std::size_t>(b)].emplace_back(a, len);
    }
  VectorXd dist = VectorXd::Constant(n, kInf);
  using Entry = std::pair<double, Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (const auto& [u, len] : adj[static_cast<std::size_t>(v)])
      if (d + len < dist[u]) {
        dist[u] = d + len;
        heap.emplace(dist[u], u);
      }
  }
  return dist;
}

GeodesicMatrix distance_matrix(const TriMesh& mesh, Index max_vertices, unsigned threads) {
  const Index n = mesh.num_vertices();
  if (n > max_vertices)
    throw_usage("distance matrix for " + std::to_string(n) + " vertices exceeds the memory guard of " +
                std::to_string(max_vertices));
  const MarchingMesh marching(mesh);
  MatrixXf raw(n, n);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    raw.col(static_cast<Index>(i)) = marching.march(static_cast<Index>(i), nullptr).cast<float>();
  });
  GeodesicMatrix out;
  out.d.resize(n, n);
  for (Index c = 0; c < n; ++c)
    for (Index r = 0; r < n; ++r)
      out.d(r, c) = static_cast<float>(0.5 * (static_cast<double>(raw(r, c)) + static_cast<double>(raw(c, r))));
  out.diameter = static_cast<double>(out.d.maxCoeff());
  return out;
}

void save_distances(const GeodesicMatrix& d, const std::filesystem::path& path) {
  binio::Writer w(path);
  w.magic(kDistMagic);
  w.u64(static_cast<std::uint64_t>(d.size()));
  binio::write_rowmajor(w, d.d);
  w.commit();
}

GeodesicMatrix load_distances(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kDistMagic);
  const auto n = static_cast<Index>(r.u64());
  GeodesicMatrix out;
  out.d.resize(n, n);
  binio::read_rowmajor(r, out.d);
  r.expect_end();
  out.diameter = n > 0 ? static_cast<double>(out.d.maxCoeff()) : 0.0;
  return out;
}

}  // namespace geofm
