#include "geofm/geodesic.hpp"
#include "geofm/shapes.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace geofm;

TEST_CASE("fast marching on a flat grid") {
  const TriMesh g = shapes::grid(50, 50);
  const VectorXd d = fast_marching(g, 0);
  CHECK(d[0] == 0.0);
  const Index far = g.num_vertices() - 1;
  CHECK(std::abs(d[far] - std::sqrt(2.0)) <= 0.02 * std::sqrt(2.0));
  // The other diagonal crosses every cell diagonal instead of running along edges.
  const VectorXd d2 = fast_marching(g, 50);
  CHECK(std::abs(d2[50 * 51] - std::sqrt(2.0)) <= 0.02 * std::sqrt(2.0));
}

TEST_CASE("fast marching antipodal distance on the sphere") {
  const TriMesh s = shapes::icosphere(4);
  const VectorXd d = fast_marching(s, 0);
  Index antipode = 0;
  (s.vertices.rowwise() + s.vertices.row(0)).rowwise().norm().minCoeff(&antipode);
  CHECK(std::abs(d[antipode] - M_PI) <= 0.03 * M_PI);
  // Great-circle oracle on every vertex.
  double worst = 0.0;
  for (Index v = 0; v < s.num_vertices(); ++v) {
    const double exact = std::acos(std::clamp(s.vertices.row(v).dot(s.vertices.row(0)), -1.0, 1.0));
    worst = std::max(worst, std::abs(d[v] - exact));
  }
  CHECK(worst <= 0.03 * M_PI);
}

TEST_CASE("accepted order is monotone and graph distance bounds fast marching") {
  for (const TriMesh& m : {shapes::icosphere(3), shapes::tube_figure(30, 16, {1.0, -0.7, 0.2, 0.5}), shapes::grid(12, 9)}) {
    for (Index src : {Index{0}, m.num_vertices() / 2}) {
      std::vector<Index> order;
      const VectorXd d = fast_marching(m, src, &order);
      REQUIRE(static_cast<Index>(order.size()) == m.num_vertices());
      for (std::size_t i = 1; i < order.size(); ++i) CHECK(d[order[i]] >= d[order[i - 1]]);
      const VectorXd graph = edge_graph_distances(m, src);
      CHECK(((d - graph).array() <= 1e-6).all());
      CHECK((d.array() >= 0.0).all());
    }
  }
}

TEST_CASE("obtuse meshes stay consistent") {
  // Stretched grid: every triangle has an obtuse angle.
  TriMesh g = shapes::grid(40, 10, 1.0, 1.0);
  for (Index v = 0; v < g.num_vertices(); ++v) g.vertices(v, 0) += 0.4 * g.vertices(v, 1);
  g = make_mesh(g.vertices, g.faces);
  const VectorXd d = fast_marching(g, 0);
  const VectorXd graph = edge_graph_distances(g, 0);
  CHECK(((d - graph).array() <= 1e-6).all());
  double worst = 0.0, worst_graph = 0.0;
  for (Index v = 1; v < g.num_vertices(); ++v) {
    const double exact = g.vertices.row(v).norm();
    worst = std::max(worst, std::abs(d[v] - exact));
    worst_graph = std::max(worst_graph, std::abs(graph[v] - exact));
  }
  CHECK(worst <= 0.5 * worst_graph);
}

TEST_CASE("distance matrix invariants") {
  const TriMesh m = shapes::tube_figure(12, 10, {0.7, 0.3, 0.0, 0.2});
  const GeodesicMatrix D = distance_matrix(m);
  const Index n = m.num_vertices();
  CHECK(D.d.diagonal().cwiseAbs().maxCoeff() == 0.0f);
  CHECK(D.d == D.d.transpose());
  CHECK((D.d.array() >= 0.0f).all());
  CHECK(D.diameter == static_cast<double>(D.d.maxCoeff()));
  for (Index f = 0; f < m.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = m.faces(f, k), b = m.faces(f, (k + 1) % 3);
      CHECK(D.d(a, b) <= (m.vertices.row(a) - m.vertices.row(b)).norm() + 1e-6);
    }
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (int t = 0; t < 2000; ++t) {
    const Index i = pick(rng), j = pick(rng), k = pick(rng);
    CHECK(D.d(i, k) <= 1.02 * (D.d(i, j) + D.d(j, k)) + 1e-6);
  }
}

TEST_CASE("distance matrix is relabeling equivariant") {
  std::mt19937_64 rng(21);
  const TriMesh m = shapes::icosphere(2);
  const auto perm = test::random_permutation(m.num_vertices(), rng);
  const GeodesicMatrix D = distance_matrix(m);
  const GeodesicMatrix P = distance_matrix(permute_vertices(m, perm));
  const GeodesicMatrix conj = D.permuted(perm);
  CHECK((P.d - conj.d).cwiseAbs().maxCoeff() <= 1e-5f * static_cast<float>(D.diameter));
}

TEST_CASE("planar grid distance matrix vs Euclidean") {
  const TriMesh g = shapes::grid(30, 30);
  const GeodesicMatrix D = distance_matrix(g);
  double worst = 0.0;
  for (Index i = 0; i < g.num_vertices(); ++i)
    for (Index j = 0; j < g.num_vertices(); ++j)
      worst = std::max(worst, std::abs(D.d(i, j) - (g.vertices.row(i) - g.vertices.row(j)).norm()));
  CHECK(worst / D.diameter <= 0.02);
}

TEST_CASE("disconnected components get a finite far value") {
  const TriMesh a = shapes::icosphere(1);
  VertexMatrix V(2 * a.num_vertices(), 3);
  V.topRows(a.num_vertices()) = a.vertices;
  V.bottomRows(a.num_vertices()) = a.vertices.rowwise() + Eigen::RowVector3d(4, 0, 0);
  FaceMatrix F(2 * a.num_faces(), 3);
  F.topRows(a.num_faces()) = a.faces;
  F.bottomRows(a.num_faces()) = a.faces.array() + static_cast<int>(a.num_vertices());
  const TriMesh two = make_mesh(V, F);
  const VectorXd d = fast_marching(two, 0);
  CHECK(d[two.num_vertices() - 1] == doctest::Approx(10.0 * bounding_box_diagonal(two)));
  CHECK(d.allFinite());
}

TEST_CASE("errors and cache") {
  const TriMesh m = shapes::icosphere(1);
  CHECK_THROWS_AS(fast_marching(m, -1), Error);
  CHECK_THROWS_AS(fast_marching(m, m.num_vertices()), Error);
  CHECK_THROWS_AS(distance_matrix(m, 10), Error);
  test::TempDir dir("dist");
  const GeodesicMatrix D = distance_matrix(m);
  save_distances(D, dir / "d.bin");
  const GeodesicMatrix r = load_distances(dir / "d.bin");
  CHECK(r.d == D.d);
  CHECK(r.diameter == D.diameter);
}
