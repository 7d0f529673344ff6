#include "geofm/geodesic.hpp"
#include "geofm/refine.hpp"
#include "geofm/shapes.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

using namespace geofm;

namespace {

double assignment_value(const MatrixXd& s, const std::vector<Index>& perm) {
  double v = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) v += s(static_cast<Index>(i), perm[i]);
  return v;
}

std::vector<Index> brute_force(const MatrixXd& s) {
  std::vector<Index> perm = identity_permutation(s.rows()), best = perm;
  double best_value = -std::numeric_limits<double>::infinity();
  do {
    const double v = assignment_value(s, perm);
    if (v > best_value) {
      best_value = v;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double mean_error(const std::vector<Index>& map, const MatrixXf& d, double diameter) {
  double s = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) s += d(static_cast<Index>(i), map[i]);
  return s / (static_cast<double>(map.size()) * diameter);
}

}  // namespace

TEST_CASE("extract_map") {
  MatrixXd p = MatrixXd::Zero(3, 3);
  p(2, 0) = 1;
  p(0, 1) = 1;
  p(1, 2) = 1;
  CHECK(extract_map(p).map == std::vector<Index>{2, 0, 1});
  CHECK_FALSE(extract_map(p).bijective);
  CHECK(extract_map(MatrixXd(MatrixXd::Constant(4, 2, 0.5))).map == std::vector<Index>{0, 0});
  MatrixXf q(3, 1);
  q << 0.1f, 0.9f, 0.3f;
  CHECK(extract_map(q).map == std::vector<Index>{1});
}

TEST_CASE("lap_solve examples") {
  CHECK(lap_solve(MatrixXd::Identity(5, 5)) == identity_permutation(5));
  MatrixXd s(3, 3);
  s << 1, 2, 3, 3, 1, 2, 2, 3, 1;
  const auto perm = lap_solve(s);
  CHECK(perm == std::vector<Index>{2, 0, 1});
  CHECK(assignment_value(s, perm) == 9.0);
  std::mt19937_64 rng(1);
  MatrixXd r = MatrixXd::Random(7, 7);
  const auto base = lap_solve(r);
  r.row(3).array() += 5.0;
  CHECK(lap_solve(r) == base);
  CHECK(lap_solve(MatrixXd(0, 0)).empty());
  CHECK_THROWS_AS(lap_solve(MatrixXd(2, 3)), Error);
  MatrixXd bad = MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(lap_solve(bad), Error);
}

TEST_CASE("lap_solve agrees with enumeration") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const Index n = 1 + t % 6;
    MatrixXd s(n, n);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = uni(rng);
    if (lap_solve(s) != brute_force(s)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("lap_solve handles larger problems") {
  std::mt19937_64 rng(3);
  const Index n = 300;
  const auto perm = test::random_permutation(n, rng);
  MatrixXd s = MatrixXd::Random(n, n);
  for (Index i = 0; i < n; ++i) s(i, perm[static_cast<std::size_t>(i)]) = 10.0;
  CHECK(lap_solve(s) == perm);
}

TEST_CASE("heat schedule") {
  const auto t = heat_time_schedule(2.0, 3);
  REQUIRE(t.size() == 3);
  CHECK(t[0] == doctest::Approx(0.4));
  CHECK(t[1] == doctest::Approx(0.04));
  CHECK(t[2] == doctest::Approx(0.004));
  CHECK(heat_time_schedule(2.0, 1) == std::vector<double>{0.4});
  CHECK_THROWS_AS(heat_time_schedule(0.0, 3), Error);
}

TEST_CASE("pmf keeps the identity on a self map") {
  const TriMesh m = shapes::tube_figure(4, 12);
  REQUIRE(m.num_vertices() == 50);
  const auto b = eig_basis(m, 20);
  const double diam = distance_matrix(m).diameter;
  PointMap init{identity_permutation(50), true};
  for (double t : heat_time_schedule(diam, 10)) {
    PmfConfig cfg;
    cfg.iterations = 1;
    cfg.times = {t};
    const auto r = pmf_refine(init, b, b, cfg);
    CHECK(r.map.map == init.map);
    CHECK(r.map.bijective);
  }
}

TEST_CASE("pmf improves a corrupted isometric map") {
  const TriMesh x = shapes::tube_figure(11, 18, {0.2, 0.0, 0.0, 0.0});
  const TriMesh y = shapes::tube_figure(11, 18, {1.0, -0.7, 0.4, 0.3});
  REQUIRE(x.num_vertices() == 200);
  const auto bx = eig_basis(x, 30), by = eig_basis(y, 30);
  const auto dy = distance_matrix(y);
  std::mt19937_64 rng(4);
  PointMap init{identity_permutation(200), false};
  std::uniform_int_distribution<Index> any(0, 199);
  for (Index i = 0; i < 200; i += 5) init.map[static_cast<std::size_t>(i)] = any(rng);
  PmfConfig cfg;
  cfg.diameter = dy.diameter;
  const auto r = pmf_refine(init, bx, by, cfg);
  CHECK(r.map.is_permutation(200));
  CHECK(r.map.bijective);
  for (std::size_t i = 1; i < r.objective_after.size(); ++i) CHECK(r.objective_after[i] >= r.objective_before[i]);
  const double before = mean_error(init.map, dy.d, dy.diameter);
  const double after = mean_error(r.map.map, dy.d, dy.diameter);
  MESSAGE("pmf mean error " << before << " -> " << after);
  CHECK(after < before);
}

TEST_CASE("pmf with unequal sizes") {
  const TriMesh x = shapes::tube_figure(4, 12), y = shapes::tube_figure(5, 12);
  const auto bx = eig_basis(x, 12), by = eig_basis(y, 12);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> any(0, y.num_vertices() - 1);
  PointMap init;
  for (Index i = 0; i < x.num_vertices(); ++i) init.map.push_back(any(rng));
  PmfConfig cfg;
  cfg.iterations = 3;
  const auto r = pmf_refine(init, bx, by, cfg);
  CHECK(r.map.size() == x.num_vertices());
  CHECK_FALSE(r.map.bijective);
  std::vector<Index> sorted = r.map.map;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());  // injective into Y

  PointMap back;
  for (Index i = 0; i < y.num_vertices(); ++i) back.map.push_back(i % x.num_vertices());
  const auto r2 = pmf_refine(back, by, bx, cfg);
  CHECK(r2.map.size() == y.num_vertices());
  for (Index j : r2.map.map) CHECK((j >= 0 && j < x.num_vertices()));

  PointMap bad = init;
  bad.map[0] = kUnmatched;
  CHECK_THROWS_AS(pmf_refine(bad, bx, by, cfg), Error);
  cfg.iterations = 0;
  CHECK(pmf_refine(init, bx, by, cfg).map.map == init.map);
}

TEST_CASE("farthest point sampling") {
  MatrixXd pts(4, 1);
  pts << 0.0, 1.0, 10.0, 4.0;
  CHECK(farthest_point_sample(pts, 3) == std::vector<Index>{0, 2, 3});
  CHECK_THROWS_AS(farthest_point_sample(pts, 5), Error);
}

TEST_CASE("irls zero-residual fixed point and monotone objective") {
  std::mt19937_64 rng(6);
  const MatrixXd f = MatrixXd::Random(6, 40), c0 = MatrixXd::Random(5, 6);
  const auto exact = irls_l21(f, c0 * f);
  CHECK((exact.c - c0).cwiseAbs().maxCoeff() <= 1e-10);

  MatrixXd g = c0 * f + 0.3 * MatrixXd::Random(5, 40);
  const auto r = irls_l21(f, g, 30);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] * (1 + 1e-12));
  CHECK_THROWS_AS(irls_l21(MatrixXd(6, 0), MatrixXd(5, 0)), Error);
}

TEST_CASE("irls downweights a planted outlier") {
  const MatrixXd f = MatrixXd::Random(10, 201), c0 = MatrixXd::Random(10, 10);
  MatrixXd g = c0 * f;
  g.col(17) += 20.0 * MatrixXd::Random(10, 1);
  const double robust = (irls_l21(f, g).c - c0).norm();
  const double plain = (least_squares_fm(f, g) - c0).norm();
  MESSAGE("outlier perturbation irls " << robust << " vs least squares " << plain);
  CHECK(robust <= 0.1 * plain);
}

TEST_CASE("upscale recovers an identity self map") {
  const TriMesh m = shapes::tube_figure(20, 12);
  const auto s = simplify(m, m.num_vertices() + 10);
  REQUIRE(s.mesh.num_vertices() == m.num_vertices());
  const auto reps = representatives(m, s.mesh, s.vertex_map);
  const auto full = eig_basis(m, 60);
  const auto up = upscale(PointMap{identity_permutation(m.num_vertices()), true}, reps, reps, full, full);
  CHECK((up.c - MatrixXd::Identity(60, 60)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(up.map.map == identity_permutation(m.num_vertices()));

  PointMap none{std::vector<Index>(static_cast<std::size_t>(m.num_vertices()), kUnmatched), false};
  try {
    upscale(none, reps, reps, full, full);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "empty constraint set");
  }
}

TEST_CASE("map_from_fm matches soft-map argmax") {
  const TriMesh m = shapes::icosphere(2);
  const auto b = eig_basis(m, 16);
  const MatrixXd c = MatrixXd::Random(16, 16);
  const MatrixXd p = (b.phi * c * (b.mass.asDiagonal() * b.phi).transpose()).cwiseAbs();
  CHECK(map_from_fm(c, b, b).map == extract_map(p).map);
}

TEST_CASE("correspondence files") {
  test::TempDir dir("refine");
  PointMap m{{2, 0, kUnmatched, 1}, false};
  save_correspondence(m, 3, dir / "c.txt");
  Index ny = 0;
  const auto back = load_correspondence(dir / "c.txt", &ny);
  CHECK(back.map == m.map);
  CHECK(ny == 3);
  CHECK_THROWS_AS(save_correspondence(m, 2, dir / "bad.txt"), Error);

  test::write_text(dir / "h.txt", "corrmap 2 2\n0 0\n1 1\n");
  CHECK_THROWS_AS(load_correspondence(dir / "h.txt"), Error);
  test::write_text(dir / "r.txt", "# corrmap v1 2 2\n0 0\n1 5\n");
  try {
    load_correspondence(dir / "r.txt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    CHECK(e.kind() == ErrorKind::data);
  }
  test::write_text(dir / "s.txt", "# corrmap v1 2 2\n0 1\n");
  CHECK_THROWS_AS(load_correspondence(dir / "s.txt"), Error);
  test::write_text(dir / "p.txt", "# corrmap v1 2 2\n1 0\n0 1\n");
  CHECK(load_correspondence(dir / "p.txt").bijective);
}
