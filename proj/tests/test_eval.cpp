#include "geofm/eval.hpp"
#include "geofm/shapes.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace geofm;

TEST_CASE("geodesic_errors") {
  GeodesicMatrix d;
  d.d = MatrixXf::Zero(3, 3);
  d.d(0, 1) = d.d(1, 0) = 0.2f;
  d.d(0, 2) = d.d(2, 0) = 2.0f;
  d.d(1, 2) = d.d(2, 1) = 1.9f;
  d.diameter = 2.0;
  const PointMap gt{{0, 1, 2}, true};
  CHECK(geodesic_errors(gt, gt, d, Normalization::diameter).cwiseAbs().maxCoeff() == 0.0);
  const PointMap pred{{1, 1, 2}, false};
  const VectorXd e = geodesic_errors(pred, gt, d, Normalization::diameter);
  CHECK(e[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(e[1] == 0.0);
  CHECK(e[2] == 0.0);
  CHECK(geodesic_errors(pred, gt, d, Normalization::sqrt_area, 1.0)[0] ==
        geodesic_errors(pred, gt, d, Normalization::none)[0]);
  CHECK(geodesic_errors(pred, gt, d, Normalization::sqrt_area, 4.0)[0] == doctest::Approx(0.1).epsilon(1e-6));
  const PointMap partial{{0, kUnmatched, 2}, false};
  CHECK(std::isnan(geodesic_errors(pred, partial, d, Normalization::none)[1]));
  CHECK_THROWS_AS(geodesic_errors(PointMap{{0, 3, 2}, false}, gt, d, Normalization::none), Error);
  CHECK_THROWS_AS(geodesic_errors(PointMap{{0}, false}, gt, d, Normalization::none), Error);
}

TEST_CASE("geodesic_errors are equivariant under relabeling Y") {
  const TriMesh m = shapes::icosphere(1);
  const auto d = distance_matrix(m);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<Index> any(0, m.num_vertices() - 1);
  PointMap pred, gt;
  for (int i = 0; i < 20; ++i) {
    pred.map.push_back(any(rng));
    gt.map.push_back(any(rng));
  }
  const auto perm = test::random_permutation(m.num_vertices(), rng);
  const auto inv = invert_permutation(perm);
  PointMap pred2 = pred, gt2 = gt;
  for (auto& j : pred2.map) j = inv[static_cast<std::size_t>(j)];
  for (auto& j : gt2.map) j = inv[static_cast<std::size_t>(j)];
  const VectorXd a = geodesic_errors(pred, gt, d, Normalization::diameter);
  const VectorXd b = geodesic_errors(pred2, gt2, d.permuted(perm), Normalization::diameter);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("curve") {
  const auto all_zero = curve(VectorXd::Zero(4), {0.0, 0.1, 0.2});
  CHECK(all_zero.fractions == std::vector<double>{1.0, 1.0, 1.0});
  VectorXd e(5);
  e << 0.0, 0.05, 0.1, 0.15, 0.2;
  const auto c = curve(e, {0.0, 0.07, 0.1, 0.3});
  CHECK(c.fractions == std::vector<double>{0.2, 0.4, 0.6, 1.0});
  CHECK(c.mean_error == doctest::Approx(0.1));
  const auto empty = curve(e, {});
  CHECK(empty.fractions.empty());
  CHECK(empty.mean_error == doctest::Approx(0.1));
  const auto th = default_thresholds();
  CHECK(th.size() == 200);
  CHECK(th.front() == 0.0);
  CHECK(th.back() == doctest::Approx(0.25));
  std::mt19937_64 rng(2);
  VectorXd r = VectorXd::Random(50).cwiseAbs() * 0.3;
  const auto rc = curve(r, th);
  for (std::size_t i = 1; i < rc.fractions.size(); ++i) CHECK(rc.fractions[i] >= rc.fractions[i - 1]);
  CHECK(curve(r, {r.maxCoeff()}).fractions[0] == 1.0);
  VectorXd with_nan = e;
  with_nan[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK(curve(with_nan, {0.1}).fractions[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(curve(e, {0.2, 0.1}), Error);
}

TEST_CASE("loss_correlation") {
  std::vector<LossRecord> h;
  for (int i = 1; i <= 5; ++i) h.push_back({i, 1.0 / i, 1.0 / i, 0.0});
  const auto c = loss_correlation(h);
  CHECK(c.pearson == doctest::Approx(1.0));
  CHECK(c.final_over_initial_sup == doctest::Approx(0.2));
  std::vector<LossRecord> flat;
  for (int i = 1; i <= 5; ++i) flat.push_back({i, 1.0 / i, 0.5, 0.0});
  try {
    loss_correlation(flat);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "zero variance");
  }
  std::vector<LossRecord> no_sup;
  for (int i = 1; i <= 5; ++i) no_sup.push_back({i, 1.0 / i, std::nullopt, 0.0});
  CHECK_THROWS_AS(loss_correlation(no_sup), Error);
}

TEST_CASE("curve files") {
  test::TempDir dir("eval");
  VectorXd e(3);
  e << 0.0, 0.1, 0.2;
  save_curve(curve(e, {0.0, 0.1}), Normalization::diameter, {"a->b"}, dir / "c.csv");
  std::ifstream in(dir / "c.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "threshold,fraction");
  std::getline(in, line);
  CHECK(line == "0,0.333333333");
  std::ifstream side(dir / "c.csv.json");
  std::string all((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  CHECK(all.find("\"normalization\": \"diameter\"") != std::string::npos);
  CHECK(all.find("a->b") != std::string::npos);
  CHECK(parse_normalization("sqrt_area") == Normalization::sqrt_area);
  CHECK_THROWS_AS(parse_normalization("cm"), Error);
}
