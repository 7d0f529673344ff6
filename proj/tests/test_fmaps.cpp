#include "geofm/fmaps.hpp"
#include "geofm/shapes.hpp"
#include "pipeline_fixture.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace geofm;

namespace {

MatrixXd randn(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  MatrixXd m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  return m;
}

// Column-normalized |random| matrix, a valid P.
MatrixXd random_soft(Index ny, Index nx, std::mt19937_64& rng) {
  MatrixXd p = randn(ny, nx, rng).cwiseAbs();
  return p * p.colwise().norm().cwiseInverse().asDiagonal();
}

MatrixXd symmetric_distances(Index n, std::mt19937_64& rng) {
  MatrixXd d = randn(n, n, rng).cwiseAbs();
  d = (0.5 * (d + d.transpose())).eval();
  d.diagonal().setZero();
  return d;
}

// Central differences of f over every entry of x.
MatrixXd numeric_gradient(MatrixXd x, const std::function<double(const MatrixXd&)>& f, double h = 1e-6) {
  MatrixXd g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / std::max(a.norm(), 1e-300); }

}  // namespace

TEST_CASE("solve_fm examples") {
  std::mt19937_64 rng(1);
  const MatrixXd f = randn(5, 9, rng);
  CHECK((solve_fm<double>(f, f, 0.0).c - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-8);

  MatrixXd f2(2, 2), g2(2, 2), c2(2, 2);
  f2 << 1, 0, 0, 2;
  g2 << 2, 0, 0, 2;
  c2 << 2, 0, 0, 1;
  CHECK((solve_fm<double>(f2, g2, 0.0).c - c2).cwiseAbs().maxCoeff() <= 1e-12);

  const MatrixXd g = randn(4, 9, rng);
  CHECK(solve_fm<double>(f, g, 1e12).c.cwiseAbs().maxCoeff() <= 1e-9);
  // Ridge solution satisfies the regularized normal equations.
  const auto fm = solve_fm<double>(f, g, 0.1);
  const double r = 0.1 * (f * f.transpose()).trace() / 5.0;
  CHECK((fm.c * (f * f.transpose() + r * MatrixXd::Identity(5, 5)) - g * f.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("singular system without ridge is reported") {
  MatrixXd f = MatrixXd::Zero(3, 4);
  f(0, 0) = 1.0;
  f(1, 1) = 1.0;  // third row empty
  try {
    solve_fm<double>(f, f, 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
    CHECK(std::string(e.what()).find("ridge > 0") != std::string::npos);
  }
  CHECK_NOTHROW(solve_fm<double>(f, f, 1e-3));
  CHECK_THROWS_AS(solve_fm<double>(f, MatrixXd(MatrixXd::Zero(3, 5)), 0.1), Error);
}

TEST_CASE("solve_fm_backward matches central differences") {
  std::mt19937_64 rng(2);
  for (const Index ky : {Index{4}, Index{3}}) {
    const MatrixXd f = randn(4, 6, rng), g = randn(ky, 6, rng), probe = randn(ky, 4, rng);
    const double ridge = 1e-3;
    const auto fm = solve_fm<double>(f, g, ridge);
    MatrixXd gf, gg;
    solve_fm_backward(fm, probe, gf, gg);
    auto loss_f = [&](const MatrixXd& ff) { return solve_fm<double>(ff, g, ridge).c.cwiseProduct(probe).sum(); };
    auto loss_g = [&](const MatrixXd& gg2) { return solve_fm<double>(f, gg2, ridge).c.cwiseProduct(probe).sum(); };
    CHECK(rel(gf, numeric_gradient(f, loss_f)) <= 1e-5);
    CHECK(rel(gg, numeric_gradient(g, loss_g)) <= 1e-5);

    solve_fm_backward(fm, MatrixXd(MatrixXd::Zero(ky, 4)), gf, gg);
    CHECK(gf.cwiseAbs().maxCoeff() == 0.0);
    CHECK(gg.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("descriptor directions outside the row space are second order") {
  std::mt19937_64 rng(3);
  // F is 3 x 5 with rows in the first three coordinates; v = e_4 is orthogonal to them.
  MatrixXd f = MatrixXd::Zero(3, 5);
  f.leftCols(3) = randn(3, 3, rng);
  const MatrixXd c0 = randn(3, 3, rng);
  const MatrixXd g = c0 * f;  // zero residual
  const auto fm = solve_fm<double>(f, g, 0.0);
  CHECK((fm.c - c0).cwiseAbs().maxCoeff() <= 1e-10);
  const MatrixXd probe = randn(3, 3, rng);
  MatrixXd gf, gg;
  solve_fm_backward(fm, probe, gf, gg);
  MatrixXd dir = MatrixXd::Zero(3, 5);
  dir.col(4) = randn(3, 1, rng);
  CHECK(std::abs(gf.cwiseProduct(dir).sum()) <= 1e-8);
}

TEST_CASE("soft_corr examples") {
  const TriMesh m = shapes::icosphere(1);
  const Index n = m.num_vertices();
  const auto full = eig_basis(m, n);
  const MatrixXd aphi = full.mass.asDiagonal() * full.phi;
  const auto sc = soft_corr<double>(MatrixXd::Identity(n, n), aphi, full.phi);
  CHECK((sc.p - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-8);

  std::mt19937_64 rng(4);
  const auto b = full.truncated(6);
  const MatrixXd aphi6 = b.mass.asDiagonal() * b.phi;
  const auto rnd = soft_corr<double>(randn(6, 6, rng), aphi6, b.phi);
  CHECK((rnd.q().colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
  CHECK((rnd.p.array() >= 0.0).all());

  const auto b1 = full.truncated(1);
  const auto one = soft_corr<double>(MatrixXd::Ones(1, 1), MatrixXd(b1.mass.asDiagonal() * b1.phi), b1.phi);
  CHECK((one.p.array() - 1.0 / std::sqrt(static_cast<double>(n))).abs().maxCoeff() <= 1e-10);

  MatrixXd aphi_zero = aphi6;
  aphi_zero.row(3).setZero();
  try {
    soft_corr<double>(randn(6, 6, rng), aphi_zero, b.phi);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("degenerate soft map column") != std::string::npos);
  }
}

TEST_CASE("soft_corr_backward") {
  std::mt19937_64 rng(5);
  const MatrixXd aphi = randn(7, 3, rng), psi = randn(6, 4, rng), c = randn(4, 3, rng), probe = randn(6, 7, rng);
  const auto sc = soft_corr<double>(c, aphi, psi);
  REQUIRE(((psi * c * aphi.transpose()).cwiseAbs().array() > 1e-4).all());  // away from |.| kinks
  const MatrixXd gc = soft_corr_backward<double>(sc, aphi, psi, probe);
  auto loss = [&](const MatrixXd& cc) { return soft_corr<double>(cc, aphi, psi).p.cwiseProduct(probe).sum(); };
  CHECK(rel(gc, numeric_gradient(c, loss)) <= 1e-5);
  // Column normalization makes P invariant to scaling C.
  CHECK(std::abs(gc.cwiseProduct(c).sum()) <= 1e-8 * gc.norm() * c.norm());
  CHECK(soft_corr_backward<double>(sc, aphi, psi, MatrixXd(MatrixXd::Zero(6, 7))).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unsup_loss values") {
  std::mt19937_64 rng(6);
  // Permutation P between an isometric pair.
  const Index n = 8;
  const MatrixXd dx = symmetric_distances(n, rng);
  const auto perm = test::random_permutation(n, rng);  // Y vertex perm[j]... X vertex i maps to Y vertex pos[i]
  const auto pos = invert_permutation(perm);
  MatrixXd dy(n, n);
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b) dy(a, b) = dx(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
  MatrixXd p = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) p(pos[static_cast<std::size_t>(i)], i) = 1.0;
  CHECK(unsup_loss<double>(p, dx, dy).loss == 0.0);

  MatrixXd d2(2, 2);
  d2 << 0, 1, 1, 0;
  const MatrixXd uniform = MatrixXd::Constant(2, 2, std::sqrt(0.5));
  CHECK(unsup_loss<double>(uniform, d2, d2).loss == doctest::Approx(0.25).epsilon(1e-12));

  for (int t = 0; t < 5; ++t) {
    const MatrixXd pr = random_soft(5, 4, rng);
    CHECK(unsup_loss<double>(pr, symmetric_distances(4, rng), symmetric_distances(5, rng)).loss >= 0.0);
  }
}

TEST_CASE("unsup_loss gradient") {
  std::mt19937_64 rng(7);
  const MatrixXd p = random_soft(6, 6, rng), dx = symmetric_distances(6, rng), dy = symmetric_distances(6, rng);
  const auto lv = unsup_loss<double>(p, dx, dy);
  auto f = [&](const MatrixXd& pp) { return unsup_loss<double>(pp, dx, dy, false).loss; };
  CHECK(rel(lv.grad_p, numeric_gradient(p, f)) <= 1e-5);
  // Rectangular case.
  const MatrixXd p2 = random_soft(5, 7, rng), dx2 = symmetric_distances(7, rng), dy2 = symmetric_distances(5, rng);
  auto f2 = [&](const MatrixXd& pp) { return unsup_loss<double>(pp, dx2, dy2, false).loss; };
  CHECK(rel(unsup_loss<double>(p2, dx2, dy2).grad_p, numeric_gradient(p2, f2)) <= 1e-5);
}

TEST_CASE("sup_loss values and gradient") {
  std::mt19937_64 rng(8);
  const Index n = 5;
  const MatrixXd dy = symmetric_distances(n, rng);
  const auto gt = test::random_permutation(n, rng);
  MatrixXd hard = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) hard(gt[static_cast<std::size_t>(i)], i) = 1.0;
  CHECK(sup_loss<double>(hard, dy, gt).loss == 0.0);

  // Uniform Q: brute-force expectation of squared distance to the true match.
  const MatrixXd uniform = MatrixXd::Constant(n, n, 1.0 / std::sqrt(static_cast<double>(n)));
  double oracle = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) oracle += (1.0 / n) * dy(j, gt[static_cast<std::size_t>(i)]) * dy(j, gt[static_cast<std::size_t>(i)]);
  oracle /= n;
  CHECK(sup_loss<double>(uniform, dy, gt).loss == doctest::Approx(oracle).epsilon(1e-12));

  const MatrixXd p = random_soft(n, n, rng);
  auto f = [&](const MatrixXd& pp) { return sup_loss<double>(pp, dy, gt, false).loss; };
  CHECK(rel(sup_loss<double>(p, dy, gt).grad_p, numeric_gradient(p, f)) <= 1e-5);
  CHECK(sup_loss<double>(p, dy, gt).loss >= 0.0);

  auto bad = gt;
  bad[2] = 9;
  CHECK_THROWS_AS(sup_loss<double>(p, dy, bad), Error);
  auto partial = gt;
  partial[1] = kUnmatched;
  CHECK(sup_loss<double>(p, dy, partial).loss <= sup_loss<double>(p, dy, gt).loss);
}

TEST_CASE("pipeline gradients match central differences") {
  const auto pair = test::tiny_pair(8, 6, 11);
  auto params = NetParams<double>::init(2, 6, 3);
  for (auto& b : params.biases) b.setConstant(0.05);
  for (const LossMode mode : {LossMode::unsupervised, LossMode::supervised}) {
    auto grads = NetParams<double>::zeros(2, 6);
    pipeline_loss_and_grads<double>(params, pair.x, pair.y, mode, 1e-3, &pair.gt, &grads);
    auto loss = [&](const NetParams<double>& p) {
      return pipeline_loss_and_grads<double>(p, pair.x, pair.y, mode, 1e-3, &pair.gt, nullptr).objective;
    };
    const auto check = test::check_param_gradient(params, std::function<double(const NetParams<double>&)>(loss), grads, 10, 1e-5, 99);
    CHECK(check.worst_relative <= 1e-4);
  }
}

TEST_CASE("pipeline trivial self map") {
  const TriMesh m = shapes::icosphere(0);
  const Index n = m.num_vertices();
  std::mt19937_64 rng(12);
  MatrixXf desc = randn(n, 16, rng).cast<float>();
  const auto basis = eig_basis(m, n);
  const auto t = shape_tensors<double>(basis, n, desc, distance_matrix(m).d);
  const auto params = NetParams<double>::zeros(2, 16);
  MatrixXd c;
  const auto sc = pipeline_soft_map(params, t, t, 0.0, &c);
  CHECK((c - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((sc.p - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(pipeline_loss_and_grads<double>(params, t, t, LossMode::unsupervised, 0.0, nullptr, nullptr).unsup <= 1e-10);
}

TEST_CASE("identical pair beats a mismatched pair") {
  const auto pair = test::tiny_pair(8, 6, 13);
  const auto params = NetParams<double>::init(2, 6, 4);
  const double same = pipeline_loss_and_grads<double>(params, pair.x, pair.x, LossMode::unsupervised, 1e-3, nullptr, nullptr).unsup;
  std::mt19937_64 rng(14);
  const auto perm = test::random_permutation(pair.y.size(), rng);
  ShapeTensors<double> scrambled = pair.y;
  for (Index r = 0; r < scrambled.size(); ++r)
    scrambled.descriptors.row(r) = pair.y.descriptors.row(perm[static_cast<std::size_t>(r)]);
  const double other = pipeline_loss_and_grads<double>(params, pair.x, scrambled, LossMode::unsupervised, 1e-3, nullptr, nullptr).unsup;
  CHECK(same <= other);
  CHECK_THROWS_AS(pipeline_loss_and_grads<double>(params, pair.x, pair.y, LossMode::supervised, 1e-3, nullptr, nullptr), Error);
}

TEST_CASE("shape tensors follow permutations") {
  std::mt19937_64 rng(15);
  const TriMesh m = shapes::icosphere(1);
  const auto b = eig_basis(m, 5);
  const MatrixXf desc = randn(m.num_vertices(), 3, rng).cast<float>();
  const MatrixXf dist = distance_matrix(m).d;
  const auto perm = test::random_permutation(m.num_vertices(), rng);
  const auto t = shape_tensors<double>(b, 4, desc, dist, &perm);
  CHECK(t.k() == 4);
  for (Index r = 0; r < 5; ++r) {
    const Index o = perm[static_cast<std::size_t>(r)];
    CHECK(t.phi(r, 2) == b.phi(o, 2));
    CHECK(t.aphi(r, 1) == b.mass[o] * b.phi(o, 1));
    CHECK(t.descriptors(r, 2) == static_cast<double>(desc(o, 2)));
    CHECK(t.dist(r, 4) == static_cast<double>(dist(o, perm[4])));
  }
  CHECK_THROWS_AS(shape_tensors<double>(b, 6, desc, dist), Error);
}
