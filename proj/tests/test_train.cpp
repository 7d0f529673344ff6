#include "geofm/shapes.hpp"
#include "geofm/train.hpp"
#include "pipeline_fixture.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace geofm;

namespace {

std::vector<ShapeBundle> small_dataset(int poses = 2) {
  std::vector<ShapeBundle> out;
  const shapes::FigurePose all[] = {{0.2, 0.0, 0.0, 0.0}, {0.9, -0.5, 0.3, 0.2}, {-0.4, 0.6, 1.0, -0.3}};
  for (int i = 0; i < poses; ++i) out.push_back(test::bundle_from_mesh(shapes::tube_figure(8, 10, all[i]), 12, 2, true, 0.2));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.iterations = 5;
  c.batch_pairs = 2;
  c.k = 8;
  c.depth = 2;
  c.seed = 5;
  return c;
}

std::string strip_wall(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_CASE("adam_step hand example") {
  auto p = NetParams<double>::zeros(1, 1);
  auto g = NetParams<double>::zeros(1, 1);
  g.weights[0](0, 0) = 1.0;
  auto s = AdamState<double>::zeros_like(p);
  const TrainConfig c;
  adam_step(p, g, s, c);
  CHECK(s.step == 1);
  CHECK(p.weights[0](0, 0) == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(p.biases[0][0] == 0.0);

  auto q = NetParams<double>::init(2, 4, 1);
  const auto before = q;
  auto s2 = AdamState<double>::zeros_like(q);
  adam_step(q, NetParams<double>::zeros(2, 4), s2, c);
  for (Index i = 0; i < q.count(); ++i) CHECK(q.at(i) == before.at(i));

  g.weights[0](0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(p, g, s, c), Error);
}

TEST_CASE("sample_batch") {
  const auto data = small_dataset(2);
  std::mt19937_64 rng(1), rng2(1);
  std::set<std::pair<Index, Index>> seen;
  for (int t = 0; t < 20; ++t) {
    const auto batch = sample_batch(data, 3, rng);
    const auto again = sample_batch(data, 3, rng2);
    REQUIRE(batch.size() == 3);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(batch[i].x != batch[i].y);
      CHECK(batch[i].perm_x == again[i].perm_x);
      CHECK(batch[i].y == again[i].y);
      CHECK(PointMap{batch[i].perm_x, true}.is_permutation(data[0].size()));
      seen.insert({batch[i].x, batch[i].y});
    }
  }
  CHECK(seen.size() == 2);
  std::vector<ShapeBundle> one(data.begin(), data.begin() + 1);
  const auto self = sample_batch(one, 2, rng);
  CHECK(self[0].x == self[0].y);
  CHECK_THROWS_AS(sample_batch({}, 2, rng), Error);
}

TEST_CASE("shuffling leaves the loss of the true correspondence unchanged") {
  const auto data = small_dataset(2);
  const Index n = data[0].size();
  SampledPair plain{0, 1, identity_permutation(n), identity_permutation(n)};
  std::mt19937_64 rng(2);
  SampledPair shuffled{0, 1, test::random_permutation(n, rng), test::random_permutation(n, rng)};
  auto hard = [](const PairTensors<double>& t) {
    MatrixXd p = MatrixXd::Zero(t.y.size(), t.x.size());
    for (Index i = 0; i < t.x.size(); ++i) p((*t.gt)[static_cast<std::size_t>(i)], i) = 1.0;
    return p;
  };
  const auto a = pair_tensors<double>(data, plain, 8), b = pair_tensors<double>(data, shuffled, 8);
  const double la = unsup_loss<double>(hard(a), a.x.dist, a.y.dist, false).loss;
  const double lb = unsup_loss<double>(hard(b), b.x.dist, b.y.dist, false).loss;
  CHECK(lb == doctest::Approx(la).epsilon(1e-12));
  CHECK(la > 0.0);  // the poses are only near-isometric
}

TEST_CASE("train_loop basics") {
  const auto data = small_dataset(2);
  auto cfg = small_config();
  cfg.iterations = 0;
  const auto zero = train_loop<double>(data, cfg);
  CHECK(zero.history.empty());
  const auto init = NetParams<double>::init(2, data[0].shot.width(), cfg.seed);
  for (Index i = 0; i < init.count(); ++i) CHECK(zero.checkpoint.params.at(i) == init.at(i));

  test::TempDir dir("train");
  cfg.iterations = 6;
  cfg.checkpoint_every = 4;
  cfg.checkpoint_path = dir / "net.ckpt";
  cfg.log_path = dir / "log.csv";
  const auto r = train_loop<double>(data, cfg);
  CHECK(r.history.size() == 6);
  for (const auto& rec : r.history) {
    CHECK(std::isfinite(rec.unsup));
    CHECK(rec.sup.has_value());
  }
  const auto ck = load_checkpoint(dir / "net.ckpt");
  CHECK(ck.adam.step == 6);
  CHECK(ck.k == 8);
  const auto log = read_training_log(dir / "log.csv");
  REQUIRE(log.size() == 6);
  CHECK(log[3].unsup == r.history[3].unsup);
  CHECK(*log[3].sup == *r.history[3].sup);

  cfg.log_supervised = false;
  cfg.log_path.clear();
  cfg.checkpoint_path.clear();
  CHECK_FALSE(train_loop<double>(data, cfg).history[0].sup.has_value());
}

TEST_CASE("train_loop determinism") {
  const auto data = small_dataset(3);
  test::TempDir dir("train");
  auto cfg = small_config();
  cfg.log_path = dir / "a.csv";
  const auto a = train_loop<double>(data, cfg);
  cfg.log_path = dir / "b.csv";
  const auto b = train_loop<double>(data, cfg);
  CHECK(strip_wall(dir / "a.csv") == strip_wall(dir / "b.csv"));
  for (Index i = 0; i < a.checkpoint.params.count(); ++i) CHECK(a.checkpoint.params.at(i) == b.checkpoint.params.at(i));
  cfg.seed = 6;
  cfg.log_path = dir / "c.csv";
  train_loop<double>(data, cfg);
  CHECK(strip_wall(dir / "a.csv") != strip_wall(dir / "c.csv"));
}

TEST_CASE("train_loop errors") {
  auto data = small_dataset(2);
  auto cfg = small_config();
  cfg.k = 20;
  CHECK_THROWS_AS(train_loop<double>(data, cfg), Error);
  cfg = small_config();
  cfg.batch_pairs = 0;
  CHECK_THROWS_AS(train_loop<double>(data, cfg), Error);
  cfg = small_config();
  cfg.learning_rate = 1.5;
  CHECK_THROWS_AS(train_loop<double>(data, cfg), Error);
  cfg = small_config();
  cfg.mode = LossMode::supervised;
  data[1].ground_truth.reset();
  test::TempDir dir("train");
  cfg.log_path = dir / "log.csv";
  CHECK_THROWS_AS(train_loop<double>(data, cfg), Error);
  CHECK_FALSE(std::filesystem::exists(dir / "log.csv"));
  CHECK_THROWS_AS(train_loop<double>({}, small_config()), Error);
}

TEST_CASE("supervised training and float precision run") {
  const auto data = small_dataset(2);
  auto cfg = small_config();
  cfg.mode = LossMode::supervised;
  const auto r = train_loop<double>(data, cfg);
  CHECK(r.history.size() == 5);
  cfg.mode = LossMode::unsupervised;
  const auto f = train_loop<float>(data, cfg);
  const auto d = train_loop<double>(data, cfg);
  CHECK(f.history[0].unsup == doctest::Approx(d.history[0].unsup).epsilon(1e-3));
  const auto dl = dataset_loss<double>(data, d.checkpoint.params, 8, 1e-3);
  CHECK(std::isfinite(dl.unsup));
  CHECK(dl.sup.has_value());
}
