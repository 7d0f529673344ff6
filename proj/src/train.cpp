#include "geofm/train.hpp"

#include "geofm/parallel.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace geofm {

namespace {

template <typename To, typename From>
AdamState<To> cast_adam(const AdamState<From>& s) {
  return {s.m.template cast<To>(), s.v.template cast<To>(), s.step};
}

void check_dataset(const std::vector<ShapeBundle>& dataset, Index k) {
  if (dataset.empty()) throw_usage("empty dataset");
  const Index width = dataset.front().shot.width();
  for (const auto& b : dataset) {
    if (b.shot.width() != width) throw_data("descriptor widths differ across the dataset");
    if (b.basis.k() < k)
      throw_usage("shape " + b.source_path.string() + " has " + std::to_string(b.basis.k()) + " eigenfunctions, k=" +
                  std::to_string(k) + " requested");
  }
}

bool all_have_gt(const std::vector<ShapeBundle>& dataset) {
  for (const auto& b : dataset)
    if (!b.ground_truth) return false;
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  auto in_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (!in_unit(learning_rate) || !in_unit(beta1) || !in_unit(beta2)) throw_usage("learning rate and betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw_usage("epsilon must be positive");
  if (iterations < 0) throw_usage("iterations must be non-negative");
  if (batch_pairs < 1) throw_usage("batch_pairs must be at least 1");
  if (k < 1) throw_usage("k must be positive");
  if (!(ridge >= 0.0)) throw_usage("ridge must be non-negative");
  if (depth < 0) throw_usage("depth must be non-negative");
  if (!(clip_norm > 0.0)) throw_usage("clip norm must be positive");
  if (checkpoint_every < 0) throw_usage("checkpoint interval must be non-negative");
}

template <typename Scalar>
void adam_step(NetParams<Scalar>& params, const NetParams<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& config) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw_usage("ADAM buffers do not match the parameters");
  for (int l = 0; l < grads.depth(); ++l)
    if (!grads.weights[static_cast<std::size_t>(l)].allFinite() || !grads.biases[static_cast<std::size_t>(l)].allFinite())
      throw_numerical("non-finite gradient in residual block " + std::to_string(l) + " at step " +
                      std::to_string(state.step + 1));
  ++state.step;
  const auto b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, static_cast<double>(state.step)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, static_cast<double>(state.step)));
  const auto lr = static_cast<Scalar>(config.learning_rate), eps = static_cast<Scalar>(config.epsilon);
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

std::vector<SampledPair> sample_batch(const std::vector<ShapeBundle>& dataset, int batch_pairs, std::mt19937_64& rng) {
  if (dataset.empty()) throw_usage("empty dataset");
  if (batch_pairs < 1) throw_usage("batch_pairs must be at least 1");
  const auto m = static_cast<Index>(dataset.size());
  std::vector<SampledPair> out;
  for (int i = 0; i < batch_pairs; ++i) {
    SampledPair p;
    p.x = std::uniform_int_distribution<Index>(0, m - 1)(rng);
    if (m >= 2) {
      p.y = std::uniform_int_distribution<Index>(0, m - 2)(rng);
      if (p.y >= p.x) ++p.y;
    } else {
      p.y = p.x;
    }
    p.perm_x = identity_permutation(dataset[static_cast<std::size_t>(p.x)].size());
    p.perm_y = identity_permutation(dataset[static_cast<std::size_t>(p.y)].size());
    std::shuffle(p.perm_x.begin(), p.perm_x.end(), rng);
    std::shuffle(p.perm_y.begin(), p.perm_y.end(), rng);
    out.push_back(std::move(p));
  }
  return out;
}

template <typename Scalar>
PairTensors<Scalar> pair_tensors(const std::vector<ShapeBundle>& dataset, const SampledPair& pair, Index k) {
  const auto& bx = dataset.at(static_cast<std::size_t>(pair.x));
  const auto& by = dataset.at(static_cast<std::size_t>(pair.y));
  PairTensors<Scalar> out;
  out.x = shape_tensors<Scalar>(bx.basis, k, bx.shot.values, bx.distances.d, &pair.perm_x);
  out.y = shape_tensors<Scalar>(by.basis, k, by.shot.values, by.distances.d, &pair.perm_y);
  if (bx.ground_truth && by.ground_truth) out.gt = permute_ground_truth(compose_ground_truth(bx, by), pair.perm_x, pair.perm_y);
  return out;
}

template <typename Scalar>
TrainResult train_loop(const std::vector<ShapeBundle>& dataset, const TrainConfig& config, const Checkpoint* init) {
  config.validate();
  check_dataset(dataset, config.k);
  const bool have_gt = all_have_gt(dataset);
  if (config.mode == LossMode::supervised && !have_gt) throw_usage("supervised training needs ground truth for every shape");
  const Index width = dataset.front().shot.width();

  NetParams<Scalar> params;
  AdamState<Scalar> adam;
  if (init) {
    if (init->params.width() != width && init->params.depth() > 0)
      throw_usage("checkpoint width " + std::to_string(init->params.width()) + " does not match descriptor width " +
                  std::to_string(width));
    params = init->params.cast<Scalar>();
    adam = cast_adam<Scalar>(init->adam);
  } else {
    params = NetParams<double>::init(config.depth, width, config.seed).cast<Scalar>();
    adam = AdamState<Scalar>::zeros_like(params);
  }

  TrainResult result;
  auto snapshot = [&] {
    result.checkpoint.params = params.template cast<double>();
    result.checkpoint.adam = cast_adam<double>(adam);
    result.checkpoint.k = config.k;
    result.checkpoint.ridge = config.ridge;
  };
  auto save = [&] {
    if (config.checkpoint_path.empty()) return;
    snapshot();
    save_checkpoint(result.checkpoint, config.checkpoint_path);
  };

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) throw_data("cannot write training log " + config.log_path.string());
    log << "iteration,unsup_loss,sup_loss_or_blank,wall_ms\n" << std::flush;
  }

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto start = std::chrono::steady_clock::now();
  const bool monitor = config.mode == LossMode::supervised || (config.log_supervised && have_gt);
  for (int it = 1; it <= config.iterations; ++it) {
    const auto batch = sample_batch(dataset, config.batch_pairs, rng);
    std::vector<NetParams<Scalar>> grads(batch.size(), NetParams<Scalar>::zeros(params.depth(), params.width()));
    std::vector<PipelineLoss> losses(batch.size());
    parallel_for(batch.size(), config.threads, [&](std::size_t i) {
      const auto t = pair_tensors<Scalar>(dataset, batch[i], config.k);
      const std::vector<Index>* gt = monitor && t.gt ? &*t.gt : nullptr;
      losses[i] = pipeline_loss_and_grads(params, t.x, t.y, config.mode, config.ridge, gt, &grads[i]);
    });
    NetParams<Scalar> total = NetParams<Scalar>::zeros(params.depth(), params.width());
    LossRecord rec;
    rec.iteration = it;
    double sup_sum = 0.0;
    bool sup_all = monitor;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      total.add(grads[i]);
      rec.unsup += losses[i].unsup;
      if (losses[i].sup) sup_sum += *losses[i].sup;
      else sup_all = false;
    }
    rec.unsup /= static_cast<double>(batch.size());
    if (sup_all) rec.sup = sup_sum / static_cast<double>(batch.size());
    if (!std::isfinite(rec.unsup) || (rec.sup && !std::isfinite(*rec.sup)))
      throw_numerical("non-finite loss at iteration " + std::to_string(it) +
                      (config.checkpoint_path.empty() ? std::string() : "; last checkpoint kept at " + config.checkpoint_path.string()));
    const double norm = std::sqrt(total.squared_norm());
    if (norm > config.clip_norm) total.scale(static_cast<Scalar>(config.clip_norm / norm));
    adam_step(params, total, adam, config);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (log.is_open()) log << format_log_row(rec) << '\n' << std::flush;
    result.history.push_back(rec);
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && it != config.iterations) save();
    spdlog::debug("iteration {} unsup {:.6g}", it, rec.unsup);
  }
  save();
  snapshot();
  return result;
}

template <typename Scalar>
PipelineLoss dataset_loss(const std::vector<ShapeBundle>& dataset, const NetParams<Scalar>& params, Index k, double ridge,
                          unsigned threads) {
  check_dataset(dataset, k);
  std::vector<SampledPair> pairs;
  const auto m = static_cast<Index>(dataset.size());
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b)
      if (a != b || m == 1)
        pairs.push_back({a, b, identity_permutation(dataset[static_cast<std::size_t>(a)].size()),
                         identity_permutation(dataset[static_cast<std::size_t>(b)].size())});
  std::vector<PipelineLoss> losses(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const auto t = pair_tensors<Scalar>(dataset, pairs[i], k);
    losses[i] = pipeline_loss_and_grads<Scalar>(params, t.x, t.y, LossMode::unsupervised, ridge, t.gt ? &*t.gt : nullptr, nullptr);
  });
  PipelineLoss out;
  double sup = 0.0;
  bool sup_all = true;
  for (const auto& l : losses) {
    out.unsup += l.unsup;
    if (l.sup) sup += *l.sup;
    else sup_all = false;
  }
  out.unsup /= static_cast<double>(losses.size());
  if (sup_all) out.sup = sup / static_cast<double>(losses.size());
  out.objective = out.unsup;
  return out;
}

std::string format_log_row(const LossRecord& r) {
  char buf[128];
  if (r.sup)
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.3f", static_cast<long long>(r.iteration), r.unsup, *r.sup, r.wall_ms);
  else
    std::snprintf(buf, sizeof buf, "%lld,%.17g,,%.3f", static_cast<long long>(r.iteration), r.unsup, r.wall_ms);
  return buf;
}

void write_training_log(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write training log " + path.string());
  out << "iteration,unsup_loss,sup_loss_or_blank,wall_ms\n";
  for (const auto& r : history) out << format_log_row(r) << '\n';
}

std::vector<LossRecord> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open training log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "iteration,unsup_loss,sup_loss_or_blank,wall_ms")
    throw_data(path.string() + ":1: unexpected training log header");
  std::vector<LossRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() == 3 && line.back() == ',') cols.emplace_back();
    if (cols.size() != 4) throw_data(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    try {
      LossRecord r;
      r.iteration = std::stoll(cols[0]);
      r.unsup = std::stod(cols[1]);
      if (!cols[2].empty()) r.sup = std::stod(cols[2]);
      r.wall_ms = std::stod(cols[3]);
      out.push_back(r);
    } catch (const std::exception&) {
      throw_data(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

#define GEOFM_INSTANTIATE(S)                                                                                       \
  template void adam_step(NetParams<S>&, const NetParams<S>&, AdamState<S>&, const TrainConfig&);                  \
  template PairTensors<S> pair_tensors(const std::vector<ShapeBundle>&, const SampledPair&, Index);                \
  template TrainResult train_loop<S>(const std::vector<ShapeBundle>&, const TrainConfig&, const Checkpoint*);      \
  template PipelineLoss dataset_loss(const std::vector<ShapeBundle>&, const NetParams<S>&, Index, double, unsigned);

GEOFM_INSTANTIATE(float)
GEOFM_INSTANTIATE(double)

}  // namespace geofm
