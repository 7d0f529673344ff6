#pragma once

#include "geofm/dataio.hpp"
#include "geofm/fmaps.hpp"

#include <filesystem>
#include <optional>
#include <random>

namespace geofm {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int iterations = 3000;
  int batch_pairs = 4;
  Index k = 120;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
  LossMode mode = LossMode::unsupervised;
  bool log_supervised = true;  // monitor the supervised loss when ground truth exists
  int depth = 7;
  double clip_norm = 100.0;
  int checkpoint_every = 100;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path log_path;         // empty: no CSV log
  unsigned threads = 0;

  void validate() const;
};

struct LossRecord {
  Index iteration = 0;
  double unsup = 0.0;
  std::optional<double> sup;
  double wall_ms = 0.0;
};

/// Bias-corrected ADAM update; increments state.step first.
template <typename Scalar>
void adam_step(NetParams<Scalar>& params, const NetParams<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& config);

/// An ordered training pair with fresh vertex orders for both shapes.
struct SampledPair {
  Index x = 0, y = 0;
  std::vector<Index> perm_x, perm_y;  // new r = old perm[r]
};

/// Uniform ordered pairs, never (A, A) when there are at least two shapes.
std::vector<SampledPair> sample_batch(const std::vector<ShapeBundle>& dataset, int batch_pairs, std::mt19937_64& rng);

/// Shuffled tensors of a sampled pair and its ground truth when both shapes carry it.
template <typename Scalar>
struct PairTensors {
  ShapeTensors<Scalar> x, y;
  std::optional<std::vector<Index>> gt;
};

template <typename Scalar>
PairTensors<Scalar> pair_tensors(const std::vector<ShapeBundle>& dataset, const SampledPair& pair, Index k);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

/// Runs config.iterations ADAM steps on batches of shuffled pairs, Scalar being
/// the working precision. `init` resumes from a checkpoint.
template <typename Scalar>
TrainResult train_loop(const std::vector<ShapeBundle>& dataset, const TrainConfig& config,
                       const Checkpoint* init = nullptr);

/// Mean losses over all ordered pairs (every pair with itself when only one shape).
template <typename Scalar>
PipelineLoss dataset_loss(const std::vector<ShapeBundle>& dataset, const NetParams<Scalar>& params, Index k, double ridge,
                          unsigned threads = 0);

/// CSV with header iteration,unsup_loss,sup_loss_or_blank,wall_ms.
void write_training_log(const std::vector<LossRecord>& history, const std::filesystem::path& path);
std::vector<LossRecord> read_training_log(const std::filesystem::path& path);
std::string format_log_row(const LossRecord& r);

}  // namespace geofm
