#pragma once

#include "geofm/common.hpp"

#include <cstdint>
#include <filesystem>

namespace geofm {

/// Residual descriptor network: depth blocks of y = x + ELU(x W + b), all width x width.
/// The same struct holds gradients and optimizer moments (co-shaped).
template <typename Scalar>
struct NetParams {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;

  int depth() const { return static_cast<int>(weights.size()); }
  Index width() const { return weights.empty() ? 0 : weights.front().rows(); }
  Index count() const { return static_cast<Index>(depth()) * (width() * width() + width()); }

  static NetParams zeros(int depth, Index width);
  /// Weights uniform in [-1/sqrt(width), 1/sqrt(width)], biases zero.
  static NetParams init(int depth, Index width, std::uint64_t seed);

  void set_zero();
  double squared_norm() const;
  bool all_finite() const;
  void scale(Scalar s);
  void add(const NetParams& other);
  bool same_shape(const NetParams& other) const;

  /// Flat access in block order: W (column-major) then b, block after block.
  Scalar& at(Index flat);
  Scalar at(Index flat) const;

  template <typename Other>
  NetParams<Other> cast() const {
    NetParams<Other> out;
    for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
    return out;
  }
};

/// Activations kept by forward() for backward().
template <typename Scalar>
struct NetCache {
  std::vector<Matrix<Scalar>> inputs;  // x_l for every block
  std::vector<Matrix<Scalar>> pre;     // x_l W_l + b_l
};

template <typename Scalar>
Matrix<Scalar> forward(const NetParams<Scalar>& params, const Matrix<Scalar>& input, NetCache<Scalar>* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns the input gradient.
template <typename Scalar>
Matrix<Scalar> backward(const NetParams<Scalar>& params, const NetCache<Scalar>& cache, const Matrix<Scalar>& output_grad,
                        NetParams<Scalar>& grads);

/// ADAM first and second moments plus the number of completed steps.
template <typename Scalar>
struct AdamState {
  NetParams<Scalar> m, v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const NetParams<Scalar>& p) {
    return {NetParams<Scalar>::zeros(p.depth(), p.width()), NetParams<Scalar>::zeros(p.depth(), p.width()), 0};
  }
};

/// Trained network plus what is needed to run it.
struct Checkpoint {
  NetParams<double> params;
  AdamState<double> adam;
  Index k = 0;
  double ridge = 0.0;
};

/// Checkpoint: magic "GFMCKPT\0", u32 version, u32 depth, u32 width,
/// u32 dense layers per block (1), u64 k, f64 ridge, u64 step, then per block
/// W (row-major f32) and b (f32), then the same for m and v.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace geofm
