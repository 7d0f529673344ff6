#include "geofm/net.hpp"

#include "geofm/binio.hpp"

#include <cmath>
#include <random>

namespace geofm {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
const binio::Magic kCheckpointMagic = binio::make_magic("GFMCKPT");

template <typename Scalar>
Scalar elu(Scalar x) {
  return x > Scalar(0) ? x : std::expm1(x);
}

template <typename Scalar>
Scalar elu_grad(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : std::exp(x);
}

void write_params(binio::Writer& w, const NetParams<double>& p) {
  for (int l = 0; l < p.depth(); ++l) {
    binio::write_rowmajor(w, MatrixXf(p.weights[l].cast<float>()));
    const Eigen::VectorXf b = p.biases[l].cast<float>();
    w.f32_array({b.data(), static_cast<std::size_t>(b.size())});
  }
}

NetParams<double> read_params(binio::Reader& r, int depth, Index width) {
  NetParams<double> p;
  for (int l = 0; l < depth; ++l) {
    MatrixXf w(width, width);
    binio::read_rowmajor(r, w);
    Eigen::VectorXf b(width);
    r.f32_array({b.data(), static_cast<std::size_t>(width)});
    p.weights.push_back(w.cast<double>());
    p.biases.push_back(b.cast<double>());
  }
  return p;
}

}  // namespace

template <typename Scalar>
NetParams<Scalar> NetParams<Scalar>::zeros(int depth, Index width) {
  if (depth < 0 || width < 1) throw_usage("network needs depth >= 0 and width >= 1");
  NetParams p;
  for (int l = 0; l < depth; ++l) {
    p.weights.push_back(Matrix<Scalar>::Zero(width, width));
    p.biases.push_back(Vector<Scalar>::Zero(width));
  }
  return p;
}

template <typename Scalar>
NetParams<Scalar> NetParams<Scalar>::init(int depth, Index width, std::uint64_t seed) {
  NetParams p = zeros(depth, width);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& w : p.weights)
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(uniform(rng));
  return p;
}

template <typename Scalar>
void NetParams<Scalar>::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

template <typename Scalar>
double NetParams<Scalar>::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s += w.template cast<double>().squaredNorm();
  for (const auto& b : biases) s += b.template cast<double>().squaredNorm();
  return s;
}

template <typename Scalar>
bool NetParams<Scalar>::all_finite() const {
  for (const auto& w : weights)
    if (!w.allFinite()) return false;
  for (const auto& b : biases)
    if (!b.allFinite()) return false;
  return true;
}

template <typename Scalar>
void NetParams<Scalar>::scale(Scalar s) {
  for (auto& w : weights) w *= s;
  for (auto& b : biases) b *= s;
}

template <typename Scalar>
void NetParams<Scalar>::add(const NetParams& other) {
  if (!same_shape(other)) throw_usage("parameter shape mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
}

template <typename Scalar>
bool NetParams<Scalar>::same_shape(const NetParams& other) const {
  return depth() == other.depth() && width() == other.width();
}

template <typename Scalar>
Scalar& NetParams<Scalar>::at(Index flat) {
  const Index per = width() * width() + width();
  if (flat < 0 || flat >= count()) throw_usage("parameter index out of range");
  const auto l = static_cast<std::size_t>(flat / per);
  const Index r = flat % per;
  return r < width() * width() ? weights[l].data()[r] : biases[l][r - width() * width()];
}

template <typename Scalar>
Scalar NetParams<Scalar>::at(Index flat) const {
  return const_cast<NetParams*>(this)->at(flat);
}

template <typename Scalar>
Matrix<Scalar> forward(const NetParams<Scalar>& params, const Matrix<Scalar>& input, NetCache<Scalar>* cache) {
  if (params.depth() > 0 && input.cols() != params.width())
    throw_usage("network input has width " + std::to_string(input.cols()) + ", expected " +
                std::to_string(params.width()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix<Scalar> x = input;
  for (int l = 0; l < params.depth(); ++l) {
    Matrix<Scalar> pre = x * params.weights[l];
    pre.rowwise() += params.biases[l].transpose();
    Matrix<Scalar> next = x + pre.unaryExpr([](Scalar v) { return elu(v); });
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(pre));
    }
    x = std::move(next);
  }
  return x;
}

template <typename Scalar>
Matrix<Scalar> backward(const NetParams<Scalar>& params, const NetCache<Scalar>& cache, const Matrix<Scalar>& output_grad,
                        NetParams<Scalar>& grads) {
  if (static_cast<int>(cache.inputs.size()) != params.depth()) throw_usage("backward called without a forward cache");
  if (!grads.same_shape(params)) throw_usage("gradient storage shape mismatch");
  Matrix<Scalar> g = output_grad;
  for (int l = params.depth() - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    if (g.rows() != cache.inputs[ul].rows() || g.cols() != params.width()) throw_usage("output gradient shape mismatch");
    const Matrix<Scalar> gpre = g.cwiseProduct(cache.pre[ul].unaryExpr([](Scalar v) { return elu_grad(v); }));
    grads.weights[ul].noalias() += cache.inputs[ul].transpose() * gpre;
    grads.biases[ul] += gpre.colwise().sum().transpose();
    g.noalias() += gpre * params.weights[ul].transpose();
  }
  return g;
}

template struct NetParams<float>;
template struct NetParams<double>;
template Matrix<float> forward(const NetParams<float>&, const Matrix<float>&, NetCache<float>*);
template Matrix<double> forward(const NetParams<double>&, const Matrix<double>&, NetCache<double>*);
template Matrix<float> backward(const NetParams<float>&, const NetCache<float>&, const Matrix<float>&, NetParams<float>&);
template Matrix<double> backward(const NetParams<double>&, const NetCache<double>&, const Matrix<double>&,
                                 NetParams<double>&);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& p = ckpt.params;
  if (!ckpt.adam.m.same_shape(p) || !ckpt.adam.v.same_shape(p)) throw_usage("optimizer moments do not match parameters");
  binio::Writer w(path);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(p.depth()));
  w.u32(static_cast<std::uint32_t>(p.width()));
  w.u32(1);
  w.u64(static_cast<std::uint64_t>(ckpt.k));
  w.f64(ckpt.ridge);
  w.u64(ckpt.adam.step);
  write_params(w, p);
  write_params(w, ckpt.adam.m);
  write_params(w, ckpt.adam.v);
  w.commit();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw_data("unsupported checkpoint version " + std::to_string(version));
  const auto depth = static_cast<int>(r.u32());
  const auto width = static_cast<Index>(r.u32());
  const auto per_block = r.u32();
  if (per_block != 1) throw_data("checkpoint uses " + std::to_string(per_block) + " dense layers per block; only 1 is supported");
  Checkpoint ckpt;
  ckpt.k = static_cast<Index>(r.u64());
  ckpt.ridge = r.f64();
  ckpt.adam.step = r.u64();
  ckpt.params = read_params(r, depth, width);
  ckpt.adam.m = read_params(r, depth, width);
  ckpt.adam.v = read_params(r, depth, width);
  r.expect_end();
  return ckpt;
}

}  // namespace geofm
