#include "geofm/fmaps.hpp"

#include <cmath>
#include <limits>

namespace geofm {

template <typename Scalar>
ShapeTensors<Scalar> shape_tensors(const SpectralBasis& basis, Index k, const MatrixXf& descriptors, const MatrixXf& dist,
                                   const std::vector<Index>* perm) {
  const Index n = basis.size();
  if (k < 1 || k > basis.k()) throw_usage("requested k=" + std::to_string(k) + " but the basis has " + std::to_string(basis.k()));
  if (descriptors.rows() != n || dist.rows() != n || dist.cols() != n) throw_usage("shape components disagree on vertex count");
  if (perm && static_cast<Index>(perm->size()) != n) throw_usage("permutation size mismatch");
  ShapeTensors<Scalar> t;
  t.phi.resize(n, k);
  t.aphi.resize(n, k);
  t.descriptors.resize(n, descriptors.cols());
  t.dist.resize(n, n);
  auto src = [&](Index r) { return perm ? (*perm)[static_cast<std::size_t>(r)] : r; };
  for (Index r = 0; r < n; ++r) {
    const Index o = src(r);
    t.phi.row(r) = basis.phi.row(o).head(k).template cast<Scalar>();
    t.aphi.row(r) = (basis.mass[o] * basis.phi.row(o).head(k)).template cast<Scalar>();
    t.descriptors.row(r) = descriptors.row(o).template cast<Scalar>();
  }
  for (Index c = 0; c < n; ++c) {
    const Index oc = src(c);
    for (Index r = 0; r < n; ++r) t.dist(r, c) = static_cast<Scalar>(dist(src(r), oc));
  }
  return t;
}

template <typename Scalar>
FunctionalMap<Scalar> solve_fm(const Matrix<Scalar>& f_hat, const Matrix<Scalar>& g_hat, double ridge) {
  if (f_hat.cols() < 1 || f_hat.cols() != g_hat.cols())
    throw_usage("descriptor coefficient matrices need the same positive number of columns");
  if (ridge < 0.0) throw_usage("ridge must be non-negative");
  const Index kx = f_hat.rows();
  FunctionalMap<Scalar> fm;
  fm.f_hat = f_hat;
  fm.g_hat = g_hat;
  fm.ridge = ridge;
  Matrix<Scalar> gram = f_hat * f_hat.transpose();
  const Scalar r = static_cast<Scalar>(ridge * static_cast<double>(gram.trace()) / static_cast<double>(kx));
  gram.diagonal().array() += r;
  fm.llt.compute(gram);
  const bool bad = fm.llt.info() != Eigen::Success ||
                   (ridge == 0.0 && fm.llt.rcond() < 100 * std::numeric_limits<Scalar>::epsilon());
  if (bad)
    throw_numerical(ridge == 0.0 ? "singular functional-map system with ridge = 0; use ridge > 0"
                                 : gram.trace() == Scalar(0) ? "functional-map system is singular: descriptors project to zero"
                                                             : "functional-map system is not positive definite");
  // C^T = M^-1 F G^T
  fm.c = fm.llt.solve(f_hat * g_hat.transpose()).transpose();
  if (!fm.c.allFinite()) throw_numerical("non-finite functional map");
  return fm;
}

template <typename Scalar>
void solve_fm_backward(const FunctionalMap<Scalar>& fm, const Matrix<Scalar>& grad_c, Matrix<Scalar>& grad_f_hat,
                       Matrix<Scalar>& grad_g_hat) {
  if (fm.c.size() == 0) throw_usage("solve_fm_backward needs a solved functional map");
  if (grad_c.rows() != fm.c.rows() || grad_c.cols() != fm.c.cols()) throw_usage("grad_c shape mismatch");
  const Index kx = fm.f_hat.rows();
  const Matrix<Scalar> h = fm.llt.solve(grad_c.transpose()).transpose();  // gC M^-1
  grad_g_hat = h * fm.f_hat;
  const Matrix<Scalar> b = h.transpose() * fm.c;
  grad_f_hat = h.transpose() * fm.g_hat - (b + b.transpose()) * fm.f_hat;
  if (fm.ridge > 0.0) grad_f_hat -= static_cast<Scalar>(2.0 * fm.ridge / static_cast<double>(kx)) * b.trace() * fm.f_hat;
}

template <typename Scalar>
SoftCorrespondence<Scalar> soft_corr(const Matrix<Scalar>& c, const Matrix<Scalar>& aphi_x, const Matrix<Scalar>& psi_y) {
  if (c.rows() != psi_y.cols() || c.cols() != aphi_x.cols()) throw_usage("functional map does not match the bases");
  SoftCorrespondence<Scalar> sc;
  Matrix<Scalar> m = (psi_y * c) * aphi_x.transpose();
  sc.norms = m.colwise().norm().transpose();
  for (Index i = 0; i < sc.norms.size(); ++i)
    if (!(sc.norms[i] > Scalar(0))) throw_numerical("degenerate soft map column " + std::to_string(i));
  sc.signs = m.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0)); });
  sc.p = m.cwiseAbs() * sc.norms.cwiseInverse().asDiagonal();
  return sc;
}

template <typename Scalar>
Matrix<Scalar> soft_corr_backward(const SoftCorrespondence<Scalar>& sc, const Matrix<Scalar>& aphi_x,
                                  const Matrix<Scalar>& psi_y, const Matrix<Scalar>& grad_p) {
  if (grad_p.rows() != sc.p.rows() || grad_p.cols() != sc.p.cols()) throw_usage("grad_p shape mismatch");
  // d p = (I - p p^T) d|m| / ||m|| per column
  const Vector<Scalar> proj = sc.p.cwiseProduct(grad_p).colwise().sum().transpose();
  Matrix<Scalar> g = grad_p - sc.p * proj.asDiagonal();
  g = g * sc.norms.cwiseInverse().asDiagonal();
  g = g.cwiseProduct(sc.signs);
  return psi_y.transpose() * (g * aphi_x);
}

template <typename Scalar>
LossValue<Scalar> unsup_loss(const Matrix<Scalar>& p, const Matrix<Scalar>& d_x, const Matrix<Scalar>& d_y, bool with_grad) {
  const Index nx = p.cols(), ny = p.rows();
  if (d_x.rows() != nx || d_x.cols() != nx || d_y.rows() != ny || d_y.cols() != ny)
    throw_usage("distance matrices do not match the soft map");
  const Matrix<Scalar> q = p.cwiseProduct(p);
  const Matrix<Scalar> qtd = q.transpose() * d_y;  // n_X x n_Y
  Matrix<Scalar> r = d_x - qtd * q;
  double sum = 0.0;
  for (Index i = 0; i < r.size(); ++i) sum += static_cast<double>(r.data()[i]) * static_cast<double>(r.data()[i]);
  const double scale = 1.0 / (static_cast<double>(nx) * static_cast<double>(nx));
  LossValue<Scalar> out;
  out.loss = sum * scale;
  if (with_grad) {
    // gE = -2 R / n^2; gQ = D_Y Q (gE + gE^T); gP = 2 P o gQ
    const Matrix<Scalar> sym = static_cast<Scalar>(-2.0 * scale) * (r + r.transpose());
    out.grad_p = Scalar(2) * p.cwiseProduct(qtd.transpose() * sym);
  }
  return out;
}

template <typename Scalar>
LossValue<Scalar> sup_loss(const Matrix<Scalar>& p, const Matrix<Scalar>& d_y, const std::vector<Index>& gt, bool with_grad) {
  const Index nx = p.cols(), ny = p.rows();
  if (static_cast<Index>(gt.size()) != nx) throw_usage("ground truth has " + std::to_string(gt.size()) + " entries, expected " + std::to_string(nx));
  if (d_y.rows() != ny || d_y.cols() != ny) throw_usage("target distance matrix does not match the soft map");
  LossValue<Scalar> out;
  if (with_grad) out.grad_p = Matrix<Scalar>::Zero(ny, nx);
  double sum = 0.0;
  const double scale = 1.0 / static_cast<double>(nx);
  for (Index i = 0; i < nx; ++i) {
    const Index t = gt[static_cast<std::size_t>(i)];
    if (t == kUnmatched) continue;
    if (t < 0 || t >= ny) throw_usage("ground-truth index " + std::to_string(t) + " out of range at source vertex " + std::to_string(i));
    for (Index j = 0; j < ny; ++j) {
      const double d2 = static_cast<double>(d_y(j, t)) * static_cast<double>(d_y(j, t));
      const double pj = static_cast<double>(p(j, i));
      sum += pj * pj * d2;
      if (with_grad) out.grad_p(j, i) = static_cast<Scalar>(2.0 * scale * pj * d2);
    }
  }
  out.loss = sum * scale;
  return out;
}

namespace {

template <typename Scalar>
struct Forward {
  Matrix<Scalar> fx, fy;  // network outputs
  NetCache<Scalar> cache_x, cache_y;
  FunctionalMap<Scalar> fm;
  SoftCorrespondence<Scalar> sc;
};

template <typename Scalar>
void check_pair(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x, const ShapeTensors<Scalar>& y) {
  if (x.descriptors.cols() != y.descriptors.cols()) throw_usage("descriptor widths differ between shapes");
  if (params.depth() > 0 && params.width() != x.descriptors.cols())
    throw_usage("network width " + std::to_string(params.width()) + " does not match descriptor width " +
                std::to_string(x.descriptors.cols()));
}

template <typename Scalar>
Forward<Scalar> run_forward(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x, const ShapeTensors<Scalar>& y,
                            double ridge, bool keep_cache) {
  check_pair(params, x, y);
  Forward<Scalar> f;
  f.fx = forward(params, x.descriptors, keep_cache ? &f.cache_x : nullptr);
  f.fy = forward(params, y.descriptors, keep_cache ? &f.cache_y : nullptr);
  const Matrix<Scalar> f_hat = x.aphi.transpose() * f.fx;
  const Matrix<Scalar> g_hat = y.aphi.transpose() * f.fy;
  f.fm = solve_fm(f_hat, g_hat, ridge);
  f.sc = soft_corr(f.fm.c, x.aphi, y.phi);
  return f;
}

}  // namespace

template <typename Scalar>
PipelineLoss pipeline_loss_and_grads(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x,
                                     const ShapeTensors<Scalar>& y, LossMode mode, double ridge,
                                     const std::vector<Index>* gt, NetParams<Scalar>* grads) {
  if (mode == LossMode::supervised && !gt) throw_usage("supervised loss needs a ground-truth map");
  const bool want = grads != nullptr;
  Forward<Scalar> f = run_forward(params, x, y, ridge, want);
  PipelineLoss out;
  LossValue<Scalar> unsup = unsup_loss(f.sc.p, x.dist, y.dist, want && mode == LossMode::unsupervised);
  out.unsup = unsup.loss;
  LossValue<Scalar> sup;
  if (gt) {
    sup = sup_loss(f.sc.p, y.dist, *gt, want && mode == LossMode::supervised);
    out.sup = sup.loss;
  }
  out.objective = mode == LossMode::unsupervised ? out.unsup : *out.sup;
  if (!want) return out;

  const Matrix<Scalar>& grad_p = mode == LossMode::unsupervised ? unsup.grad_p : sup.grad_p;
  const Matrix<Scalar> grad_c = soft_corr_backward(f.sc, x.aphi, y.phi, grad_p);
  Matrix<Scalar> grad_f_hat, grad_g_hat;
  solve_fm_backward(f.fm, grad_c, grad_f_hat, grad_g_hat);
  const Matrix<Scalar> grad_fx = x.aphi * grad_f_hat;
  const Matrix<Scalar> grad_fy = y.aphi * grad_g_hat;
  backward(params, f.cache_x, grad_fx, *grads);
  backward(params, f.cache_y, grad_fy, *grads);
  return out;
}

template <typename Scalar>
SoftCorrespondence<Scalar> pipeline_soft_map(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x,
                                             const ShapeTensors<Scalar>& y, double ridge, Matrix<Scalar>* c) {
  Forward<Scalar> f = run_forward(params, x, y, ridge, false);
  if (c) *c = f.fm.c;
  return std::move(f.sc);
}

#define GEOFM_INSTANTIATE(S)                                                                                            \
  template ShapeTensors<S> shape_tensors(const SpectralBasis&, Index, const MatrixXf&, const MatrixXf&,                \
                                         const std::vector<Index>*);                                                    \
  template FunctionalMap<S> solve_fm(const Matrix<S>&, const Matrix<S>&, double);                                       \
  template void solve_fm_backward(const FunctionalMap<S>&, const Matrix<S>&, Matrix<S>&, Matrix<S>&);                   \
  template SoftCorrespondence<S> soft_corr(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&);                       \
  template Matrix<S> soft_corr_backward(const SoftCorrespondence<S>&, const Matrix<S>&, const Matrix<S>&,               \
                                        const Matrix<S>&);                                                              \
  template LossValue<S> unsup_loss(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&, bool);                         \
  template LossValue<S> sup_loss(const Matrix<S>&, const Matrix<S>&, const std::vector<Index>&, bool);                  \
  template PipelineLoss pipeline_loss_and_grads(const NetParams<S>&, const ShapeTensors<S>&, const ShapeTensors<S>&,    \
                                                LossMode, double, const std::vector<Index>*, NetParams<S>*);            \
  template SoftCorrespondence<S> pipeline_soft_map(const NetParams<S>&, const ShapeTensors<S>&, const ShapeTensors<S>&, \
                                                   double, Matrix<S>*);

GEOFM_INSTANTIATE(float)
GEOFM_INSTANTIATE(double)

#undef GEOFM_INSTANTIATE

}  // namespace geofm
