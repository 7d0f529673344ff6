#pragma once

#include "geofm/net.hpp"
#include "geofm/spectral.hpp"

#include <Eigen/Cholesky>

#include <optional>

namespace geofm {

/// Per-shape inputs of the pipeline in the working precision.
template <typename Scalar>
struct ShapeTensors {
  Matrix<Scalar> phi;          // n x k
  Matrix<Scalar> aphi;         // diag(mass) * phi
  Matrix<Scalar> descriptors;  // n x d
  Matrix<Scalar> dist;         // n x n geodesic distances

  Index size() const { return phi.rows(); }
  Index k() const { return phi.cols(); }
};

/// Builds tensors from cached components, keeping the first k eigenfunctions.
/// With `perm`, new vertex r is old vertex perm[r] in every component.
template <typename Scalar>
ShapeTensors<Scalar> shape_tensors(const SpectralBasis& basis, Index k, const MatrixXf& descriptors, const MatrixXf& dist,
                                   const std::vector<Index>* perm = nullptr);

/// Least-squares functional map C = G F^T (F F^T + r I)^-1 with r = ridge * tr(F F^T) / k_X.
template <typename Scalar>
struct FunctionalMap {
  Matrix<Scalar> c;  // k_Y x k_X

  // kept for the backward pass
  Matrix<Scalar> f_hat, g_hat;
  Eigen::LLT<Matrix<Scalar>> llt;
  double ridge = 0.0;
};

template <typename Scalar>
FunctionalMap<Scalar> solve_fm(const Matrix<Scalar>& f_hat, const Matrix<Scalar>& g_hat, double ridge);

template <typename Scalar>
void solve_fm_backward(const FunctionalMap<Scalar>& fm, const Matrix<Scalar>& grad_c, Matrix<Scalar>& grad_f_hat,
                       Matrix<Scalar>& grad_g_hat);

/// P = |Psi C Phi^T A| with unit L2 columns; q() = P o P is column stochastic.
template <typename Scalar>
struct SoftCorrespondence {
  Matrix<Scalar> p;       // n_Y x n_X
  Matrix<Scalar> signs;   // sign of the pre-normalized entries
  Vector<Scalar> norms;   // column norms before normalization

  Matrix<Scalar> q() const { return p.cwiseProduct(p); }
};

template <typename Scalar>
SoftCorrespondence<Scalar> soft_corr(const Matrix<Scalar>& c, const Matrix<Scalar>& aphi_x, const Matrix<Scalar>& psi_y);

template <typename Scalar>
Matrix<Scalar> soft_corr_backward(const SoftCorrespondence<Scalar>& sc, const Matrix<Scalar>& aphi_x,
                                  const Matrix<Scalar>& psi_y, const Matrix<Scalar>& grad_p);

template <typename Scalar>
struct LossValue {
  double loss = 0.0;
  Matrix<Scalar> grad_p;  // empty unless requested
};

/// (1/n_X^2) ||D_X - Q^T D_Y Q||_F^2, D_Y symmetric.
template <typename Scalar>
LossValue<Scalar> unsup_loss(const Matrix<Scalar>& p, const Matrix<Scalar>& d_x, const Matrix<Scalar>& d_y,
                             bool with_grad = true);

/// (1/n_X) ||P o (D_Y Pi*)||_F^2 over source vertices with a ground-truth image.
template <typename Scalar>
LossValue<Scalar> sup_loss(const Matrix<Scalar>& p, const Matrix<Scalar>& d_y, const std::vector<Index>& gt,
                           bool with_grad = true);

enum class LossMode { unsupervised, supervised };

struct PipelineLoss {
  double unsup = 0.0;
  std::optional<double> sup;
  double objective = 0.0;  // the optimized one
};

/// Siamese forward through net, spectral projection, FM solve, soft map and
/// loss; adds parameter gradients to `grads` when given. `gt` maps X vertices
/// to Y vertices (kUnmatched allowed) and enables the supervised value.
template <typename Scalar>
PipelineLoss pipeline_loss_and_grads(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x,
                                     const ShapeTensors<Scalar>& y, LossMode mode, double ridge,
                                     const std::vector<Index>* gt, NetParams<Scalar>* grads);

/// Forward pass only: functional map and soft correspondence for a pair.
template <typename Scalar>
SoftCorrespondence<Scalar> pipeline_soft_map(const NetParams<Scalar>& params, const ShapeTensors<Scalar>& x,
                                             const ShapeTensors<Scalar>& y, double ridge, Matrix<Scalar>* c = nullptr);

}  // namespace geofm
