#pragma once

#include "geofm/mesh.hpp"

#include <Eigen/Sparse>

#include <filesystem>

namespace geofm {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Truncated Laplace-Beltrami eigenbasis.
///
/// Columns of `phi` are A-orthonormal (A = diag(mass)), `eigenvalues` ascend,
/// and each column is sign-canonicalized: its largest-magnitude entry is
/// positive (ties resolved toward the lowest row index).
struct SpectralBasis {
  MatrixXd phi;
  VectorXd eigenvalues;
  VectorXd mass;

  Index size() const { return phi.rows(); }
  Index k() const { return phi.cols(); }

  /// First `k` eigenpairs of this basis.
  SpectralBasis truncated(Index k) const;
  /// Rows relabeled so that new row r is old row perm[r].
  SpectralBasis permuted(const std::vector<Index>& perm) const;
};

struct CotanLaplacian {
  SparseMatrix stiffness;  ///< symmetric PSD, rows sum to zero
  VectorXd mass;           ///< lumped vertex areas
};

/// Cotangent stiffness w_ij = -(cot a + cot b)/2 with cotangents clamped to [-1e4, 1e4].
CotanLaplacian cotan_laplacian(const TriMesh& mesh);

struct EigenOptions {
  /// Problems up to this size are solved densely.
  Index dense_threshold = 600;
  /// Relative residual ||W phi - lambda A phi|| / ||A phi|| accepted from the iterative solver.
  double tolerance = 1e-6;
};

/// The k smallest generalized eigenpairs of W phi = lambda A phi.
SpectralBasis eig_basis(const SparseMatrix& stiffness, const VectorXd& mass, Index k, const EigenOptions& options = {});

/// Convenience: Laplacian and eigenbasis of a mesh.
SpectralBasis eig_basis(const TriMesh& mesh, Index k, const EigenOptions& options = {});

/// Spectral coefficients phi^T A field (k x d).
MatrixXd project(const SpectralBasis& basis, const Eigen::Ref<const MatrixXd>& field);

/// Synthesis phi * coeffs (n x d).
MatrixXd reconstruct(const SpectralBasis& basis, const Eigen::Ref<const MatrixXd>& coeffs);

/// Flip each column so that its largest-magnitude entry is positive.
void canonicalize_signs(MatrixXd& vectors);

/// Basis cache: magic "GFMBASIS", u64 n, u64 k, phi (n x k row-major f64),
/// eigenvalues (k f64), mass (n f64).
void save_basis(const SpectralBasis& basis, const std::filesystem::path& path);
SpectralBasis load_basis(const std::filesystem::path& path);

}  // namespace geofm
