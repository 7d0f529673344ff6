#include "geofm/spectral.hpp"

#include "geofm/binio.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace geofm {

namespace {

constexpr double kCotClamp = 1e4;

const binio::Magic kBasisMagic = binio::make_magic("GFMBASIS");

}  // namespace

SpectralBasis SpectralBasis::truncated(Index k) const {
  if (k < 1 || k > this->k()) throw_usage("cannot truncate a basis of size " + std::to_string(this->k()) + " to " + std::to_string(k));
  return {phi.leftCols(k), eigenvalues.head(k), mass};
}

SpectralBasis SpectralBasis::permuted(const std::vector<Index>& perm) const {
  SpectralBasis out;
  out.phi.resize(phi.rows(), phi.cols());
  out.mass.resize(mass.size());
  for (std::size_t r = 0; r < perm.size(); ++r) {
    out.phi.row(static_cast<Index>(r)) = phi.row(perm[r]);
    out.mass[static_cast<Index>(r)] = mass[perm[r]];
  }
  out.eigenvalues = eigenvalues;
  return out;
}

CotanLaplacian cotan_laplacian(const TriMesh& mesh) {
  const Index n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.num_faces()) * 12);
  for (Index f = 0; f < mesh.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int i = mesh.faces(f, c), j = mesh.faces(f, (c + 1) % 3), k = mesh.faces(f, (c + 2) % 3);
      const Eigen::Vector3d u = mesh.vertices.row(j) - mesh.vertices.row(i);
      const Eigen::Vector3d v = mesh.vertices.row(k) - mesh.vertices.row(i);
      const double cross = u.cross(v).norm();
      double cot = cross > 0.0 ? u.dot(v) / cross : kCotClamp;
      cot = std::clamp(cot, -kCotClamp, kCotClamp);
      const double w = -0.5 * cot;  // contribution to the edge opposite corner i
      triplets.emplace_back(j, k, w);
      triplets.emplace_back(k, j, w);
      triplets.emplace_back(j, j, -w);
      triplets.emplace_back(k, k, -w);
    }
  }
  CotanLaplacian out;
  out.stiffness.resize(n, n);
  out.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  out.mass = mesh.vertex_areas;
  return out;
}

void canonicalize_signs(MatrixXd& vectors) {
  for (Index c = 0; c < vectors.cols(); ++c) {
    Index best = 0;
    double best_abs = -1.0;
    for (Index r = 0; r < vectors.rows(); ++r) {
      const double a = std::abs(vectors(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (vectors(best, c) < 0.0) vectors.col(c) *= -1.0;
  }
}

namespace {

SpectralBasis finish(MatrixXd phi, const SparseMatrix& stiffness, const VectorXd& mass) {
  // Rayleigh quotients are more accurate than the transformed Ritz values.
  const Index k = phi.cols();
  VectorXd lambda(k);
  for (Index i = 0; i < k; ++i) {
    const VectorXd col = phi.col(i);
    lambda[i] = col.dot(stiffness * col) / col.dot(mass.cwiseProduct(col));
  }
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return lambda[a] < lambda[b]; });
  SpectralBasis basis;
  basis.phi.resize(phi.rows(), k);
  basis.eigenvalues.resize(k);
  for (Index i = 0; i < k; ++i) {
    basis.phi.col(i) = phi.col(order[static_cast<std::size_t>(i)]);
    basis.eigenvalues[i] = lambda[order[static_cast<std::size_t>(i)]];
  }
  canonicalize_signs(basis.phi);
  basis.mass = mass;
  return basis;
}

MatrixXd dense_eigenvectors(const SparseMatrix& stiffness, const VectorXd& mass, Index k) {
  const VectorXd inv_sqrt = mass.cwiseSqrt().cwiseInverse();
  const MatrixXd w = MatrixXd(stiffness);
  const MatrixXd b = inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(0.5 * (b + b.transpose()));
  if (solver.info() != Eigen::Success) throw_numerical("dense eigensolver failed");
  return inv_sqrt.asDiagonal() * solver.eigenvectors().leftCols(k);
}

// Shift-invert Lanczos with full reorthogonalization on the symmetric pencil
// M^-1/2 W M^-1/2. The Krylov space is extended until every requested Ritz pair
// meets the residual tolerance.
MatrixXd lanczos_eigenvectors(const SparseMatrix& stiffness, const VectorXd& mass, Index k, double tolerance) {
  const Index n = stiffness.rows();
  const VectorXd sqrt_mass = mass.cwiseSqrt();
  double scale = 0.0;
  for (Index i = 0; i < n; ++i) scale = std::max(scale, stiffness.coeff(i, i) / mass[i]);
  const double sigma = -1e-8 * scale;

  SparseMatrix shifted = stiffness;
  for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= sigma * mass[i];
  Eigen::SimplicialLDLT<SparseMatrix> factor(shifted);
  if (factor.info() != Eigen::Success) throw_numerical("factorization of the shifted Laplacian failed");
  auto apply = [&](const VectorXd& y) -> VectorXd {
    return sqrt_mass.cwiseProduct(factor.solve(sqrt_mass.cwiseProduct(y)));
  };

  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal;
  auto random_unit = [&](const MatrixXd& basis, Index used) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      VectorXd v(n);
      for (Index i = 0; i < n; ++i) v[i] = normal(rng);
      for (int pass = 0; pass < 2; ++pass) v -= basis.leftCols(used) * (basis.leftCols(used).transpose() * v);
      const double len = v.norm();
      if (len > 1e-8) return VectorXd(v / len);
    }
    throw_numerical("Lanczos could not find a new start vector");
  };

  Index capacity = std::min(n, std::max<Index>(2 * k, k + 30));
  MatrixXd V(n, capacity + 1);
  std::vector<double> alpha, beta;
  V.col(0) = random_unit(V, 0);
  Index m = 0;
  double worst = 0.0;
  while (true) {
    // Extend to `capacity` Lanczos vectors; column m always holds the next one.
    while (m < capacity) {
      VectorXd w = apply(V.col(m));
      const double a = V.col(m).dot(w);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass) w -= V.leftCols(m + 1) * (V.leftCols(m + 1).transpose() * w);
      double b = w.norm();
      if (m + 1 < n) {
        if (b < 1e-10 * std::abs(a)) {
          V.col(m + 1) = random_unit(V, m + 1);
          b = 0.0;
        } else {
          V.col(m + 1) = w / b;
        }
      }
      beta.push_back(b);
      ++m;
    }

    MatrixXd T = MatrixXd::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
      T(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> tri(T);
    // Largest theta <-> smallest lambda.
    const MatrixXd ritz = V.leftCols(m) * tri.eigenvectors().rightCols(k).rowwise().reverse();
    MatrixXd phi = sqrt_mass.cwiseInverse().asDiagonal() * ritz;

    worst = 0.0;
    for (Index i = 0; i < k; ++i) {
      const VectorXd col = phi.col(i);
      const VectorXd a_phi = mass.cwiseProduct(col);
      const double lambda = col.dot(stiffness * col) / col.dot(a_phi);
      const double residual = (stiffness * col - lambda * a_phi).norm() / a_phi.norm();
      worst = std::max(worst, residual);
    }
    if (worst <= tolerance) return phi;
    if (capacity == n) break;
    capacity = std::min(n, 2 * capacity);
    V.conservativeResize(n, capacity + 1);
  }
  throw_numerical("Lanczos eigensolver did not converge: worst relative residual " + std::to_string(worst) +
                  " > tolerance " + std::to_string(tolerance));
}

}  // namespace

SpectralBasis eig_basis(const SparseMatrix& stiffness, const VectorXd& mass, Index k, const EigenOptions& options) {
  const Index n = stiffness.rows();
  if (k < 1 || k > n) throw_usage("eigenbasis size k=" + std::to_string(k) + " must be in [1, n=" + std::to_string(n) + "]");
  if (mass.size() != n || (mass.array() <= 0.0).any()) throw_usage("mass must be positive with one entry per vertex");
  MatrixXd phi = n <= options.dense_threshold ? dense_eigenvectors(stiffness, mass, k)
                                             : lanczos_eigenvectors(stiffness, mass, k, options.tolerance);
  return finish(std::move(phi), stiffness, mass);
}

SpectralBasis eig_basis(const TriMesh& mesh, Index k, const EigenOptions& options) {
  const auto lap = cotan_laplacian(mesh);
  return eig_basis(lap.stiffness, lap.mass, k, options);
}

MatrixXd project(const SpectralBasis& basis, const Eigen::Ref<const MatrixXd>& field) {
  if (field.rows() != basis.size())
    throw_usage("field has " + std::to_string(field.rows()) + " rows, basis has " + std::to_string(basis.size()));
  return basis.phi.transpose() * (basis.mass.asDiagonal() * field);
}

MatrixXd reconstruct(const SpectralBasis& basis, const Eigen::Ref<const MatrixXd>& coeffs) {
  if (coeffs.rows() != basis.k())
    throw_usage("coefficients have " + std::to_string(coeffs.rows()) + " rows, basis has k=" + std::to_string(basis.k()));
  return basis.phi * coeffs;
}

void save_basis(const SpectralBasis& basis, const std::filesystem::path& path) {
  binio::Writer w(path);
  w.magic(kBasisMagic);
  w.u64(static_cast<std::uint64_t>(basis.size()));
  w.u64(static_cast<std::uint64_t>(basis.k()));
  binio::write_rowmajor(w, basis.phi);
  w.f64_array({basis.eigenvalues.data(), static_cast<std::size_t>(basis.eigenvalues.size())});
  w.f64_array({basis.mass.data(), static_cast<std::size_t>(basis.mass.size())});
  w.commit();
}

SpectralBasis load_basis(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kBasisMagic);
  const auto n = static_cast<Index>(r.u64());
  const auto k = static_cast<Index>(r.u64());
  SpectralBasis basis;
  basis.phi.resize(n, k);
  binio::read_rowmajor(r, basis.phi);
  basis.eigenvalues.resize(k);
  r.f64_array({basis.eigenvalues.data(), static_cast<std::size_t>(k)});
  basis.mass.resize(n);
  r.f64_array({basis.mass.data(), static_cast<std::size_t>(n)});
  r.expect_end();
  return basis;
}

}  // namespace geofm
