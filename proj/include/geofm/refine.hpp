#pragma once

#include "geofm/spectral.hpp"

#include <filesystem>

namespace geofm {

/// map(i) = argmax of column i of P (n_Y x n_X); ties go to the lowest index.
PointMap extract_map(const MatrixXd& p);
PointMap extract_map(const MatrixXf& p);

/// Exact maximizer of sum_i score(i, perm[i]) over permutations.
std::vector<Index> lap_solve(const MatrixXd& score);

struct PmfConfig {
  int iterations = 10;
  /// Heat times, one per iteration; empty means heat_time_schedule(diameter, iterations).
  std::vector<double> times;
  double diameter = 1.0;
};

/// Geometric schedule from diameter^2/10 down to diameter^2/1000.
std::vector<double> heat_time_schedule(double diameter, int iterations);

struct PmfResult {
  PointMap map;
  // objective at the iteration's heat time, before and after the assignment step
  std::vector<double> objective_before, objective_after;
};

/// Iterated linear assignment with heat kernels B exp(-lambda t) B^T, B = A^1/2 Phi.
/// Unequal sizes are handled by farthest-point subsampling of the larger side.
PmfResult pmf_refine(const PointMap& initial, const SpectralBasis& basis_x, const SpectralBasis& basis_y,
                     const PmfConfig& config);

/// <Pi, K_X Pi K_Y> for a square bijection `map` at heat time t.
double pmf_objective(const std::vector<Index>& map, const SpectralBasis& basis_x, const SpectralBasis& basis_y, double t);

/// Farthest-point sampling of `count` rows of `points`, starting from row 0.
std::vector<Index> farthest_point_sample(const MatrixXd& points, Index count);

struct IrlsResult {
  MatrixXd c;
  /// Smoothed sum of residual column norms after each iteration (entry 0: least-squares start).
  std::vector<double> objective;
  double delta = 0.0;
  bool converged = false;
};

/// argmin_C sum_m ||C f_m - g_m|| over the columns of F and G by iteratively
/// reweighted least squares with weights 1/max(||r_m||, delta).
/// delta = delta_scale * ||G||_F.
IrlsResult irls_l21(const MatrixXd& f, const MatrixXd& g, int iterations = 20, double delta_scale = 1e-6);

/// Plain least squares C = G F^T (F F^T)^-1.
MatrixXd least_squares_fm(const MatrixXd& f, const MatrixXd& g);

struct UpscaleConfig {
  int irls_iters = 20;
  double delta_scale = 1e-6;
};

struct UpscaleResult {
  MatrixXd c;  // k_Y x k_X on the full bases
  PointMap map;
  IrlsResult irls;
};

/// Fits a full-resolution functional map from low-resolution matches. rep_x/rep_y
/// give the full vertex standing for each low vertex.
UpscaleResult upscale(const PointMap& low_map, const std::vector<Index>& rep_x, const std::vector<Index>& rep_y,
                      const SpectralBasis& full_x, const SpectralBasis& full_y, const UpscaleConfig& config = {});

/// Point map of the soft correspondence of C without forming P.
PointMap map_from_fm(const MatrixXd& c, const SpectralBasis& basis_x, const SpectralBasis& basis_y);

/// `# corrmap v1 n_X n_Y` followed by one `src tgt` line per source vertex (-1 when unmatched).
void save_correspondence(const PointMap& map, Index n_y, const std::filesystem::path& path);
PointMap load_correspondence(const std::filesystem::path& path, Index* n_y = nullptr);

}  // namespace geofm
