#pragma once

#include "geofm/geodesic.hpp"
#include "geofm/train.hpp"

#include <filesystem>
#include <string>

namespace geofm {

enum class Normalization { diameter, sqrt_area, none };

Normalization parse_normalization(const std::string& name);
std::string to_string(Normalization n);

/// e_i = d_Y(pred(i), gt(i)) / c. Sources whose ground truth is unmatched get NaN.
/// c is the geodesic diameter, sqrt(total_area) or 1.
VectorXd geodesic_errors(const PointMap& pred, const PointMap& gt, const GeodesicMatrix& d_y, Normalization norm,
                         double total_area = 0.0);

struct ErrorCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;
  double mean_error = 0.0;
  Index count = 0;  // errors that entered the curve (NaN skipped)
};

/// 200 thresholds from 0 to 0.25.
std::vector<double> default_thresholds();

/// fraction(tau) = |{i : e_i <= tau}| / n over the finite errors.
ErrorCurve curve(const VectorXd& errors, const std::vector<double>& thresholds);

struct LossCorrelation {
  double pearson = 0.0;
  double final_over_initial_sup = 0.0;
};

/// Pearson correlation of log unsupervised vs log supervised loss over the logged iterations.
LossCorrelation loss_correlation(const std::vector<LossRecord>& history);

/// CSV `threshold,fraction` plus `<csv>.json` with the metadata.
void save_curve(const ErrorCurve& c, Normalization norm, const std::vector<std::string>& pair_ids,
                const std::filesystem::path& csv_path);

}  // namespace geofm
