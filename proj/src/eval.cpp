#include "geofm/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <fstream>

namespace geofm {

Normalization parse_normalization(const std::string& name) {
  if (name == "diameter") return Normalization::diameter;
  if (name == "sqrt_area") return Normalization::sqrt_area;
  if (name == "none") return Normalization::none;
  throw_usage("unknown normalization '" + name + "' (diameter, sqrt_area, none)");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::diameter: return "diameter";
    case Normalization::sqrt_area: return "sqrt_area";
    case Normalization::none: return "none";
  }
  return "?";
}

VectorXd geodesic_errors(const PointMap& pred, const PointMap& gt, const GeodesicMatrix& d_y, Normalization norm,
                         double total_area) {
  if (pred.size() != gt.size()) throw_usage("predicted and ground-truth maps differ in length");
  double c = 1.0;
  if (norm == Normalization::diameter) c = d_y.diameter;
  if (norm == Normalization::sqrt_area) c = std::sqrt(total_area);
  if (!(c > 0.0)) throw_usage("normalization constant must be positive");
  const Index ny = d_y.size();
  VectorXd e(pred.size());
  for (Index i = 0; i < pred.size(); ++i) {
    const Index p = pred.map[static_cast<std::size_t>(i)], g = gt.map[static_cast<std::size_t>(i)];
    if (g == kUnmatched) {
      e[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    if (p < 0 || p >= ny || g < 0 || g >= ny)
      throw_usage("map index out of range at source vertex " + std::to_string(i));
    e[i] = static_cast<double>(d_y.d(p, g)) / c;
  }
  return e;
}

std::vector<double> default_thresholds() {
  std::vector<double> t(200);
  for (int i = 0; i < 200; ++i) t[static_cast<std::size_t>(i)] = 0.25 * i / 199.0;
  return t;
}

ErrorCurve curve(const VectorXd& errors, const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1]) throw_usage("thresholds must ascend");
  std::vector<double> finite;
  for (Index i = 0; i < errors.size(); ++i)
    if (std::isfinite(errors[i])) finite.push_back(errors[i]);
  std::sort(finite.begin(), finite.end());
  ErrorCurve out;
  out.thresholds = thresholds;
  out.count = static_cast<Index>(finite.size());
  double sum = 0.0;
  for (double e : finite) sum += e;
  out.mean_error = finite.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(finite.size());
  for (double t : thresholds) {
    const auto k = std::upper_bound(finite.begin(), finite.end(), t) - finite.begin();
    out.fractions.push_back(finite.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(finite.size()));
  }
  return out;
}

LossCorrelation loss_correlation(const std::vector<LossRecord>& history) {
  std::vector<double> a, b;
  for (const auto& r : history) {
    if (!r.sup) continue;
    if (!(r.unsup > 0.0) || !(*r.sup > 0.0)) throw_data("losses must be positive to correlate their logarithms");
    a.push_back(std::log(r.unsup));
    b.push_back(std::log(*r.sup));
  }
  if (a.size() < 2) throw_data("need at least two iterations with both losses");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) throw_data("zero variance");
  LossCorrelation out;
  out.pearson = sab / std::sqrt(saa * sbb);
  out.final_over_initial_sup = std::exp(b.back() - b.front());
  return out;
}

void save_curve(const ErrorCurve& c, Normalization norm, const std::vector<std::string>& pair_ids,
                const std::filesystem::path& csv_path) {
  {
    std::ofstream out(csv_path);
    if (!out) throw_data("cannot write " + csv_path.string());
    out << "threshold,fraction\n";
    char buf[64];
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g", c.thresholds[i], c.fractions[i]);
      out << buf << '\n';
    }
  }
  nlohmann::json meta = {{"normalization", to_string(norm)},
                         {"mean_error", std::isfinite(c.mean_error) ? nlohmann::json(c.mean_error) : nlohmann::json()},
                         {"count", c.count},
                         {"pairs", pair_ids}};
  std::ofstream side(csv_path.string() + ".json");
  if (!side) throw_data("cannot write " + csv_path.string() + ".json");
  side << meta.dump(2) << '\n';
}

}  // namespace geofm
