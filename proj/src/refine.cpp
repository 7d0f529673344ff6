#include "geofm/refine.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace geofm {

namespace {

template <typename M>
PointMap argmax_columns(const M& p) {
  PointMap out;
  out.map.resize(static_cast<std::size_t>(p.cols()));
  for (Index i = 0; i < p.cols(); ++i) {
    Index best = 0;
    for (Index j = 1; j < p.rows(); ++j)
      if (p(j, i) > p(best, i)) best = j;
    out.map[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

// Heat-kernel factor B = A^1/2 Phi restricted to `rows` (all rows when empty).
MatrixXd kernel_factor(const SpectralBasis& b, const std::vector<Index>& rows) {
  if (rows.empty()) return b.mass.cwiseSqrt().asDiagonal() * b.phi;
  MatrixXd out(static_cast<Index>(rows.size()), b.k());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = std::sqrt(b.mass[rows[r]]) * b.phi.row(rows[r]);
  return out;
}

// B_x^T Pi B_y for the assignment i -> map[i].
MatrixXd coupling(const MatrixXd& bx, const MatrixXd& by, const std::vector<Index>& map) {
  MatrixXd m = MatrixXd::Zero(bx.cols(), by.cols());
  for (Index i = 0; i < bx.rows(); ++i) m.noalias() += bx.row(i).transpose() * by.row(map[static_cast<std::size_t>(i)]);
  return m;
}

double objective(const MatrixXd& m, const VectorXd& ex, const VectorXd& ey) {
  return (ex.asDiagonal() * m * ey.asDiagonal()).cwiseProduct(m).sum();
}

VectorXd heat(const VectorXd& lambda, double t) { return (-t * lambda.array()).exp().matrix(); }

// Spectral embedding used for subsampling: eigenfunctions past the constant one.
MatrixXd embedding(const SpectralBasis& b) { return b.k() > 1 ? MatrixXd(b.phi.rightCols(b.k() - 1)) : b.phi; }

// For every row of `points`, the index into `samples` of the nearest sampled row.
std::vector<Index> nearest_sample(const MatrixXd& points, const std::vector<Index>& samples) {
  std::vector<Index> out(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const double d = (points.row(i) - points.row(samples[s])).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(i)] = static_cast<Index>(s);
      }
    }
  }
  return out;
}

bool is_bijection(const std::vector<Index>& map, Index n) {
  if (static_cast<Index>(map.size()) != n) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (Index j : map) {
    if (j < 0 || j >= n || seen[static_cast<std::size_t>(j)]) return false;
    seen[static_cast<std::size_t>(j)] = 1;
  }
  return true;
}

double smoothed_norm(double r, double delta) { return r >= delta ? r : r * r / (2.0 * delta) + 0.5 * delta; }

}  // namespace

PointMap extract_map(const MatrixXd& p) { return argmax_columns(p); }
PointMap extract_map(const MatrixXf& p) { return argmax_columns(p); }

std::vector<Index> lap_solve(const MatrixXd& score) {
  const Index n = score.rows();
  if (score.cols() != n) throw_usage("assignment scores must be square");
  if (!score.allFinite()) throw_numerical("assignment scores must be finite");
  if (n == 0) return {};
  // Shortest augmenting paths with dual potentials on cost = -score (1-based).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  std::vector<double> minv(static_cast<std::size_t>(n + 1));
  std::vector<char> used(static_cast<std::size_t>(n + 1));
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) perm[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return perm;
}

std::vector<double> heat_time_schedule(double diameter, int iterations) {
  if (iterations < 0) throw_usage("iterations must be non-negative");
  if (!(diameter > 0.0)) throw_usage("heat schedule needs a positive diameter");
  std::vector<double> times(static_cast<std::size_t>(iterations));
  const double hi = diameter * diameter / 10.0, lo = diameter * diameter / 1000.0;
  for (int i = 0; i < iterations; ++i) {
    const double s = iterations > 1 ? static_cast<double>(i) / (iterations - 1) : 0.0;
    times[static_cast<std::size_t>(i)] = hi * std::pow(lo / hi, s);
  }
  return times;
}

double pmf_objective(const std::vector<Index>& map, const SpectralBasis& basis_x, const SpectralBasis& basis_y, double t) {
  if (static_cast<Index>(map.size()) != basis_x.size()) throw_usage("map size does not match the source basis");
  const MatrixXd bx = kernel_factor(basis_x, {}), by = kernel_factor(basis_y, {});
  return objective(coupling(bx, by, map), heat(basis_x.eigenvalues, t), heat(basis_y.eigenvalues, t));
}

std::vector<Index> farthest_point_sample(const MatrixXd& points, Index count) {
  const Index n = points.rows();
  if (count < 1 || count > n) throw_usage("cannot sample " + std::to_string(count) + " of " + std::to_string(n) + " points");
  std::vector<Index> out{0};
  VectorXd dist = (points.rowwise() - points.row(0)).rowwise().squaredNorm();
  while (static_cast<Index>(out.size()) < count) {
    Index next = 0;
    dist.maxCoeff(&next);
    out.push_back(next);
    dist = dist.cwiseMin((points.rowwise() - points.row(next)).rowwise().squaredNorm());
  }
  return out;
}

PmfResult pmf_refine(const PointMap& initial, const SpectralBasis& basis_x, const SpectralBasis& basis_y,
                     const PmfConfig& config) {
  const Index nx = basis_x.size(), ny = basis_y.size();
  if (initial.size() != nx) throw_usage("initial map has " + std::to_string(initial.size()) + " entries, source has " + std::to_string(nx));
  for (Index j : initial.map)
    if (j < 0 || j >= ny) throw_usage("initial map must match every source vertex to a valid target");
  if (config.iterations < 0) throw_usage("PMF iterations must be non-negative");
  std::vector<double> times = config.times.empty() ? heat_time_schedule(config.diameter, config.iterations) : config.times;
  if (static_cast<int>(times.size()) != config.iterations) throw_usage("PMF time schedule length differs from the iteration count");

  PmfResult result;
  if (config.iterations == 0) {
    result.map = initial;
    result.map.bijective = nx == ny && is_bijection(initial.map, ny);
    return result;
  }

  // Square problem between the rows `sx` of X and `sy` of Y (empty = all rows).
  std::vector<Index> sx, sy, to_sample_x, to_sample_y;
  if (ny > nx) {
    sy = farthest_point_sample(embedding(basis_y), nx);
    to_sample_y = nearest_sample(embedding(basis_y), sy);
  } else if (nx > ny) {
    sx = farthest_point_sample(embedding(basis_x), ny);
    to_sample_x = nearest_sample(embedding(basis_x), sx);
  }
  const Index n = std::min(nx, ny);
  std::vector<Index> current(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index src = sx.empty() ? i : sx[static_cast<std::size_t>(i)];
    const Index tgt = initial.map[static_cast<std::size_t>(src)];
    current[static_cast<std::size_t>(i)] = sy.empty() ? tgt : to_sample_y[static_cast<std::size_t>(tgt)];
  }

  const MatrixXd bx = kernel_factor(basis_x, sx), by = kernel_factor(basis_y, sy);
  bool square_start = is_bijection(current, n);
  for (int it = 0; it < config.iterations; ++it) {
    const VectorXd ex = heat(basis_x.eigenvalues, times[static_cast<std::size_t>(it)]);
    const VectorXd ey = heat(basis_y.eigenvalues, times[static_cast<std::size_t>(it)]);
    const MatrixXd m = coupling(bx, by, current);
    const double before = objective(m, ex, ey);
    const MatrixXd score = (bx * (ex.asDiagonal() * m * ey.asDiagonal())) * by.transpose();
    std::vector<Index> next = lap_solve(score);
    if (!is_bijection(next, n)) throw_numerical("assignment step did not return a permutation");
    const double after = objective(coupling(bx, by, next), ex, ey);
    if (square_start && after < before - 1e-10 * std::max(1.0, std::abs(before)))
      throw_numerical("PMF objective decreased from " + std::to_string(before) + " to " + std::to_string(after));
    result.objective_before.push_back(before);
    result.objective_after.push_back(after);
    current = std::move(next);
    square_start = true;
  }

  result.map.map.resize(static_cast<std::size_t>(nx));
  if (nx > ny) {
    for (Index i = 0; i < nx; ++i) result.map.map[static_cast<std::size_t>(i)] = current[static_cast<std::size_t>(to_sample_x[static_cast<std::size_t>(i)])];
  } else {
    for (Index i = 0; i < nx; ++i) {
      const Index t = current[static_cast<std::size_t>(i)];
      result.map.map[static_cast<std::size_t>(i)] = sy.empty() ? t : sy[static_cast<std::size_t>(t)];
    }
  }
  result.map.bijective = nx == ny;
  if (result.map.bijective && !is_bijection(result.map.map, ny)) throw_numerical("PMF output is not a permutation");
  return result;
}

MatrixXd least_squares_fm(const MatrixXd& f, const MatrixXd& g) {
  if (f.cols() != g.cols()) throw_usage("F and G need the same number of columns");
  const MatrixXd ff = f * f.transpose();
  Eigen::LDLT<MatrixXd> ldlt(ff);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) throw_numerical("least-squares functional map system is singular");
  return ldlt.solve(f * g.transpose()).transpose();
}

IrlsResult irls_l21(const MatrixXd& f, const MatrixXd& g, int iterations, double delta_scale) {
  if (f.cols() != g.cols()) throw_usage("F and G need the same number of columns");
  if (f.cols() == 0) throw_data("empty constraint set");
  IrlsResult out;
  out.delta = delta_scale * g.norm();
  if (!(out.delta > 0.0)) out.delta = std::numeric_limits<double>::min();
  auto residual_norms = [&](const MatrixXd& c) -> VectorXd { return (c * f - g).colwise().norm().transpose(); };
  auto value = [&](const VectorXd& r) {
    double s = 0.0;
    for (Index m = 0; m < r.size(); ++m) s += smoothed_norm(r[m], out.delta);
    return s;
  };
  out.c = least_squares_fm(f, g);
  VectorXd r = residual_norms(out.c);
  out.objective.push_back(value(r));
  for (int it = 0; it < iterations; ++it) {
    const VectorXd w = r.cwiseMax(out.delta).cwiseInverse();
    const MatrixXd fw = f * w.asDiagonal();
    Eigen::LDLT<MatrixXd> ldlt(fw * f.transpose());
    if (ldlt.info() != Eigen::Success) throw_numerical("weighted least-squares system is singular");
    const MatrixXd next = ldlt.solve(fw * g.transpose()).transpose();
    const double change = (next - out.c).norm() / std::max(out.c.norm(), std::numeric_limits<double>::min());
    out.c = next;
    r = residual_norms(out.c);
    out.objective.push_back(value(r));
    if (change <= 1e-9) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged && iterations > 0) spdlog::warn("IRLS stopped after {} iterations without converging", iterations);
  return out;
}

PointMap map_from_fm(const MatrixXd& c, const SpectralBasis& basis_x, const SpectralBasis& basis_y) {
  if (c.rows() != basis_y.k() || c.cols() != basis_x.k()) throw_usage("functional map size does not match the bases");
  const MatrixXd t = basis_y.phi * c;  // n_Y x k_X
  const MatrixXd a = basis_x.mass.asDiagonal() * basis_x.phi;
  const Index nx = basis_x.size();
  PointMap out;
  out.map.resize(static_cast<std::size_t>(nx));
  constexpr Index kBlock = 256;
  for (Index start = 0; start < nx; start += kBlock) {
    const Index len = std::min(kBlock, nx - start);
    const MatrixXd block = (t * a.middleRows(start, len).transpose()).cwiseAbs();
    const PointMap part = argmax_columns(block);
    for (Index i = 0; i < len; ++i) out.map[static_cast<std::size_t>(start + i)] = part.map[static_cast<std::size_t>(i)];
  }
  return out;
}

UpscaleResult upscale(const PointMap& low_map, const std::vector<Index>& rep_x, const std::vector<Index>& rep_y,
                      const SpectralBasis& full_x, const SpectralBasis& full_y, const UpscaleConfig& config) {
  if (static_cast<Index>(rep_x.size()) != low_map.size()) throw_usage("source representatives do not match the low-resolution map");
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < low_map.size(); ++i) {
    const Index j = low_map.map[static_cast<std::size_t>(i)];
    if (j == kUnmatched) continue;
    if (j < 0 || j >= static_cast<Index>(rep_y.size())) throw_usage("low-resolution map index out of range at source vertex " + std::to_string(i));
    pairs.emplace_back(rep_x[static_cast<std::size_t>(i)], rep_y[static_cast<std::size_t>(j)]);
  }
  if (pairs.empty()) throw_data("empty constraint set");
  MatrixXd f(full_x.k(), static_cast<Index>(pairs.size())), g(full_y.k(), static_cast<Index>(pairs.size()));
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    if (pairs[m].first < 0 || pairs[m].first >= full_x.size() || pairs[m].second < 0 || pairs[m].second >= full_y.size())
      throw_usage("representative vertex out of range");
    f.col(static_cast<Index>(m)) = full_x.phi.row(pairs[m].first).transpose();
    g.col(static_cast<Index>(m)) = full_y.phi.row(pairs[m].second).transpose();
  }
  UpscaleResult out;
  out.irls = irls_l21(f, g, config.irls_iters, config.delta_scale);
  out.c = out.irls.c;
  out.map = map_from_fm(out.c, full_x, full_y);
  return out;
}

void save_correspondence(const PointMap& map, Index n_y, const std::filesystem::path& path) {
  for (Index j : map.map)
    if (j != kUnmatched && (j < 0 || j >= n_y)) throw_usage("correspondence index " + std::to_string(j) + " out of range");
  std::ofstream out(path);
  if (!out) throw_data("cannot write " + path.string());
  out << "# corrmap v1 " << map.size() << ' ' << n_y << '\n';
  for (Index i = 0; i < map.size(); ++i) out << i << ' ' << map.map[static_cast<std::size_t>(i)] << '\n';
  if (!out) throw_data("failed writing " + path.string());
}

PointMap load_correspondence(const std::filesystem::path& path, Index* n_y) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open correspondence file " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string hash, tag, version;
  long long nx = -1, ny = -1;
  if (!(header >> hash >> tag >> version >> nx >> ny) || hash != "#" || tag != "corrmap" || version != "v1" || nx < 0 || ny < 0)
    throw_data(path.string() + ":1: expected header '# corrmap v1 n_X n_Y'");
  PointMap map;
  map.map.assign(static_cast<std::size_t>(nx), kUnmatched);
  std::vector<char> seen(static_cast<std::size_t>(nx), 0);
  int lineno = 1;
  Index count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long s = 0, t = 0;
    std::string extra;
    if (!(ls >> s >> t) || (ls >> extra)) throw_data(path.string() + ":" + std::to_string(lineno) + ": expected 'src tgt'");
    if (s < 0 || s >= nx || seen[static_cast<std::size_t>(s)])
      throw_data(path.string() + ":" + std::to_string(lineno) + ": bad or repeated source index " + std::to_string(s));
    if (t != kUnmatched && (t < 0 || t >= ny))
      throw_data(path.string() + ":" + std::to_string(lineno) + ": target index " + std::to_string(t) + " out of range");
    seen[static_cast<std::size_t>(s)] = 1;
    map.map[static_cast<std::size_t>(s)] = static_cast<Index>(t);
    ++count;
  }
  if (count != nx) throw_data(path.string() + ": expected " + std::to_string(nx) + " lines, found " + std::to_string(count));
  map.bijective = nx == ny && is_bijection(map.map, static_cast<Index>(ny));
  if (n_y) *n_y = static_cast<Index>(ny);
  return map;
}

}  // namespace geofm
