#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace geofm {

using Index = Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXf;
using Eigen::VectorXd;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Error categories, doubling as CLI exit codes.
enum class ErrorKind : int { usage = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& what) { throw Error(ErrorKind::usage, what); }
[[noreturn]] inline void throw_data(const std::string& what) { throw Error(ErrorKind::data, what); }
[[noreturn]] inline void throw_numerical(const std::string& what) { throw Error(ErrorKind::numerical, what); }

inline constexpr Index kUnmatched = -1;

/// A vertex-to-vertex map. Entries equal to kUnmatched have no image.
struct PointMap {
  std::vector<Index> map;
  bool bijective = false;

  Index size() const { return static_cast<Index>(map.size()); }
  bool is_permutation(Index target_size) const;
};

/// Permutation helpers. A permutation `perm` reorders rows as new[r] = old[perm[r]].
std::vector<Index> invert_permutation(const std::vector<Index>& perm);
std::vector<Index> identity_permutation(Index n);

}  // namespace geofm
