#pragma once

#include "geofm/mesh.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace geofm::test {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);

// Random permutation of 0..n-1.
std::vector<Index> random_permutation(Index n, std::mt19937_64& rng);

// Random rotation matrix (uniform via normalized quaternion).
Eigen::Matrix3d random_rotation(std::mt19937_64& rng);

}  // namespace geofm::test
