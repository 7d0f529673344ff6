#include "geofm/common.hpp"

#include <numeric>

namespace geofm {

bool PointMap::is_permutation(Index target_size) const {
  if (size() != target_size) return false;
  std::vector<char> seen(static_cast<std::size_t>(target_size), 0);
  for (Index j : map) {
    if (j < 0 || j >= target_size || seen[static_cast<std::size_t>(j)]) return false;
    seen[static_cast<std::size_t>(j)] = 1;
  }
  return true;
}

std::vector<Index> invert_permutation(const std::vector<Index>& perm) {
  std::vector<Index> inv(perm.size());
  for (std::size_t r = 0; r < perm.size(); ++r) inv[static_cast<std::size_t>(perm[r])] = static_cast<Index>(r);
  return inv;
}

std::vector<Index> identity_permutation(Index n) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  return perm;
}

}  // namespace geofm
