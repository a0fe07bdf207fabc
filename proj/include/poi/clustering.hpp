#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "poi/tensor.hpp"

namespace poi {

struct KMeansResult {
  std::vector<int> labels;
  MatrixD centroids;
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; the restart with the lowest
/// inertia wins. Throws UserError when k > rows.
KMeansResult kmeans(const MatrixD& x, int k, int restarts, std::uint64_t seed, int max_iter = 300);

/// 2 I(U;V) / (H(U) + H(V)); 1.0 when both labelings are constant.
double normalized_mutual_information(std::span<const int> a, std::span<const int> b);

}  // namespace poi
