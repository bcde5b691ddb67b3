#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"

namespace affseg {

/// Local point groups used as transformer tokens: centers come from farthest
/// point sampling, members from k-nearest-neighbor grouping around each center.
struct PatchSet {
  MatX3 centers;                               // M x 3
  std::vector<std::vector<int>> member_indices; // M lists of k point indices
  int patch_count() const { return static_cast<int>(member_indices.size()); }
  int group_size() const { return member_indices.empty() ? 0 : static_cast<int>(member_indices[0].size()); }
};

/// Greedy max-min selection of M indices. The first pick is start_index; every
/// later pick maximizes the distance to the already-selected set. Ties break
/// toward the lowest index, which makes the result bit-deterministic.
inline std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int start_index = 0) {
  const int n = static_cast<int>(cloud.size());
  if (m < 1 || m > n) throw InvalidInput("farthest_point_sample: M must be in [1, N]");
  if (start_index < 0 || start_index >= n) throw InvalidInput("farthest_point_sample: start index out of range");

  std::vector<int> selected;
  selected.reserve(m);
  Vec min_dist2 = Vec::Constant(n, std::numeric_limits<double>::infinity());
  int current = start_index;
  for (int pick = 0; pick < m; ++pick) {
    selected.push_back(current);
    const Vec d2 = (cloud.points.rowwise() - cloud.points.row(current)).rowwise().squaredNorm();
    min_dist2 = min_dist2.cwiseMin(d2);
    int best = 0;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_dist2[i] > best_d) {  // strict: first (lowest) index wins ties
        best_d = min_dist2[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

/// For each center, the k nearest cloud points by Euclidean distance, ties
/// broken by lower index. The center point itself is always a member (it is
/// its own nearest neighbor at distance zero).
inline PatchSet knn_group(const PointCloud& cloud, const std::vector<int>& center_indices, int k) {
  const int n = static_cast<int>(cloud.size());
  if (k < 1 || k > n) throw InvalidInput("knn_group: k must be in [1, N]");

  PatchSet patches;
  patches.centers.resize(static_cast<Eigen::Index>(center_indices.size()), 3);
  patches.member_indices.resize(center_indices.size());

  std::vector<int> order(n);
  for (std::size_t j = 0; j < center_indices.size(); ++j) {
    const int c = center_indices[j];
    if (c < 0 || c >= n) throw InvalidInput("knn_group: center index out of range");
    patches.centers.row(static_cast<Eigen::Index>(j)) = cloud.points.row(c);
    const Vec d2 = (cloud.points.rowwise() - cloud.points.row(c)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      if (d2[a] != d2[b]) return d2[a] < d2[b];
      return a < b;
    });
    patches.member_indices[j].assign(order.begin(), order.begin() + k);
  }
  return patches;
}

/// FPS + kNN in one step with the pipeline's pinned start index.
inline PatchSet build_patches(const PointCloud& cloud, int m, int k, int start_index = 0) {
  return knn_group(cloud, farthest_point_sample(cloud, m, start_index), k);
}

}  // namespace affseg
