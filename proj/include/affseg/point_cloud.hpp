#pragma once

#include <map>
#include <string>
#include <utility>

#include "affseg/common.hpp"

namespace affseg {

/// Point cloud with optional per-point part labels and named affordance heatmaps.
/// Coordinates are expected to be normalized (centroid at origin, max norm 1)
/// before entering any pipeline stage; normalize_cloud() establishes that.
struct PointCloud {
  MatX3 points;                        // N x 3
  VecI part_labels;                    // N, empty when absent
  std::map<std::string, Vec> heatmaps; // prompt id -> N scores in [0, 1]

  Eigen::Index size() const { return points.rows(); }
  bool has_labels() const { return part_labels.size() == points.rows() && points.rows() > 0; }
};

/// Recenter to the centroid and scale so the farthest point has norm 1.
/// Labels and heatmaps are carried through untouched. Idempotent.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
  const Eigen::Index n = cloud.size();
  if (n < 1) throw InvalidInput("normalize_cloud: empty cloud");
  PointCloud out = cloud;
  const Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  out.points = cloud.points.rowwise() - centroid;
  const double max_norm = out.points.rowwise().norm().maxCoeff();
  if (max_norm > 0.0) out.points /= max_norm;
  return out;
}

}  // namespace affseg
