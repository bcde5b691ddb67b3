#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "affseg/array_file.hpp"
#include "affseg/camera.hpp"
#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/teacher.hpp"

namespace affseg {

/// Per-point teacher features lifted from multi-view renders.
struct LiftedFeatureSet {
  Mat features;                 // N x d_2D, mean over visible views
  VecI visibility_count;        // N, number of views where the point won a pixel
  std::vector<char> fallback;   // N, 1 = copied from nearest visible neighbor
  std::string teacher_name;
  int view_count = 0;
  uint64_t seed = 0;

  Eigen::Index size() const { return features.rows(); }
  int dim() const { return static_cast<int>(features.cols()); }

  void save(const std::string& path) const {
    ArrayFile f;
    f.put("features", features, ArrayFile::DType::F32);
    f.put("visibility_count", visibility_count);
    Vec fb(features.rows());
    for (Eigen::Index i = 0; i < fb.size(); ++i) fb[i] = fallback[static_cast<size_t>(i)];
    f.put("fallback", fb, ArrayFile::DType::F32);
    nlohmann::json meta{{"teacher", teacher_name},
                        {"feature_dim", dim()},
                        {"views", view_count},
                        {"seed", seed}};
    f.put_string("__meta__", meta.dump());
    f.save(path);
  }

  static LiftedFeatureSet load(const std::string& path) {
    ArrayFile f = ArrayFile::load(path);
    LiftedFeatureSet set;
    set.features = f.mat("features");
    set.visibility_count = f.veci("visibility_count");
    const Vec fb = f.vec("fallback");
    set.fallback.resize(static_cast<size_t>(fb.size()));
    for (Eigen::Index i = 0; i < fb.size(); ++i)
      set.fallback[static_cast<size_t>(i)] = fb[i] != 0.0;
    const auto meta = nlohmann::json::parse(f.str("__meta__"));
    set.teacher_name = meta.at("teacher").get<std::string>();
    set.view_count = meta.at("views").get<int>();
    set.seed = meta.at("seed").get<uint64_t>();
    if (meta.at("feature_dim").get<int>() != set.dim())
      throw IoError("lifted features: '" + path + "' header dim disagrees with array");
    return set;
  }
};

/// Projects the cloud into every view, samples the teacher's feature map with
/// nearest-neighbor interpolation at each point's won pixel, and averages over
/// the views where the point is visible. Points visible nowhere copy their
/// nearest visible neighbor's feature and are flagged. The per-view reduction
/// runs in a canonical camera order (sorted by camera position) so shuffling
/// the camera list cannot perturb the means.
inline LiftedFeatureSet lift_features(const PointCloud& cloud, const std::vector<Camera>& cameras,
                                      const TeacherEncoder& teacher) {
  if (cameras.empty()) throw InvalidInput("lift_features: need at least one camera");
  const Eigen::Index n = cloud.points.rows();
  if (n == 0) throw InvalidInput("lift_features: empty cloud");
  if (cloud.points.rowwise().norm().maxCoeff() > 1.0 + 1e-6)
    throw InvalidInput("lift_features: cloud must be normalized to the unit sphere");

  std::vector<int> order(cameras.size());
  std::iota(order.begin(), order.end(), 0);
  auto position = [&](int idx) -> Vec3 {
    const Camera& c = cameras[static_cast<size_t>(idx)];
    return -(c.extrinsic.topLeftCorner<3, 3>().transpose() * c.extrinsic.topRightCorner<3, 1>());
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Vec3 pa = position(a), pb = position(b);
    for (int k = 0; k < 3; ++k) {
      if (pa[k] < pb[k]) return true;
      if (pa[k] > pb[k]) return false;
    }
    return a < b;
  });

  LiftedFeatureSet set;
  set.features = Mat::Zero(n, teacher.feature_dim());
  set.visibility_count = VecI::Zero(n);
  set.fallback.assign(static_cast<size_t>(n), 0);
  set.teacher_name = teacher.name();
  set.view_count = static_cast<int>(cameras.size());

  for (int idx : order) {
    const ViewProjection proj = project_points(cloud, cameras[static_cast<size_t>(idx)]);
    const FeatureGrid grid = teacher.encode(proj);
    for (Eigen::Index i = 0; i < n; ++i) {
      int row = 0, col = 0;
      if (!nearest_won_pixel(proj, static_cast<int>(i), &row, &col)) continue;
      set.features.row(i) += grid.sample(row, col).transpose();
      set.visibility_count[i] += 1;
    }
  }

  std::vector<Eigen::Index> visible;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (set.visibility_count[i] > 0) {
      set.features.row(i) /= set.visibility_count[i];
      visible.push_back(i);
    }
  }
  if (visible.empty()) throw LiftingFailed("lift_features: no point is visible in any view");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (set.visibility_count[i] > 0) continue;
    Eigen::Index best = visible.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j : visible) {
      const double d = (cloud.points.row(i) - cloud.points.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    set.features.row(i) = set.features.row(best);
    set.fallback[static_cast<size_t>(i)] = 1;
  }
  return set;
}

/// Top-3 PCA projection of mean-centered features, min-max rescaled per
/// channel into [0,1]. Channels beyond the feature rank collapse to 0.5.
inline Mat pca_to_rgb(const Mat& features) {
  if (features.rows() < 3) throw InvalidInput("pca_to_rgb: need at least 3 points");
  if (features.cols() < 3) throw InvalidInput("pca_to_rgb: need at least 3 feature channels");
  const Mat centered = features.rowwise() - features.colwise().mean();
  const Mat cov = centered.transpose() * centered / double(features.rows());
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw InvalidInput("pca_to_rgb: eigendecomposition failed");

  const double scale = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-30);
  Mat rgb(features.rows(), 3);
  for (int ch = 0; ch < 3; ++ch) {
    const Eigen::Index col = eig.eigenvalues().size() - 1 - ch;  // descending variance
    if (eig.eigenvalues()[col] <= 1e-12 * scale || eig.eigenvalues()[col] <= 0.0) {
      rgb.col(ch).setConstant(0.5);
      continue;
    }
    Vec axis = eig.eigenvectors().col(col);
    Eigen::Index argmax = 0;
    axis.cwiseAbs().maxCoeff(&argmax);
    if (axis[argmax] < 0) axis = -axis;  // deterministic sign
    Vec proj = centered * axis;
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    if (hi - lo < 1e-12)
      rgb.col(ch).setConstant(0.5);
    else
      rgb.col(ch) = (proj.array() - lo) / (hi - lo);
  }
  return rgb;
}

}  // namespace affseg
