// Shared helpers for the test suite: independent oracle implementations
// (naive loops, brute force) and a central-difference gradient checker. These
// deliberately do NOT call into the library code they are used to verify.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "affseg/autograd.hpp"
#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/rng.hpp"
#include "affseg/sampling.hpp"

namespace support {

using affseg::Mat;
using affseg::PatchSet;
using affseg::PointCloud;
using affseg::Rng;
using affseg::Vec;

/// Per-process scratch directory for files the tests write.
inline const std::string& temp_dir() {
  static const std::string dir = [] {
    std::string templ =
        (std::filesystem::temp_directory_path() / "affseg-tests-XXXXXX").string();
    std::vector<char> buf(templ.begin(), templ.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr)
      throw std::runtime_error("test_support: mkdtemp failed");
    return std::string(buf.data());
  }();
  return dir;
}

// ---- random builders ---------------------------------------------------------------

inline Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                         double hi = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

inline Mat random_normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

inline PointCloud random_cloud(Rng& rng, Eigen::Index n, bool labeled = false, int parts = 4) {
  PointCloud cloud;
  cloud.points = random_matrix(rng, n, 3);
  double max_norm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) max_norm = std::max(max_norm, cloud.points.row(i).norm());
  if (max_norm > 0) cloud.points /= max_norm;
  if (labeled) {
    cloud.part_labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      cloud.part_labels[i] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(parts)));
  }
  return cloud;
}

/// Random patch structure over n points: every patch non-empty, indices valid.
inline PatchSet random_patches(Rng& rng, Eigen::Index n, Eigen::Index m, Eigen::Index k) {
  PatchSet set;
  set.centers = support::random_matrix(rng, m, 3);
  set.member_indices.resize(static_cast<size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    std::vector<int>& members = set.member_indices[static_cast<size_t>(j)];
    members.resize(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i)
      members[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
  }
  return set;
}

// ---- geometry oracles ----------------------------------------------------------------

/// Naive farthest point sampling, lowest-index tie-break.
inline std::vector<int> fps_oracle(const Mat& points, int m, int start) {
  const int n = static_cast<int>(points.rows());
  std::vector<int> chosen{start};
  std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  while (static_cast<int>(chosen.size()) < m) {
    const int last = chosen.back();
    for (int i = 0; i < n; ++i)
      dist[static_cast<size_t>(i)] =
          std::min(dist[static_cast<size_t>(i)], (points.row(i) - points.row(last)).norm());
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      bool taken = false;
      for (int c : chosen) taken = taken || c == i;
      if (taken) continue;
      if (dist[static_cast<size_t>(i)] > best_d) {
        best_d = dist[static_cast<size_t>(i)];
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

/// Naive k nearest neighbors of point `center`, sorted by (distance, index).
inline std::vector<int> knn_oracle(const Mat& points, int center, int k) {
  std::vector<std::pair<double, int>> all;
  for (int i = 0; i < static_cast<int>(points.rows()); ++i)
    all.emplace_back((points.row(i) - points.row(center)).norm(), i);
  std::sort(all.begin(), all.end());
  std::vector<int> out;
  for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i)
    out.push_back(all[static_cast<size_t>(i)].second);
  return out;
}

// ---- CMAT oracles ---------------------------------------------------------------------

inline Mat pool_oracle(const Mat& features, const PatchSet& patches) {
  const Eigen::Index m = static_cast<Eigen::Index>(patches.member_indices.size());
  Mat pooled = Mat::Zero(m, features.cols());
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& members = patches.member_indices[static_cast<size_t>(j)];
    for (int i : members) pooled.row(j) += features.row(i);
    pooled.row(j) /= static_cast<double>(members.size());
  }
  return pooled;
}

inline Mat affinity_oracle(const Mat& pooled) {
  const Eigen::Index m = pooled.rows();
  Mat a = Mat::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double ni = pooled.row(i).norm(), nj = pooled.row(j).norm();
      if (ni == 0.0 || nj == 0.0) continue;  // zero rows stay zero, diagonal included
      a(i, j) = pooled.row(i).dot(pooled.row(j)) / (ni * nj);
    }
  }
  return a;
}

inline double loss_rec_oracle(const Mat& predicted, const Mat& target) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < predicted.rows(); ++r)
    for (Eigen::Index c = 0; c < predicted.cols(); ++c) {
      const double d = predicted(r, c) - target(r, c);
      s += d * d;
    }
  return s / static_cast<double>(predicted.size());
}

inline double loss_aff_oracle(const Mat& a3d, const Mat& a2d) {
  const Eigen::Index m = a3d.rows();
  double s = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = a3d(i, j) - a2d(i, j);
      s += d * d;
    }
  return s / static_cast<double>(m * m);
}

inline double loss_div_oracle(const Mat& pooled, double eps = 1e-8) {
  const Eigen::Index m = pooled.rows();
  Mat unit = pooled;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double n = unit.row(j).norm();
    unit.row(j) /= std::max(n, eps);
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double nearest = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == j) continue;
      nearest = std::min(nearest, (unit.row(j) - unit.row(k)).norm());
    }
    s += std::log(std::max(nearest, eps));
  }
  return -s / static_cast<double>(m);
}

// ---- CAST oracle ------------------------------------------------------------------------

inline Mat propagation_oracle(const PatchSet& patches, const PointCloud& cloud,
                              int fp_neighbors) {
  const Eigen::Index n = static_cast<Eigen::Index>(cloud.size());
  const Eigen::Index m = patches.centers.rows();
  const Eigen::Index k = std::min<Eigen::Index>(fp_neighbors, m);
  Mat w = Mat::Zero(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Eigen::Index>> d;
    for (Eigen::Index j = 0; j < m; ++j)
      d.emplace_back((cloud.points.row(i) - patches.centers.row(j)).norm(), j);
    std::sort(d.begin(), d.end());
    double total = 0.0;
    for (Eigen::Index t = 0; t < k; ++t) total += 1.0 / (d[static_cast<size_t>(t)].first + 1e-8);
    for (Eigen::Index t = 0; t < k; ++t)
      w(i, d[static_cast<size_t>(t)].second) =
          (1.0 / (d[static_cast<size_t>(t)].first + 1e-8)) / total;
  }
  return w;
}

// ---- metric oracles ---------------------------------------------------------------------

inline double aiou_oracle(const Vec& pred, const Vec& gt) {
  long inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= 0.5, g = gt[i] >= 0.5;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// O(N^2) pairwise AUC with ties counted half.
inline double auc_oracle(const Vec& pred, const Vec& gt, bool* defined = nullptr) {
  std::vector<double> pos, neg;
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    (gt[i] >= 0.5 ? pos : neg).push_back(pred[i]);
  if (pos.empty() || neg.empty()) {
    if (defined != nullptr) *defined = false;
    return 0.0;
  }
  if (defined != nullptr) *defined = true;
  double wins = 0.0;
  for (double p : pos)
    for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

inline double sim_oracle(const Vec& pred, const Vec& gt) {
  const double sp = pred.sum(), sg = gt.sum();
  if (sp <= 0.0 || sg <= 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) s += std::min(pred[i] / sp, gt[i] / sg);
  return s;
}

inline double mae_oracle(const Vec& pred, const Vec& gt) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

// ---- gradient checking --------------------------------------------------------------------

/// Builds the loss twice per entry with central differences (float64, step h)
/// and compares against the analytic gradient from one backward pass. Returns
/// the max relative error over all entries, with scale floored at 1e-6.
/// `build` receives a fresh tape and the current input and must return the
/// scalar loss Var.
inline double gradcheck(
    Eigen::MatrixXd x,
    const std::function<affseg::ad::Var<double>(affseg::ad::Tape<double>&,
                                                const affseg::ad::Var<double>&)>& build,
    double h = 1e-5) {
  namespace ad = affseg::ad;
  Eigen::MatrixXd analytic;
  {
    ad::Tape<double> tape;
    ad::Var<double> vx = ad::leaf<double>(tape, x, true);
    ad::Var<double> loss = build(tape, vx);
    if (loss.value().size() != 1) throw affseg::InvalidInput("gradcheck: loss must be scalar");
    tape.backward(loss.node);
    analytic = vx.node->grad;
  }
  const auto eval = [&](const Eigen::MatrixXd& xv) {
    ad::Tape<double> tape;
    ad::Var<double> vx = ad::leaf<double>(tape, xv, false);
    return build(tape, vx).scalar();
  };
  double max_rel = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(r, c) += h;
      xm(r, c) -= h;
      const double numeric = (eval(xp) - eval(xm)) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic(r, c)), 1e-6});
      max_rel = std::max(max_rel, std::abs(numeric - analytic(r, c)) / scale);
    }
  }
  return max_rel;
}

}  // namespace support
