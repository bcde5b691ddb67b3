#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "affseg/autograd.hpp"
#include "affseg/backbone.hpp"
#include "affseg/common.hpp"
#include "affseg/lifting.hpp"
#include "affseg/optim.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/rng.hpp"
#include "affseg/sampling.hpp"

namespace affseg {

inline constexpr double kKoleoEps = 1e-8;

// ---- plain (oracle-friendly) forms ------------------------------------------

/// Row j = mean of per-point features over patch j's members (Eq. 1/2).
inline Mat pool_patch_features(const Mat& per_point, const PatchSet& patches) {
  Mat pooled = Mat::Zero(static_cast<Eigen::Index>(patches.member_indices.size()), per_point.cols());
  for (size_t j = 0; j < patches.member_indices.size(); ++j) {
    const auto& members = patches.member_indices[j];
    if (members.empty()) throw InvalidInput("pool_patch_features: empty patch");
    for (int i : members) pooled.row(static_cast<Eigen::Index>(j)) += per_point.row(i);
    pooled.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(members.size());
  }
  return pooled;
}

struct AffinityMatrix {
  Mat values;           // M x M cosine similarities
  bool zero_row = false;  // some pooled row had zero norm; its similarities are 0
};

/// Pairwise cosine similarity of pooled rows (Eq. 3). Zero-norm rows yield 0
/// entries (diagonal included) and set the warning flag.
inline AffinityMatrix affinity(const Mat& pooled) {
  if (pooled.rows() < 1) throw InvalidInput("affinity: need at least one row");
  AffinityMatrix a;
  const Eigen::Index m = pooled.rows();
  Vec norms = pooled.rowwise().norm();
  Mat unit = Mat::Zero(m, pooled.cols());
  for (Eigen::Index j = 0; j < m; ++j) {
    if (norms[j] > 0)
      unit.row(j) = pooled.row(j) / norms[j];
    else
      a.zero_row = true;
  }
  a.values = unit * unit.transpose();
  return a;
}

inline bool affinity_invariants_ok(const AffinityMatrix& a, double tol = 1e-6) {
  const Mat& v = a.values;
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > tol) return false;
  if (v.maxCoeff() > 1.0 + tol || v.minCoeff() < -1.0 - tol) return false;
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const bool zero_diag = std::abs(v(j, j)) <= tol;          // zero-norm row convention
    const bool unit_diag = std::abs(v(j, j) - 1.0) <= tol;
    if (!zero_diag && !unit_diag) return false;
  }
  return true;
}

/// MSE over masked patch centers, averaged over patches and coordinates.
inline double loss_rec(const Mat& predicted, const Mat& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw InvalidInput("loss_rec: shape mismatch");
  if (predicted.size() == 0) throw InvalidInput("loss_rec: empty input");
  return (predicted - target).squaredNorm() / static_cast<double>(predicted.size());
}

/// Affinity alignment (Eq. 4): (1/M^2) * sum of squared entry differences.
inline double loss_aff(const AffinityMatrix& a3d, const AffinityMatrix& a2d) {
  if (a3d.values.rows() != a2d.values.rows() || a3d.values.cols() != a2d.values.cols())
    throw InvalidInput("loss_aff: dimension mismatch");
  const Eigen::Index m = a3d.values.rows();
  return (a3d.values - a2d.values).squaredNorm() / static_cast<double>(m * m);
}

/// KoLeo diversity (Eq. 5): l2-normalize rows, d_j = min_{k != j} ||f_j - f_k||
/// clamped below at eps, return -(1/M) * sum log d_j.
inline double loss_div(const Mat& pooled, double eps = kKoleoEps) {
  const Eigen::Index m = pooled.rows();
  if (m < 2) throw InvalidInput("loss_div: need at least two rows");
  Mat unit(m, pooled.cols());
  for (Eigen::Index j = 0; j < m; ++j) {
    const double n = pooled.row(j).norm();
    unit.row(j) = n > eps ? (pooled.row(j) / n).eval() : (pooled.row(j) / eps).eval();
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == j) continue;
      best = std::min(best, (unit.row(j) - unit.row(k)).norm());
    }
    total += std::log(std::max(best, eps));
  }
  return -total / static_cast<double>(m);
}

// ---- differentiable forms ----------------------------------------------------

/// KoLeo over rows that are already l2-normalized. The gradient follows the
/// chosen nearest neighbor (lowest index on exact ties, matching the forward).
template <class S>
ad::Var<S> koleo(const ad::Var<S>& unit_rows, S eps = S(kKoleoEps)) {
  auto px = unit_rows.node;
  const Eigen::Index m = px->value.rows();
  if (m < 2) throw InvalidInput("loss_div: need at least two rows");
  auto nearest = std::make_shared<std::vector<Eigen::Index>>(static_cast<size_t>(m));
  auto dists = std::make_shared<std::vector<S>>(static_cast<size_t>(m));
  S total = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index best_k = j == 0 ? 1 : 0;
    S best = (px->value.row(j) - px->value.row(best_k)).norm();
    for (Eigen::Index k = best_k + 1; k < m; ++k) {
      if (k == j) continue;
      const S d = (px->value.row(j) - px->value.row(k)).norm();
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    (*nearest)[static_cast<size_t>(j)] = best_k;
    (*dists)[static_cast<size_t>(j)] = best;
    total += std::log(std::max(best, eps));
  }
  ad::MatS<S> v(1, 1);
  v(0, 0) = -total / static_cast<S>(m);
  return ad::from_node(*unit_rows.tape, unit_rows.tape->record(
      std::move(v), {px}, [px, nearest, dists, m, eps](ad::Node<S>& n) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        const S g = n.grad(0, 0);
        for (Eigen::Index j = 0; j < m; ++j) {
          const S d = (*dists)[static_cast<size_t>(j)];
          if (d <= eps) continue;  // clamped: locally constant
          const Eigen::Index k = (*nearest)[static_cast<size_t>(j)];
          const auto diff = (px->value.row(j) - px->value.row(k)) / (d * d);
          px->grad.row(j) -= g * diff / static_cast<S>(m);
          px->grad.row(k) += g * diff / static_cast<S>(m);
        }
      }));
}

template <class S>
ad::Var<S> loss_div_var(const ad::Var<S>& pooled, S eps = S(kKoleoEps)) {
  return koleo(ad::l2_normalize_rows(pooled, eps), eps);
}

template <class S>
ad::Var<S> affinity_var(const ad::Var<S>& pooled) {
  const ad::Var<S> unit = ad::l2_normalize_rows(pooled, S(kKoleoEps));
  return ad::matmul(unit, ad::transpose(unit));
}

template <class S>
ad::Var<S> loss_aff_var(const ad::Var<S>& student_pooled, const ad::Var<S>& a2d) {
  if (student_pooled.rows() != a2d.rows())
    throw InvalidInput("loss_aff: dimension mismatch");
  return ad::mean(ad::square(ad::sub(affinity_var(student_pooled), a2d)));
}

template <class S>
ad::Var<S> loss_rec_var(const ad::Var<S>& predicted, const ad::Var<S>& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw InvalidInput("loss_rec: shape mismatch");
  return ad::mean(ad::square(ad::sub(predicted, target)));
}

// ---- pre-training ------------------------------------------------------------

struct PretrainConfig {
  double lambda_rec = 1.0;
  double lambda_aff = 0.1;
  double lambda_div = 0.2;
  int epochs = 150;
  int warmup_epochs = 15;
  int batch_size = 128;
  double lr = 1e-4;
  double weight_decay = 0.05;
  uint64_t seed = 1;

  static PretrainConfig paper() { return {}; }
  static PretrainConfig toy() {
    PretrainConfig c;
    c.epochs = 30;
    c.warmup_epochs = 3;
    c.batch_size = 8;
    return c;
  }

  void validate() const {
    if (lambda_rec < 0 || lambda_aff < 0 || lambda_div < 0)
      throw InvalidConfig("pretrain config: loss weights must be >= 0");
    if (epochs < 1 || batch_size < 1) throw InvalidConfig("pretrain config: counts must be positive");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
      throw InvalidConfig("pretrain config: warmup must lie within epochs");
    if (lr <= 0) throw InvalidConfig("pretrain config: lr must be positive");
  }
};

/// One object prepared for Stage 2: cached patches, pooled teacher features,
/// and the (fixed) teacher affinity matrix.
struct PretrainItem {
  std::string object_id;
  PointCloud cloud;
  PatchSet patches;
  Mat teacher_affinity;  // M x M, from pooled lifted features

  static PretrainItem prepare(std::string object_id, PointCloud cloud, const Mat& lifted,
                              const BackboneConfig& cfg) {
    PretrainItem item;
    item.object_id = std::move(object_id);
    item.patches = build_patches(cloud, cfg.patches, cfg.group_size);
    item.teacher_affinity = affinity(pool_patch_features(lifted, item.patches)).values;
    item.cloud = std::move(cloud);
    return item;
  }
};

struct LossReport {
  double rec = 0.0, aff = 0.0, div = 0.0, total = 0.0;
};

namespace detail {
inline void check_finite_loss(double value, const char* term, const std::string& object_id) {
  if (!std::isfinite(value))
    throw TrainingAborted(std::string("pretrain: non-finite ") + term + " for object '" +
                          object_id + "'");
}
}  // namespace detail

/// Forward + backward over one batch (Eq. 6); gradients accumulate into the
/// model parameters, scaled by 1/batch. Reconstruction uses a masked forward;
/// affinity and diversity use an unmasked forward over all M patches.
template <class S>
LossReport pretrain_step(Backbone<S>& model, const std::vector<const PretrainItem*>& batch,
                         const PretrainConfig& cfg, Rng& mask_rng) {
  if (batch.empty()) throw InvalidInput("pretrain_step: empty batch");
  ad::Tape<S> tape;
  LossReport report;
  std::vector<ad::Var<S>> totals;
  totals.reserve(batch.size());
  const bool skip_rec = cfg.lambda_rec == 0.0;
  const bool skip_affdiv = cfg.lambda_aff == 0.0 && cfg.lambda_div == 0.0;

  for (const PretrainItem* item : batch) {
    std::vector<ad::Var<S>> parts;
    double item_rec = 0.0, item_aff = 0.0, item_div = 0.0;

    if (!skip_rec) {
      const EncodeResult<S> masked = model.encode_masked(tape, item->cloud, item->patches, mask_rng);
      ad::Var<S> rec = loss_rec_var(
          masked.predicted_centers,
          ad::constant(tape, ad::MatS<S>(masked.masked_centers.template cast<S>())));
      item_rec = static_cast<double>(rec.scalar());
      detail::check_finite_loss(item_rec, "L_rec", item->object_id);
      parts.push_back(ad::scale(rec, static_cast<S>(cfg.lambda_rec)));
    }
    if (!skip_affdiv) {
      const EncodeResult<S> full = model.encode(tape, item->cloud, item->patches);
      if (cfg.lambda_aff != 0.0) {
        ad::Var<S> aff = loss_aff_var(
            full.tokens, ad::constant(tape, ad::MatS<S>(item->teacher_affinity.template cast<S>())));
        item_aff = static_cast<double>(aff.scalar());
        detail::check_finite_loss(item_aff, "L_aff", item->object_id);
        parts.push_back(ad::scale(aff, static_cast<S>(cfg.lambda_aff)));
      }
      if (cfg.lambda_div != 0.0) {
        ad::Var<S> div = loss_div_var(full.tokens);
        item_div = static_cast<double>(div.scalar());
        detail::check_finite_loss(item_div, "L_div", item->object_id);
        parts.push_back(ad::scale(div, static_cast<S>(cfg.lambda_div)));
      }
    }

    report.rec += item_rec;
    report.aff += item_aff;
    report.div += item_div;
    report.total += cfg.lambda_rec * item_rec + cfg.lambda_aff * item_aff + cfg.lambda_div * item_div;

    if (!parts.empty()) {
      ad::Var<S> item_total = parts[0];
      for (size_t i = 1; i < parts.size(); ++i) item_total = ad::add(item_total, parts[i]);
      totals.push_back(item_total);
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  report.rec *= inv;
  report.aff *= inv;
  report.div *= inv;
  report.total *= inv;

  if (!totals.empty()) {
    ad::Var<S> batch_total = totals[0];
    for (size_t i = 1; i < totals.size(); ++i) batch_total = ad::add(batch_total, totals[i]);
    tape.backward(ad::scale(batch_total, static_cast<S>(inv)).node);
  }
  return report;
}

struct EpochRecord {
  int epoch = 0;
  LossReport losses;
  double lr = 0.0;
};

/// Full Stage 2 loop: seeded shuffling, cosine schedule with warmup, AdamW,
/// per-epoch loss records, and a per-epoch affinity-invariant spot check.
template <class S>
std::vector<EpochRecord> pretrain_run(Backbone<S>& model, const std::vector<PretrainItem>& items,
                                      const PretrainConfig& cfg,
                                      const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (items.empty()) throw InvalidInput("pretrain: no training objects");

  std::vector<typename optim::AdamW<S>::NodeP> all;
  for (const std::string& name : model.params().names()) all.push_back(model.params().node(name));
  optim::AdamW<S> opt({{all, 1.0}}, 0.9, 0.999, 1e-8, cfg.weight_decay);

  Rng root(cfg.seed, fnv1a64(std::string("pretrain")));
  std::vector<EpochRecord> history;
  history.reserve(static_cast<size_t>(cfg.epochs));

  std::vector<size_t> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.fork(0x5a5a0000u + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    Rng mask_rng = root.fork(0x3c3c0000u + static_cast<uint64_t>(epoch));

    const double lr = optim::cosine_warmup_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs);
    LossReport epoch_mean;
    int steps = 0;

    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const PretrainItem*> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size)); ++i)
        batch.push_back(&items[order[i]]);
      opt.zero_grad();
      const LossReport r = pretrain_step(model, batch, cfg, mask_rng);
      opt.step(lr);
      epoch_mean.rec += r.rec;
      epoch_mean.aff += r.aff;
      epoch_mean.div += r.div;
      epoch_mean.total += r.total;
      ++steps;
    }
    epoch_mean.rec /= steps;
    epoch_mean.aff /= steps;
    epoch_mean.div /= steps;
    epoch_mean.total /= steps;

    {  // affinity invariants spot check on the first object
      ad::Tape<S> probe;
      const EncodeResult<S> full = model.encode(probe, items[0].cloud, items[0].patches);
      AffinityMatrix a;
      a.values = full.tokens.value().template cast<double>();
      a = affinity(a.values);
      if (!affinity_invariants_ok(a))
        throw TrainingAborted("pretrain: affinity invariants violated at epoch " +
                              std::to_string(epoch) + " for object '" + items[0].object_id + "'");
    }

    EpochRecord rec{epoch, epoch_mean, lr};
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace affseg
