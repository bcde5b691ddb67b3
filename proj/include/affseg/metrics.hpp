#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "affseg/common.hpp"

namespace affseg {

/// IoU of the 0.5-binarized maps; an empty union counts as perfect agreement
/// (flagged via *empty_union when provided).
inline double aiou(const Vec& pred_scores, const Vec& gt, bool* empty_union = nullptr) {
  if (pred_scores.size() != gt.size()) throw InvalidInput("aiou: length mismatch");
  long inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < pred_scores.size(); ++i) {
    const bool p = pred_scores[i] >= 0.5, g = gt[i] >= 0.5;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (empty_union) *empty_union = (uni == 0);
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Rank-sum AUC with ties counted 1/2: the probability that a random positive
/// outranks a random negative. Single-class ground truth leaves the metric
/// undefined: *defined is set false and 0 returned.
inline double auc(const Vec& pred_scores, const Vec& gt, bool* defined = nullptr) {
  if (pred_scores.size() != gt.size()) throw InvalidInput("auc: length mismatch");
  const Eigen::Index n = pred_scores.size();
  long n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += gt[i] >= 0.5 ? 1 : 0;
  const long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    if (defined) *defined = false;
    return 0.0;
  }
  if (defined) *defined = true;

  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(),
            [&](Eigen::Index a, Eigen::Index b) { return pred_scores[a] < pred_scores[b]; });

  double pos_rank_sum = 0.0;
  size_t at = 0;
  while (at < idx.size()) {
    size_t end = at;
    while (end + 1 < idx.size() && pred_scores[idx[end + 1]] == pred_scores[idx[at]]) ++end;
    const double avg_rank = 0.5 * (static_cast<double>(at + 1) + static_cast<double>(end + 1));
    for (size_t i = at; i <= end; ++i)
      if (gt[idx[i]] >= 0.5) pos_rank_sum += avg_rank;
    at = end + 1;
  }
  return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Histogram intersection of the sum-normalized maps; a zero-sum side gives 0.
inline double sim(const Vec& pred_scores, const Vec& gt) {
  if (pred_scores.size() != gt.size()) throw InvalidInput("sim: length mismatch");
  if (pred_scores.minCoeff() < 0 || gt.minCoeff() < 0)
    throw InvalidInput("sim: inputs must be nonnegative");
  const double ps = pred_scores.sum(), gs = gt.sum();
  if (ps <= 0 || gs <= 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < pred_scores.size(); ++i)
    total += std::min(pred_scores[i] / ps, gt[i] / gs);
  return total;
}

inline double mae(const Vec& pred_scores, const Vec& gt) {
  if (pred_scores.size() != gt.size()) throw InvalidInput("mae: length mismatch");
  if (pred_scores.size() == 0) throw InvalidInput("mae: empty input");
  return (pred_scores - gt).cwiseAbs().mean();
}

// ---- aggregation ----------------------------------------------------------------

struct PairMetrics {
  std::string object_id;
  std::string prompt_id;
  double aiou = 0.0, auc = 0.0, sim = 0.0, mae = 0.0;
  bool auc_defined = true;
  bool empty_union = false;
};

struct MetricsReport {
  double aiou = 0.0, auc = 0.0, sim = 0.0, mae = 0.0;
  long pairs = 0;
  long auc_skipped = 0;
  long empty_union = 0;
  std::vector<PairMetrics> per_object;
};

inline PairMetrics evaluate_pair(const std::string& object_id, const std::string& prompt_id,
                                 const Vec& pred_scores, const Vec& gt) {
  PairMetrics pm;
  pm.object_id = object_id;
  pm.prompt_id = prompt_id;
  pm.aiou = aiou(pred_scores, gt, &pm.empty_union);
  pm.auc = auc(pred_scores, gt, &pm.auc_defined);
  pm.sim = sim(pred_scores, gt);
  pm.mae = mae(pred_scores, gt);
  return pm;
}

/// Per-(object, prompt) metrics averaged into the aggregate; AUC averages only
/// the defined pairs.
inline MetricsReport aggregate_metrics(std::vector<PairMetrics> rows) {
  MetricsReport rep;
  rep.per_object = std::move(rows);
  long auc_count = 0;
  for (const PairMetrics& pm : rep.per_object) {
    rep.aiou += pm.aiou;
    rep.sim += pm.sim;
    rep.mae += pm.mae;
    ++rep.pairs;
    if (pm.auc_defined) {
      rep.auc += pm.auc;
      ++auc_count;
    } else {
      ++rep.auc_skipped;
    }
    if (pm.empty_union) ++rep.empty_union;
  }
  if (rep.pairs > 0) {
    rep.aiou /= rep.pairs;
    rep.sim /= rep.pairs;
    rep.mae /= rep.pairs;
  }
  if (auc_count > 0) rep.auc /= auc_count;
  return rep;
}

namespace detail {
inline std::string fmt9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}
}  // namespace detail

/// Deterministic key=value report; identical inputs yield identical bytes.
inline std::string format_report(const MetricsReport& rep) {
  std::string out = "affseg-report/1\n";
  out += "aggregate.pairs=" + std::to_string(rep.pairs) + "\n";
  out += "aggregate.aiou=" + detail::fmt9(rep.aiou) + "\n";
  out += "aggregate.auc=" + detail::fmt9(rep.auc) + "\n";
  out += "aggregate.sim=" + detail::fmt9(rep.sim) + "\n";
  out += "aggregate.mae=" + detail::fmt9(rep.mae) + "\n";
  out += "aggregate.auc_skipped=" + std::to_string(rep.auc_skipped) + "\n";
  out += "aggregate.empty_union=" + std::to_string(rep.empty_union) + "\n";
  for (const PairMetrics& pm : rep.per_object) {
    out += "pair object=" + pm.object_id + " prompt=" + pm.prompt_id +
           " aiou=" + detail::fmt9(pm.aiou) +
           " auc=" + (pm.auc_defined ? detail::fmt9(pm.auc) : std::string("skipped")) +
           " sim=" + detail::fmt9(pm.sim) + " mae=" + detail::fmt9(pm.mae);
    if (pm.empty_union) out += " empty_union=1";
    out += "\n";
  }
  return out;
}

}  // namespace affseg
