#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/backbone.hpp"
#include "affseg/cmat.hpp"
#include "affseg/common.hpp"
#include "affseg/prompts.hpp"

namespace affseg {

struct CastConfig {
  int fusion_depth = 6;  // L
  int shared_dim = 384;
  int heads = 6;
  int fp_neighbors = 3;
  double lambda_focal = 1.0;
  double lambda_dice = 1.0;
  int text_dim = 32;
  int image_dim = 16;
  bool text_enabled = true;
  bool image_enabled = true;

  static CastConfig paper() { return {}; }
  static CastConfig toy() {
    CastConfig c;
    c.fusion_depth = 2;
    c.shared_dim = 64;
    c.heads = 4;
    return c;
  }

  void validate() const {
    if (fusion_depth < 1 || shared_dim < 1 || heads < 1 || fp_neighbors < 1)
      throw InvalidConfig("cast config: counts must be positive");
    if (shared_dim % heads != 0)
      throw InvalidConfig("cast config: shared_dim must be divisible by heads");
    if (lambda_focal < 0 || lambda_dice < 0)
      throw InvalidConfig("cast config: loss weights must be >= 0");
    if (text_dim < 1 || image_dim < 1)
      throw InvalidConfig("cast config: prompt dims must be positive");
  }

  nlohmann::json to_json() const {
    return {{"fusion_depth", fusion_depth}, {"shared_dim", shared_dim},
            {"heads", heads},               {"fp_neighbors", fp_neighbors},
            {"lambda_focal", lambda_focal}, {"lambda_dice", lambda_dice},
            {"text_dim", text_dim},         {"image_dim", image_dim},
            {"text_enabled", text_enabled}, {"image_enabled", image_enabled}};
  }
  static CastConfig from_json(const nlohmann::json& j) {
    CastConfig c;
    c.fusion_depth = j.at("fusion_depth").get<int>();
    c.shared_dim = j.at("shared_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.fp_neighbors = j.at("fp_neighbors").get<int>();
    c.lambda_focal = j.at("lambda_focal").get<double>();
    c.lambda_dice = j.at("lambda_dice").get<double>();
    c.text_dim = j.at("text_dim").get<int>();
    c.image_dim = j.at("image_dim").get<int>();
    c.text_enabled = j.at("text_enabled").get<bool>();
    c.image_enabled = j.at("image_enabled").get<bool>();
    c.validate();
    return c;
  }
};

// ---- feature propagation -----------------------------------------------------

/// N x M inverse-distance weights onto the fp_neighbors nearest patch centers
/// (weights 1/(d + 1e-8), normalized per point; ties resolve to lower index).
inline Mat propagation_weights(const PatchSet& patches, const PointCloud& cloud,
                               int fp_neighbors) {
  if (fp_neighbors < 1) throw InvalidInput("feature_propagation: fp_neighbors must be >= 1");
  const Eigen::Index n = cloud.points.rows();
  const Eigen::Index m = patches.centers.rows();
  const int k = std::min<int>(fp_neighbors, static_cast<int>(m));
  Mat w = Mat::Zero(n, m);
  std::vector<std::pair<double, int>> dist(static_cast<size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j)
      dist[static_cast<size_t>(j)] = {(cloud.points.row(i) - patches.centers.row(j)).norm(),
                                      static_cast<int>(j)};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double total = 0.0;
    for (int t = 0; t < k; ++t) total += 1.0 / (dist[static_cast<size_t>(t)].first + 1e-8);
    for (int t = 0; t < k; ++t)
      w(i, dist[static_cast<size_t>(t)].second) =
          1.0 / (dist[static_cast<size_t>(t)].first + 1e-8) / total;
  }
  return w;
}

/// Upsamples M patch features to all N points by inverse-distance-weighted
/// interpolation over the fp_neighbors nearest patch centers.
inline Mat feature_propagation(const Mat& patch_features, const PatchSet& patches,
                               const PointCloud& cloud, int fp_neighbors = 3) {
  if (patch_features.rows() != patches.centers.rows())
    throw InvalidInput("feature_propagation: features disagree with patch count");
  return propagation_weights(patches, cloud, fp_neighbors) * patch_features;
}

// ---- segmentation losses -------------------------------------------------------

inline constexpr double kFocalGamma = 2.0;
inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kDiceSmooth = 1.0;

namespace detail {
inline double stable_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double softplus_d(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace detail

/// Focal loss, gamma=2, alpha=0.25: mean over points of -alpha_t (1-p_t)^2 log p_t.
/// Soft targets are binarized at 0.5.
inline double loss_focal(const Vec& logits, const Vec& target) {
  if (logits.size() == 0) throw InvalidInput("loss_focal: empty input");
  if (logits.size() != target.size()) throw InvalidInput("loss_focal: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = detail::stable_sigmoid(logits[i]);
    if (target[i] >= 0.5)
      total += kFocalAlpha * (1.0 - p) * (1.0 - p) * detail::softplus_d(-logits[i]);
    else
      total += (1.0 - kFocalAlpha) * p * p * detail::softplus_d(logits[i]);
  }
  return total / static_cast<double>(logits.size());
}

/// Dice loss over soft scores and soft targets, smoothing s=1.
inline double loss_dice(const Vec& scores, const Vec& target) {
  if (scores.size() == 0) throw InvalidInput("loss_dice: empty input");
  if (scores.size() != target.size()) throw InvalidInput("loss_dice: length mismatch");
  const double inter = scores.cwiseProduct(target).sum();
  return 1.0 - (2.0 * inter + kDiceSmooth) / (scores.sum() + target.sum() + kDiceSmooth);
}

template <class S>
ad::Var<S> loss_focal_var(const ad::Var<S>& logits, const Vec& target) {
  if (logits.value().size() == 0) throw InvalidInput("loss_focal: empty input");
  if (logits.rows() != target.size() || logits.cols() != 1)
    throw InvalidInput("loss_focal: logits must be N x 1 aligned with targets");
  ad::Tape<S>& tape = *logits.tape;
  ad::MatS<S> t(target.size(), 1);
  for (Eigen::Index i = 0; i < target.size(); ++i) t(i, 0) = target[i] >= 0.5 ? S(1) : S(0);
  const ad::Var<S> tv = ad::constant(tape, t);
  const ad::Var<S> one_minus_t = ad::constant(tape, ad::MatS<S>(ad::MatS<S>::Ones(t.rows(), 1) - t));
  const ad::Var<S> p = ad::sigmoid(logits);
  const ad::Var<S> one = ad::constant(tape, ad::MatS<S>(ad::MatS<S>::Ones(t.rows(), 1)));
  const ad::Var<S> pos = ad::scale(
      ad::cmul(ad::square(ad::sub(one, p)), ad::softplus(ad::neg(logits))), S(kFocalAlpha));
  const ad::Var<S> negt = ad::scale(ad::cmul(ad::square(p), ad::softplus(logits)),
                                    S(1.0 - kFocalAlpha));
  return ad::mean(ad::add(ad::cmul(tv, pos), ad::cmul(one_minus_t, negt)));
}

template <class S>
ad::Var<S> loss_dice_var(const ad::Var<S>& scores, const Vec& target) {
  if (scores.value().size() == 0) throw InvalidInput("loss_dice: empty input");
  if (scores.rows() != target.size() || scores.cols() != 1)
    throw InvalidInput("loss_dice: scores must be N x 1 aligned with targets");
  ad::Tape<S>& tape = *scores.tape;
  ad::MatS<S> g(target.size(), 1);
  for (Eigen::Index i = 0; i < target.size(); ++i) g(i, 0) = static_cast<S>(target[i]);
  const ad::Var<S> gv = ad::constant(tape, g);
  const ad::Var<S> num =
      ad::add_scalar(ad::scale(ad::sum(ad::cmul(scores, gv)), S(2)), S(kDiceSmooth));
  const ad::Var<S> den =
      ad::add_scalar(ad::add(ad::sum(scores), ad::sum(gv)), S(kDiceSmooth));
  return ad::add_scalar(ad::neg(ad::cdiv(num, den)), S(1));
}

// ---- model ---------------------------------------------------------------------

struct SegmentationMask {
  Vec logits;
  Vec scores;  // sigmoid of logits
};

/// Cross-modal Affordance Segmentation Transformer: projects geometric patch
/// tokens and prompt features into a shared space with modality embeddings,
/// fuses them with L self-attention blocks, propagates patch features to
/// points, and scores every point with a small head.
template <class S>
class CastModel {
 public:
  CastModel(BackboneConfig bcfg, CastConfig ccfg, uint64_t seed = 1)
      : backbone_(bcfg, seed), ccfg_(ccfg) {
    ccfg_.validate();
    Rng rng(seed, fnv1a64(std::string("cast-init")));
    proj3d_ = nn::Linear<S>::create(cast_, "cast.proj3d", bcfg.embed_dim, ccfg_.shared_dim, rng);
    cast_.add("cast.epoint", nn::init::trunc_normal<S>(rng, 1, ccfg_.shared_dim));
    if (ccfg_.text_enabled) {
      projtext_ = nn::Linear<S>::create(cast_, "cast.projtext", ccfg_.text_dim, ccfg_.shared_dim, rng);
      cast_.add("cast.etext", nn::init::trunc_normal<S>(rng, 1, ccfg_.shared_dim));
    }
    if (ccfg_.image_enabled) {
      projimg_ = nn::Linear<S>::create(cast_, "cast.projimg", ccfg_.image_dim, ccfg_.shared_dim, rng);
      cast_.add("cast.eimg", nn::init::trunc_normal<S>(rng, 1, ccfg_.shared_dim));
    }
    for (int i = 0; i < ccfg_.fusion_depth; ++i)
      fuse_.push_back(nn::TransformerBlock<S>::create(cast_, "cast.fuse" + std::to_string(i),
                                                      ccfg_.shared_dim, ccfg_.heads, rng));
    lnf_ = nn::LayerNorm<S>::create(cast_, "cast.lnf", ccfg_.shared_dim);
    head_ = nn::Mlp<S>::create(cast_, "cast.head", ccfg_.shared_dim, ccfg_.shared_dim, 1, rng);
  }

  Backbone<S>& backbone() { return backbone_; }
  const Backbone<S>& backbone() const { return backbone_; }
  nn::Params<S>& cast_params() { return cast_; }
  const nn::Params<S>& cast_params() const { return cast_; }
  const CastConfig& config() const { return ccfg_; }

  void check_prompt_supported(const Prompt& prompt) const {
    if (prompt.has_text() && !ccfg_.text_enabled)
      throw InvalidPrompt("model was configured without text prompt support");
    if (prompt.has_image() && !ccfg_.image_enabled)
      throw InvalidPrompt("model was configured without image prompt support");
    if (prompt.has_text() && prompt.text_feature.size() != ccfg_.text_dim)
      throw InvalidPrompt("text feature dim disagrees with model configuration");
    if (prompt.has_image() && prompt.image_feature.size() != ccfg_.image_dim)
      throw InvalidPrompt("image feature dim disagrees with model configuration");
  }

  /// Eq. 7-9: per-modality projection to shared_dim plus learned modality
  /// embeddings; prompt tokens (text first, then image) precede patch tokens.
  ad::Var<S> project_tokens(ad::Tape<S>& tape, const ad::Var<S>& patch_tokens,
                            const Prompt& prompt) const {
    check_prompt_supported(prompt);
    std::vector<ad::Var<S>> seq;
    if (prompt.has_text()) {
      ad::MatS<S> f = prompt.text_feature.transpose().template cast<S>();
      seq.push_back(ad::add(projtext_(tape, cast_, ad::constant(tape, f)),
                            cast_.var(tape, "cast.etext")));
    }
    if (prompt.has_image()) {
      ad::MatS<S> f = prompt.image_feature.transpose().template cast<S>();
      seq.push_back(ad::add(projimg_(tape, cast_, ad::constant(tape, f)),
                            cast_.var(tape, "cast.eimg")));
    }
    seq.push_back(ad::add_rowvec(proj3d_(tape, cast_, patch_tokens),
                                 cast_.var(tape, "cast.epoint")));
    return ad::vconcat(seq);
  }

  /// L pre-norm self-attention blocks over the joint sequence.
  ad::Var<S> fuse(ad::Tape<S>& tape, const ad::Var<S>& sequence) const {
    ad::Var<S> x = sequence;
    for (const auto& blk : fuse_) x = blk(tape, cast_, x);
    return lnf_(tape, cast_, x);
  }

  /// Full differentiable forward: backbone -> project -> fuse -> propagate ->
  /// head. Returns N x 1 logits.
  ad::Var<S> forward_logits(ad::Tape<S>& tape, const PointCloud& cloud, const PatchSet& patches,
                            const Mat& prop_weights, const Prompt& prompt) const {
    const EncodeResult<S> enc = backbone_.encode(tape, cloud, patches);
    const ad::Var<S> seq = project_tokens(tape, enc.tokens, prompt);
    const ad::Var<S> fused = fuse(tape, seq);
    const Eigen::Index n_prompt = prompt.token_count();
    const Eigen::Index m = patches.centers.rows();
    if (fused.rows() != n_prompt + m)
      throw InvalidInput("cast: fusion changed the token count");
    std::vector<Eigen::Index> patch_rows(static_cast<size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) patch_rows[static_cast<size_t>(j)] = n_prompt + j;
    const ad::Var<S> patch_feats = ad::gather_rows(fused, patch_rows);
    const ad::Var<S> per_point =
        ad::matmul(ad::constant(tape, ad::MatS<S>(prop_weights.template cast<S>())), patch_feats);
    return head_(tape, cast_, per_point);
  }

  /// Inference entry point: normalizes the cloud, builds patches with the
  /// pinned FPS start, and scores every point for the prompt.
  SegmentationMask segment(const PointCloud& raw_cloud, const Prompt& prompt,
                           int fps_start = 0) const {
    PointCloud cloud = normalize_cloud(raw_cloud);
    const PatchSet patches =
        build_patches(cloud, backbone_.config().patches, backbone_.config().group_size, fps_start);
    const Mat w = propagation_weights(patches, cloud, ccfg_.fp_neighbors);
    ad::Tape<S> tape;
    const ad::Var<S> logits = forward_logits(tape, cloud, patches, w, prompt);
    SegmentationMask mask;
    mask.logits = logits.value().template cast<double>();
    mask.scores = mask.logits.unaryExpr([](double z) { return detail::stable_sigmoid(z); });
    if (!mask.logits.allFinite()) throw TrainingAborted("segment: non-finite logits");
    return mask;
  }

 private:
  Backbone<S> backbone_;
  nn::Params<S> cast_;
  CastConfig ccfg_;
  nn::Linear<S> proj3d_, projtext_, projimg_;
  std::vector<nn::TransformerBlock<S>> fuse_;
  nn::LayerNorm<S> lnf_;
  nn::Mlp<S> head_;
};

// ---- fine-tuning -----------------------------------------------------------------

struct FinetuneConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr_backbone = 1e-5;
  double lr_new = 1e-4;
  double lambda_focal = 1.0;
  double lambda_dice = 1.0;
  double weight_decay = 0.05;
  uint64_t seed = 1;

  static FinetuneConfig paper() { return {}; }
  static FinetuneConfig toy() {
    FinetuneConfig c;
    c.epochs = 60;
    c.batch_size = 8;
    return c;
  }

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw InvalidConfig("finetune config: counts must be positive");
    if (lr_backbone < 0 || lr_new <= 0) throw InvalidConfig("finetune config: bad learning rates");
    if (lambda_focal < 0 || lambda_dice < 0)
      throw InvalidConfig("finetune config: loss weights must be >= 0");
  }
};

/// One (object, prompt) training example with cached geometry.
struct FinetuneItem {
  std::string object_id;
  std::string prompt_id;
  PointCloud cloud;
  PatchSet patches;
  Mat prop_weights;  // N x M
  Prompt prompt;
  Vec target;        // per-point affordance heatmap

  static FinetuneItem prepare(std::string object_id, std::string prompt_id, PointCloud cloud,
                              Prompt prompt, Vec target, const BackboneConfig& bcfg,
                              const CastConfig& ccfg) {
    FinetuneItem item;
    item.object_id = std::move(object_id);
    item.prompt_id = std::move(prompt_id);
    item.patches = build_patches(cloud, bcfg.patches, bcfg.group_size);
    item.prop_weights = propagation_weights(item.patches, cloud, ccfg.fp_neighbors);
    item.cloud = std::move(cloud);
    item.prompt = std::move(prompt);
    item.target = std::move(target);
    return item;
  }
};

struct SegLossReport {
  double focal = 0.0, dice = 0.0, total = 0.0;
};

template <class S>
SegLossReport finetune_step(CastModel<S>& model, const std::vector<const FinetuneItem*>& batch,
                            const FinetuneConfig& cfg) {
  if (batch.empty()) throw InvalidInput("finetune_step: empty batch");
  ad::Tape<S> tape;
  SegLossReport report;
  std::vector<ad::Var<S>> totals;
  for (const FinetuneItem* item : batch) {
    const ad::Var<S> logits =
        model.forward_logits(tape, item->cloud, item->patches, item->prop_weights, item->prompt);
    std::vector<ad::Var<S>> parts;
    if (cfg.lambda_focal != 0.0) {
      const ad::Var<S> focal = loss_focal_var(logits, item->target);
      const double v = static_cast<double>(focal.scalar());
      if (!std::isfinite(v))
        throw TrainingAborted("finetune: non-finite L_focal for object '" + item->object_id +
                              "' prompt '" + item->prompt_id + "'");
      report.focal += v;
      parts.push_back(ad::scale(focal, static_cast<S>(cfg.lambda_focal)));
    }
    if (cfg.lambda_dice != 0.0) {
      const ad::Var<S> dice = loss_dice_var(ad::sigmoid(logits), item->target);
      const double v = static_cast<double>(dice.scalar());
      if (!std::isfinite(v))
        throw TrainingAborted("finetune: non-finite L_dice for object '" + item->object_id +
                              "' prompt '" + item->prompt_id + "'");
      report.dice += v;
      parts.push_back(ad::scale(dice, static_cast<S>(cfg.lambda_dice)));
    }
    if (!parts.empty()) {
      ad::Var<S> total = parts[0];
      for (size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
      totals.push_back(total);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  report.focal *= inv;
  report.dice *= inv;
  report.total = cfg.lambda_focal * report.focal + cfg.lambda_dice * report.dice;
  if (!totals.empty()) {
    ad::Var<S> batch_total = totals[0];
    for (size_t i = 1; i < totals.size(); ++i) batch_total = ad::add(batch_total, totals[i]);
    tape.backward(ad::scale(batch_total, static_cast<S>(inv)).node);
  }
  return report;
}

struct FinetuneEpochRecord {
  int epoch = 0;
  SegLossReport losses;
};

/// Stage 3 loop with the paper's two-group differential learning rate:
/// backbone parameters at lr_backbone, newly initialized CAST modules and the
/// head at lr_new.
template <class S>
std::vector<FinetuneEpochRecord> finetune_run(
    CastModel<S>& model, const std::vector<FinetuneItem>& items, const FinetuneConfig& cfg,
    const std::function<void(const FinetuneEpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (items.empty()) throw InvalidInput("finetune: no training examples");

  std::vector<typename optim::AdamW<S>::NodeP> backbone_group, new_group;
  for (const std::string& name : model.backbone().params().names())
    backbone_group.push_back(model.backbone().params().node(name));
  for (const std::string& name : model.cast_params().names())
    new_group.push_back(model.cast_params().node(name));
  optim::AdamW<S> opt({{backbone_group, cfg.lr_backbone / cfg.lr_new}, {new_group, 1.0}}, 0.9,
                      0.999, 1e-8, cfg.weight_decay);

  Rng root(cfg.seed, fnv1a64(std::string("finetune")));
  std::vector<size_t> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<FinetuneEpochRecord> history;
  history.reserve(static_cast<size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.fork(0x77110000u + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    SegLossReport epoch_mean;
    int steps = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const FinetuneItem*> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size)); ++i)
        batch.push_back(&items[order[i]]);
      opt.zero_grad();
      const SegLossReport r = finetune_step(model, batch, cfg);
      opt.step(cfg.lr_new);
      epoch_mean.focal += r.focal;
      epoch_mean.dice += r.dice;
      epoch_mean.total += r.total;
      ++steps;
    }
    epoch_mean.focal /= steps;
    epoch_mean.dice /= steps;
    epoch_mean.total /= steps;
    FinetuneEpochRecord rec{epoch, epoch_mean};
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

// ---- checkpointing ----------------------------------------------------------------

template <class S>
void save_cast_checkpoint(const CastModel<S>& model, const std::string& path) {
  ArrayFile f;
  nlohmann::json meta{{"format", kCheckpointFormat},
                      {"kind", "cast"},
                      {"library_version", kVersion},
                      {"backbone_config", model.backbone().config().to_json()},
                      {"cast_config", model.config().to_json()}};
  f.put_string("__meta__", meta.dump());
  model.backbone().params().save_into(f);
  model.cast_params().save_into(f);
  f.save(path);
}

template <class S>
CastModel<S> load_cast_checkpoint(const std::string& path) {
  ArrayFile f = ArrayFile::load(path);
  const auto meta = read_checkpoint_meta(f, path, "cast");
  CastModel<S> model(BackboneConfig::from_json(meta.at("backbone_config")),
                     CastConfig::from_json(meta.at("cast_config")));
  model.backbone().params().load_from(f);
  model.cast_params().load_from(f);
  return model;
}

}  // namespace affseg
