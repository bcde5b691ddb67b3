#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/array_file.hpp"
#include "affseg/autograd.hpp"
#include "affseg/common.hpp"
#include "affseg/nn.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/rng.hpp"
#include "affseg/sampling.hpp"

namespace affseg {

struct BackboneConfig {
  int depth = 12;
  int embed_dim = 384;
  int heads = 6;
  int patches = 64;      // M
  int group_size = 32;   // k
  double mask_ratio = 0.6;

  static BackboneConfig paper() { return {}; }
  static BackboneConfig toy() {
    BackboneConfig c;
    c.depth = 4;
    c.embed_dim = 64;
    c.heads = 4;
    c.patches = 16;
    c.group_size = 32;
    return c;
  }

  void validate() const {
    if (depth < 1 || embed_dim < 1 || heads < 1 || patches < 1 || group_size < 1)
      throw InvalidConfig("backbone config: counts must be positive");
    if (embed_dim % heads != 0)
      throw InvalidConfig("backbone config: embed_dim must be divisible by heads");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
      throw InvalidConfig("backbone config: mask_ratio must lie in [0, 1)");
  }

  int masked_count() const { return static_cast<int>(std::lround(mask_ratio * patches)); }

  nlohmann::json to_json() const {
    return {{"depth", depth},         {"embed_dim", embed_dim}, {"heads", heads},
            {"patches", patches},     {"group_size", group_size},
            {"mask_ratio", mask_ratio}};
  }
  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.depth = j.at("depth").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.patches = j.at("patches").get<int>();
    c.group_size = j.at("group_size").get<int>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.validate();
    return c;
  }
};

/// Result of one encoder pass. In masked mode `tokens` holds only the visible
/// patch rows (in visible_index order) and the decoder's center predictions
/// for the masked patches are populated.
template <class S>
struct EncodeResult {
  ad::Var<S> tokens;
  std::vector<int> visible_index;   // all M patches in unmasked mode
  std::vector<int> masked_index;    // empty in unmasked mode
  ad::Var<S> predicted_centers;     // (#masked) x 3, masked mode only
  MatX3 masked_centers;             // regression targets, masked mode only
  bool masked = false;
};

/// PointMAE-style student encoder: shared per-point network + max-pool per
/// patch, learned positional encoding of patch centers, pre-norm transformer,
/// and a lightweight per-token decoder that regresses masked patch centers.
template <class S>
class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg, uint64_t seed = 1)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed, fnv1a64(std::string("backbone-init")));
    embed_ = nn::Mlp<S>::create(params_, "backbone.embed", 3, cfg_.embed_dim, cfg_.embed_dim, rng);
    pos_ = nn::Mlp<S>::create(params_, "backbone.pos", 3, cfg_.embed_dim, cfg_.embed_dim, rng);
    blocks_.reserve(static_cast<size_t>(cfg_.depth));
    for (int i = 0; i < cfg_.depth; ++i)
      blocks_.push_back(nn::TransformerBlock<S>::create(
          params_, "backbone.blk" + std::to_string(i), cfg_.embed_dim, cfg_.heads, rng));
    lnf_ = nn::LayerNorm<S>::create(params_, "backbone.lnf", cfg_.embed_dim);
    params_.add("backbone.mask_token", nn::init::trunc_normal<S>(rng, 1, cfg_.embed_dim));
    maskpos_ = nn::Mlp<S>::create(params_, "backbone.maskpos", 3, cfg_.embed_dim, cfg_.embed_dim, rng);
    dec_ = nn::Mlp<S>::create(params_, "backbone.dec", cfg_.embed_dim, cfg_.embed_dim, 3, rng);
  }

  const BackboneConfig& config() const { return cfg_; }
  nn::Params<S>& params() { return params_; }
  const nn::Params<S>& params() const { return params_; }

  /// Pre-positional patch tokens: members re-centered about the patch center,
  /// shared per-point network, column-wise max-pool. Translation invariant.
  ad::Var<S> embed_patches(ad::Tape<S>& tape, const PointCloud& cloud,
                           const PatchSet& patches) const {
    std::vector<ad::Var<S>> tokens;
    tokens.reserve(patches.member_indices.size());
    for (size_t j = 0; j < patches.member_indices.size(); ++j) {
      const auto& members = patches.member_indices[j];
      ad::MatS<S> local(static_cast<Eigen::Index>(members.size()), 3);
      for (size_t i = 0; i < members.size(); ++i)
        local.row(static_cast<Eigen::Index>(i)) =
            (cloud.points.row(members[i]) - patches.centers.row(static_cast<Eigen::Index>(j)))
                .template cast<S>();
      ad::Var<S> per_point = embed_(tape, params_, ad::constant(tape, std::move(local)));
      tokens.push_back(ad::max_rows(per_point));
    }
    return ad::vconcat(tokens);
  }

  ad::Var<S> positional(ad::Tape<S>& tape, const MatX3& centers) const {
    return pos_(tape, params_, ad::constant(tape, ad::MatS<S>(centers.template cast<S>())));
  }

  /// Unmasked forward over all M patches.
  EncodeResult<S> encode(ad::Tape<S>& tape, const PointCloud& cloud,
                         const PatchSet& patches) const {
    EncodeResult<S> out;
    out.masked = false;
    out.visible_index.resize(patches.member_indices.size());
    for (size_t i = 0; i < out.visible_index.size(); ++i) out.visible_index[i] = static_cast<int>(i);
    ad::Var<S> x = ad::add(embed_patches(tape, cloud, patches), positional(tape, patches.centers));
    for (const auto& blk : blocks_) x = blk(tape, params_, x);
    out.tokens = lnf_(tape, params_, x);
    return out;
  }

  /// Masked forward: round(mask_ratio * M) patches are hidden (chosen
  /// uniformly from `mask_rng`), the encoder sees only the visible tokens, and
  /// the decoder predicts the hidden patch centers. mask_ratio = 0 reduces to
  /// the unmasked forward.
  EncodeResult<S> encode_masked(ad::Tape<S>& tape, const PointCloud& cloud,
                                const PatchSet& patches, Rng& mask_rng) const {
    const int m = static_cast<int>(patches.member_indices.size());
    const int n_mask = static_cast<int>(std::lround(cfg_.mask_ratio * m));
    if (n_mask >= m)
      throw InvalidConfig("backbone: mask_ratio leaves no visible patches");
    if (n_mask == 0) return encode(tape, cloud, patches);

    std::vector<int> perm(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) perm[static_cast<size_t>(i)] = i;
    for (int i = m - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)],
                perm[mask_rng.uniform_index(static_cast<size_t>(i) + 1)]);

    EncodeResult<S> out;
    out.masked = true;
    out.masked_index.assign(perm.begin(), perm.begin() + n_mask);
    out.visible_index.assign(perm.begin() + n_mask, perm.end());
    std::sort(out.masked_index.begin(), out.masked_index.end());
    std::sort(out.visible_index.begin(), out.visible_index.end());

    ad::Var<S> x = ad::add(embed_patches(tape, cloud, patches), positional(tape, patches.centers));
    std::vector<Eigen::Index> vis(out.visible_index.begin(), out.visible_index.end());
    ad::Var<S> xv = ad::gather_rows(x, vis);
    for (const auto& blk : blocks_) xv = blk(tape, params_, xv);
    out.tokens = lnf_(tape, params_, xv);

    out.masked_centers.resize(n_mask, 3);
    for (int i = 0; i < n_mask; ++i)
      out.masked_centers.row(i) = patches.centers.row(out.masked_index[static_cast<size_t>(i)]);
    out.predicted_centers = decode_centers(tape, out.tokens, out.masked_centers);
    return out;
  }

  /// Per-token decoder. Each masked query is the learned mask token plus a
  /// positional encoding of the masked center quantized to an 8x8x8 grid over
  /// [-1,1]^3 (coarse on purpose: the exact center is the regression target)
  /// plus the mean visible token as context.
  ad::Var<S> decode_centers(ad::Tape<S>& tape, const ad::Var<S>& visible_tokens,
                            const MatX3& masked_centers) const {
    const Eigen::Index n = masked_centers.rows();
    MatX3 quant(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) quant(i, c) = quantize_coord(masked_centers(i, c));
    ad::Var<S> queries = ad::add(
        ad::add(ad::broadcast_rows(params_.var(tape, "backbone.mask_token"), n),
                maskpos_(tape, params_, ad::constant(tape, ad::MatS<S>(quant.template cast<S>())))),
        ad::broadcast_rows(ad::mean_rows(visible_tokens), n));
    return dec_(tape, params_, queries);
  }

  static double quantize_coord(double c) {
    int bin = static_cast<int>(std::floor((c + 1.0) * 0.5 * 8.0));
    bin = std::min(std::max(bin, 0), 7);
    return -1.0 + (bin + 0.5) * 0.25;
  }

 private:
  BackboneConfig cfg_;
  nn::Params<S> params_;
  nn::Mlp<S> embed_, pos_, maskpos_, dec_;
  std::vector<nn::TransformerBlock<S>> blocks_;
  nn::LayerNorm<S> lnf_;
};

inline constexpr const char* kCheckpointFormat = "affseg-ckpt-1";

template <class S>
void save_backbone_checkpoint(const Backbone<S>& model, const std::string& path) {
  ArrayFile f;
  nlohmann::json meta{{"format", kCheckpointFormat},
                      {"kind", "backbone"},
                      {"library_version", kVersion},
                      {"config", model.config().to_json()}};
  f.put_string("__meta__", meta.dump());
  model.params().save_into(f);
  f.save(path);
}

inline nlohmann::json read_checkpoint_meta(const ArrayFile& f, const std::string& path,
                                           const std::string& expected_kind) {
  const auto meta = nlohmann::json::parse(f.str("__meta__"));
  const std::string format = meta.value("format", "");
  if (format != kCheckpointFormat)
    throw IoError("checkpoint: '" + path + "' has unsupported format '" + format + "'");
  if (meta.value("kind", "") != expected_kind)
    throw IoError("checkpoint: '" + path + "' is not a " + expected_kind + " checkpoint");
  return meta;
}

template <class S>
Backbone<S> load_backbone_checkpoint(const std::string& path) {
  ArrayFile f = ArrayFile::load(path);
  const auto meta = read_checkpoint_meta(f, path, "backbone");
  Backbone<S> model(BackboneConfig::from_json(meta.at("config")));
  model.params().load_from(f);
  return model;
}

}  // namespace affseg
