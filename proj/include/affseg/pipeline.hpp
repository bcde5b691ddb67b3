#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/array_file.hpp"
#include "affseg/backbone.hpp"
#include "affseg/camera.hpp"
#include "affseg/cast.hpp"
#include "affseg/cmat.hpp"
#include "affseg/common.hpp"
#include "affseg/config.hpp"
#include "affseg/lifting.hpp"
#include "affseg/manifest.hpp"
#include "affseg/metrics.hpp"
#include "affseg/ply.hpp"
#include "affseg/prompts.hpp"
#include "affseg/synthetic.hpp"
#include "affseg/teacher.hpp"

namespace affseg {

// Teacher settings shared by every stage that touches 2D features (gen-data
// exemplars, lift, and the image-prompt encoder) so part embeddings agree.
inline constexpr int kTeacherDim = 16;
inline constexpr int kTeacherParts = 8;
inline constexpr uint64_t kTeacherSeed = 7;

/// Default dataset directory: $AFFSEG_DATA_ROOT, else ./data.
inline std::string data_root_default() {
  const char* env = std::getenv("AFFSEG_DATA_ROOT");
  return (env != nullptr && *env != '\0') ? std::string(env) : std::string("data");
}

/// One run per output directory: holds `.affseg.lock` for the run's lifetime
/// and refuses to start while another writer holds it.
class LockFile {
 public:
  explicit LockFile(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    path_ = dir / ".affseg.lock";
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (f == nullptr)
      throw IoError("output directory '" + dir.string() +
                    "' is locked by another run (remove '" + path_.string() + "' if stale)");
    std::fputs("locked\n", f);
    std::fclose(f);
    owned_ = true;
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;
  ~LockFile() {
    if (owned_) {
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  bool owned_ = false;
};

/// Reproducibility record written next to every stage's outputs.
inline void write_run_record(const std::filesystem::path& dir, const std::string& stage,
                             uint64_t seed, const nlohmann::json& config) {
  nlohmann::json record{{"stage", stage},
                        {"library_version", kVersion},
                        {"seed", seed},
                        {"config", config}};
  std::ofstream out(dir / ("run-" + stage + ".json"), std::ios::trunc);
  if (!out) throw IoError("cannot write run record under '" + dir.string() + "'");
  out << record.dump(2) << "\n";
}

namespace detail {

inline std::string resolve_path(const std::string& base_dir, const std::string& rel) {
  const std::filesystem::path p(rel);
  if (p.is_absolute()) return rel;
  return (std::filesystem::path(base_dir) / p).string();
}

inline void log_line(std::ostream* console, const std::string& line) {
  if (console != nullptr) *console << line << "\n";
}

inline std::string json_line(const nlohmann::json& j) { return j.dump(); }

/// Losses are logged with fixed decimals so identical runs produce identical
/// log bytes.
inline double round9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return std::atof(buf);
}

}  // namespace detail

// ---- gen-data ----------------------------------------------------------------------

struct GenDataOptions {
  std::string out_dir;
  int num_objects = 16;
  std::vector<std::string> unseen = {"door"};
  uint64_t seed = 1;
  bool smooth = false;
  int point_count = 2048;
};

/// Generates `num_objects` synthetic objects round-robin over the four
/// categories, writes clouds/heatmaps/exemplars, and assembles the split
/// manifest. Layout under out_dir:
///   clouds/<object_id>.ply        labeled point cloud
///   heatmaps/<object_id>.arr      one array per affordance tag
///   exemplars/<category>_<tag>.arr  image prompt for (category, tag)
///   manifest.jsonl                one object record per line, sorted by id
inline DatasetManifest gen_data_stage(const GenDataOptions& opt, std::ostream* console = nullptr) {
  if (opt.num_objects < 1) throw InvalidConfig("gen-data: num-objects must be positive");
  const std::filesystem::path root(opt.out_dir);
  LockFile lock(root);
  std::filesystem::create_directories(root / "clouds");
  std::filesystem::create_directories(root / "heatmaps");
  std::filesystem::create_directories(root / "exemplars");

  const std::vector<std::string>& categories = synthetic_categories();
  struct Generated {
    SyntheticObjectSpec spec;
    PointCloud cloud;
  };
  std::map<std::string, Generated> by_id;
  std::map<std::string, std::string> donor_of_category;  // first object id per category

  for (int i = 0; i < opt.num_objects; ++i) {
    const std::string& category = categories[static_cast<size_t>(i) % categories.size()];
    const int index = i / static_cast<int>(categories.size());
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%03d", index);
    const std::string object_id = category + "_" + suffix;
    const uint64_t object_seed = Rng(opt.seed, fnv1a64(object_id)).next_u64();

    Generated g;
    g.spec = make_object_spec(category, object_id, object_seed, opt.point_count);
    g.cloud = generate_object(g.spec);
    if (opt.smooth) smooth_heatmaps(g.cloud);

    save_ply(g.cloud, (root / "clouds" / (object_id + ".ply")).string());
    ArrayFile heat;
    for (const auto& [tag, values] : g.cloud.heatmaps) heat.put(tag, values, ArrayFile::DType::F32);
    heat.save((root / "heatmaps" / (object_id + ".arr")).string());

    if (!donor_of_category.count(category)) donor_of_category[category] = object_id;
    by_id.emplace(object_id, std::move(g));
    detail::log_line(console, "gen-data: wrote " + object_id);
  }

  // Exemplars: render the category's first object from the ring view that
  // shows the tagged part best (most foreground pixels; ties -> lowest view).
  const std::vector<Camera> ring = camera_ring(4);
  for (const auto& [category, donor_id] : donor_of_category) {
    const Generated& donor = by_id.at(donor_id);
    for (const std::string& tag : category_affordances(category)) {
      const std::vector<int> tagged = tagged_part_ids(donor.spec, tag);
      Exemplar best;
      long best_pixels = -1;
      for (const Camera& camera : ring) {
        Exemplar e = make_exemplar(donor.cloud, donor_id, tag, tagged, camera);
        long pixels = 0;
        for (Eigen::Index r = 0; r < e.part_ids.rows(); ++r)
          for (Eigen::Index c = 0; c < e.part_ids.cols(); ++c)
            if (e.part_ids(r, c) >= 0) ++pixels;
        if (pixels > best_pixels) {
          best_pixels = pixels;
          best = std::move(e);
        }
      }
      if (best_pixels <= 0)
        throw InvalidSpec("gen-data: affordance '" + tag + "' of " + donor_id +
                          " is invisible from every exemplar view");
      best.save((root / "exemplars" / (category + "_" + tag + ".arr")).string());
    }
  }

  // Object records with per-affordance text and image prompts.
  std::vector<ObjectRecord> records;
  for (const auto& [object_id, g] : by_id) {
    ObjectRecord rec;
    rec.object_id = object_id;
    rec.category = g.spec.category;
    rec.cloud = "clouds/" + object_id + ".ply";
    rec.heatmaps = "heatmaps/" + object_id + ".arr";
    for (const std::string& tag : category_affordances(g.spec.category)) {
      PromptRecord text;
      text.id = "text:" + tag;
      text.kind = "text";
      text.affordance = tag;
      text.text = affordance_prompts().at(tag);
      rec.prompts.push_back(text);
      PromptRecord image;
      image.id = "image:" + tag;
      image.kind = "image";
      image.affordance = tag;
      image.exemplar = "exemplars/" + g.spec.category + "_" + tag + ".arr";
      rec.prompts.push_back(image);
    }
    records.push_back(std::move(rec));
  }

  std::set<std::string> unseen(opt.unseen.begin(), opt.unseen.end());
  DatasetManifest manifest = build_splits(std::move(records), unseen);
  manifest.save((root / "manifest.jsonl").string());

  write_run_record(root, "gen-data", opt.seed,
                   {{"num_objects", opt.num_objects},
                    {"unseen", opt.unseen},
                    {"smooth", opt.smooth},
                    {"point_count", opt.point_count}});
  detail::log_line(console, "gen-data: manifest with " +
                                std::to_string(manifest.records.size()) + " objects -> " +
                                (root / "manifest.jsonl").string());
  return manifest;
}

// ---- lift ---------------------------------------------------------------------------

struct LiftOptions {
  std::string data_dir;
  std::string out_dir;
  int views = 12;
  double noise = 0.0;
  uint64_t teacher_seed = kTeacherSeed;
};

/// Stage 1 over the whole dataset: renders every object from a camera ring,
/// encodes each view with the procedural teacher, and stores per-point lifted
/// features as <out_dir>/<object_id>.arr.
inline void lift_stage(const LiftOptions& opt, std::ostream* console = nullptr) {
  const DatasetManifest manifest =
      DatasetManifest::load(detail::resolve_path(opt.data_dir, "manifest.jsonl"));
  const std::filesystem::path out(opt.out_dir);
  LockFile lock(out);
  const std::vector<Camera> cameras = camera_ring(opt.views);
  const ProceduralTeacher teacher(kTeacherDim, kTeacherParts, opt.noise, opt.teacher_seed);

  for (const ObjectRecord& rec : manifest.records) {
    const PointCloud cloud =
        normalize_cloud(load_ply(detail::resolve_path(opt.data_dir, rec.cloud)));
    LiftedFeatureSet lifted = lift_features(cloud, cameras, teacher);
    lifted.seed = opt.teacher_seed;
    lifted.save((out / (rec.object_id + ".arr")).string());
    long fallbacks = 0;
    for (char f : lifted.fallback) fallbacks += f ? 1 : 0;
    detail::log_line(console, detail::json_line({{"stage", "lift"},
                                                 {"object", rec.object_id},
                                                 {"views", opt.views},
                                                 {"fallback_points", fallbacks}}));
  }
  write_run_record(out, "lift", opt.teacher_seed,
                   {{"data_dir", opt.data_dir}, {"views", opt.views}, {"noise", opt.noise}});
}

// ---- pretrain -----------------------------------------------------------------------

struct PretrainOptions {
  std::string data_dir;
  std::string lifted_dir;
  std::string out_path;  // backbone checkpoint
  PretrainRunConfig run;
};

/// Stage 2 over the train split; writes a per-epoch loss log (JSON lines with
/// epoch, L_rec, L_aff, L_div, L_total, lr) next to the checkpoint.
inline std::vector<EpochRecord> pretrain_stage(const PretrainOptions& opt,
                                               std::ostream* console = nullptr) {
  const DatasetManifest manifest =
      DatasetManifest::load(detail::resolve_path(opt.data_dir, "manifest.jsonl"));
  const std::filesystem::path out_path(opt.out_path);
  const std::filesystem::path out_dir =
      out_path.has_parent_path() ? out_path.parent_path() : std::filesystem::path(".");
  LockFile lock(out_dir);

  std::vector<PretrainItem> items;
  for (const ObjectRecord* rec : manifest.split("train")) {
    PointCloud cloud = normalize_cloud(load_ply(detail::resolve_path(opt.data_dir, rec->cloud)));
    const LiftedFeatureSet lifted =
        LiftedFeatureSet::load((std::filesystem::path(opt.lifted_dir) / (rec->object_id + ".arr"))
                                   .string());
    if (lifted.size() != static_cast<Eigen::Index>(cloud.size()))
      throw InvalidInput("pretrain: lifted features for '" + rec->object_id +
                         "' disagree with the cloud size");
    items.push_back(
        PretrainItem::prepare(rec->object_id, std::move(cloud), lifted.features, opt.run.backbone));
  }

  Backbone<float> model(opt.run.backbone, opt.run.pretrain.seed);
  std::ofstream log(out_dir / "pretrain-log.jsonl", std::ios::trunc);
  if (!log) throw IoError("pretrain: cannot write loss log under '" + out_dir.string() + "'");
  const auto on_epoch = [&](const EpochRecord& rec) {
    const std::string line = detail::json_line({{"epoch", rec.epoch},
                                                {"L_rec", detail::round9(rec.losses.rec)},
                                                {"L_aff", detail::round9(rec.losses.aff)},
                                                {"L_div", detail::round9(rec.losses.div)},
                                                {"L_total", detail::round9(rec.losses.total)},
                                                {"lr", rec.lr}});
    log << line << "\n";
    log.flush();
    detail::log_line(console, line);
  };
  const std::vector<EpochRecord> history = pretrain_run(model, items, opt.run.pretrain, on_epoch);

  save_backbone_checkpoint(model, opt.out_path);
  nlohmann::json snapshot{{"profile", opt.run.profile},
                          {"lambda_rec", opt.run.pretrain.lambda_rec},
                          {"lambda_aff", opt.run.pretrain.lambda_aff},
                          {"lambda_div", opt.run.pretrain.lambda_div},
                          {"epochs", opt.run.pretrain.epochs},
                          {"batch_size", opt.run.pretrain.batch_size},
                          {"lr", opt.run.pretrain.lr},
                          {"warmup_epochs", opt.run.pretrain.warmup_epochs},
                          {"mask_ratio", opt.run.backbone.mask_ratio},
                          {"train_objects", items.size()}};
  write_run_record(out_dir, "pretrain", opt.run.pretrain.seed, snapshot);
  return history;
}

// ---- finetune -----------------------------------------------------------------------

struct FinetuneOptions {
  std::string data_dir;
  std::string ckpt_path;  // empty -> fine-tune from scratch
  std::string out_path;   // full model checkpoint
  FinetuneRunConfig run;
};

namespace detail {

/// Builds the Prompt for a manifest prompt record via the frozen encoders.
inline Prompt build_prompt(const PromptRecord& rec, const std::string& data_dir,
                           const TextEncoder& text_enc, const ImagePromptEncoder& image_enc) {
  if (rec.kind == "text") return Prompt::text(text_enc.encode(rec.text));
  return Prompt::image(image_enc.encode(Exemplar::load(resolve_path(data_dir, rec.exemplar))));
}

inline Vec load_heatmap(const std::string& path, const std::string& affordance) {
  const ArrayFile f = ArrayFile::load(path);
  if (!f.contains(affordance))
    throw IoError("heatmap file '" + path + "' has no array '" + affordance + "'");
  return f.vec(affordance);
}

}  // namespace detail

/// Stage 3 over the train split; initializes the backbone from a Stage 2
/// checkpoint when given, otherwise from scratch. Writes a per-epoch loss log
/// (epoch, L_focal, L_dice, L_total) next to the model.
template <class S = float>
std::vector<FinetuneEpochRecord> finetune_stage(const FinetuneOptions& opt,
                                                std::ostream* console = nullptr,
                                                CastModel<S>* trained_out = nullptr) {
  const DatasetManifest manifest =
      DatasetManifest::load(detail::resolve_path(opt.data_dir, "manifest.jsonl"));
  const std::filesystem::path out_path(opt.out_path);
  const std::filesystem::path out_dir =
      out_path.has_parent_path() ? out_path.parent_path() : std::filesystem::path(".");
  LockFile lock(out_dir);

  BackboneConfig bcfg = opt.run.backbone;
  if (!opt.ckpt_path.empty()) {
    const ArrayFile f = ArrayFile::load(opt.ckpt_path);
    const auto meta = read_checkpoint_meta(f, opt.ckpt_path, "backbone");
    bcfg = BackboneConfig::from_json(meta.at("config"));
  }
  CastModel<S> model(bcfg, opt.run.cast, opt.run.finetune.seed);
  if (!opt.ckpt_path.empty()) {
    const ArrayFile f = ArrayFile::load(opt.ckpt_path);
    model.backbone().params().load_from(f);
  }

  const HashBowTextEncoder text_enc(opt.run.cast.text_dim);
  const ProceduralImageEncoder image_enc(
      ProceduralTeacher(opt.run.cast.image_dim, kTeacherParts, 0.0, kTeacherSeed));

  std::vector<FinetuneItem> items;
  for (const ObjectRecord* rec : manifest.split("train")) {
    const PointCloud cloud =
        normalize_cloud(load_ply(detail::resolve_path(opt.data_dir, rec->cloud)));
    const std::string heat_path = detail::resolve_path(opt.data_dir, rec->heatmaps);
    for (const PromptRecord& prompt_rec : rec->prompts) {
      const Prompt prompt = detail::build_prompt(prompt_rec, opt.data_dir, text_enc, image_enc);
      Vec target = detail::load_heatmap(heat_path, prompt_rec.affordance);
      if (target.size() != static_cast<Eigen::Index>(cloud.size()))
        throw InvalidInput("finetune: heatmap size for '" + rec->object_id +
                           "' disagrees with the cloud");
      items.push_back(FinetuneItem::prepare(rec->object_id, prompt_rec.id, cloud, prompt,
                                            std::move(target), bcfg, opt.run.cast));
    }
  }

  std::ofstream log(out_dir / "finetune-log.jsonl", std::ios::trunc);
  if (!log) throw IoError("finetune: cannot write loss log under '" + out_dir.string() + "'");
  const auto on_epoch = [&](const FinetuneEpochRecord& rec) {
    const std::string line = detail::json_line({{"epoch", rec.epoch},
                                                {"L_focal", detail::round9(rec.losses.focal)},
                                                {"L_dice", detail::round9(rec.losses.dice)},
                                                {"L_total", detail::round9(rec.losses.total)}});
    log << line << "\n";
    log.flush();
    detail::log_line(console, line);
  };
  const std::vector<FinetuneEpochRecord> history =
      finetune_run(model, items, opt.run.finetune, on_epoch);

  save_cast_checkpoint(model, opt.out_path);
  nlohmann::json snapshot{{"profile", opt.run.profile},
                          {"from_checkpoint", !opt.ckpt_path.empty()},
                          {"epochs", opt.run.finetune.epochs},
                          {"batch_size", opt.run.finetune.batch_size},
                          {"lr_backbone", opt.run.finetune.lr_backbone},
                          {"lr_new", opt.run.finetune.lr_new},
                          {"lambda_focal", opt.run.finetune.lambda_focal},
                          {"lambda_dice", opt.run.finetune.lambda_dice},
                          {"train_pairs", items.size()}};
  write_run_record(out_dir, "finetune", opt.run.finetune.seed, snapshot);
  if (trained_out != nullptr) *trained_out = std::move(model);
  return history;
}

// ---- evaluate -----------------------------------------------------------------------

struct EvaluateOptions {
  std::string model_path;
  std::string data_dir;
  std::string split = "seen-test";  // train | seen-test | unseen-test | all
  std::string report_path;
};

/// Scores every (object, prompt) pair of the chosen split and writes the
/// deterministic metric report.
template <class S = float>
MetricsReport evaluate_stage(const EvaluateOptions& opt, std::ostream* console = nullptr,
                             const CastModel<S>* preloaded = nullptr) {
  if (opt.split != "train" && opt.split != "seen-test" && opt.split != "unseen-test" &&
      opt.split != "all")
    throw InvalidConfig("evaluate: split must be train | seen-test | unseen-test | all");
  const DatasetManifest manifest =
      DatasetManifest::load(detail::resolve_path(opt.data_dir, "manifest.jsonl"));

  std::optional<CastModel<S>> loaded;
  if (preloaded == nullptr) loaded.emplace(load_cast_checkpoint<S>(opt.model_path));
  const CastModel<S>& model = preloaded != nullptr ? *preloaded : *loaded;
  const HashBowTextEncoder text_enc(model.config().text_dim);
  const ProceduralImageEncoder image_enc(
      ProceduralTeacher(model.config().image_dim, kTeacherParts, 0.0, kTeacherSeed));

  std::vector<PairMetrics> rows;
  for (const ObjectRecord& rec : manifest.records) {
    if (opt.split != "all" && rec.split != opt.split) continue;
    const PointCloud cloud = load_ply(detail::resolve_path(opt.data_dir, rec.cloud));
    const std::string heat_path = detail::resolve_path(opt.data_dir, rec.heatmaps);
    for (const PromptRecord& prompt_rec : rec.prompts) {
      const Prompt prompt = detail::build_prompt(prompt_rec, opt.data_dir, text_enc, image_enc);
      const SegmentationMask mask = model.segment(cloud, prompt);
      const Vec gt = detail::load_heatmap(heat_path, prompt_rec.affordance);
      rows.push_back(evaluate_pair(rec.object_id, prompt_rec.id, mask.scores, gt));
    }
  }
  if (rows.empty()) throw InvalidInput("evaluate: split '" + opt.split + "' has no objects");

  const MetricsReport report = aggregate_metrics(std::move(rows));
  const std::string text = format_report(report);
  if (!opt.report_path.empty()) {
    std::ofstream out(opt.report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("evaluate: cannot write report '" + opt.report_path + "'");
    out << text;
  }
  detail::log_line(console, text);
  return report;
}

// ---- segment ------------------------------------------------------------------------

struct SegmentOptions {
  std::string model_path;
  std::string cloud_path;
  std::string text;           // empty -> no text prompt
  std::string exemplar_path;  // empty -> no image prompt
  std::string out_path;       // score array; a colored PLY lands next to it
};

/// Single-cloud inference: writes per-point scores as a named array and a PLY
/// colored blue (score 0) to red (score 1).
template <class S = float>
SegmentationMask segment_stage(const SegmentOptions& opt, std::ostream* console = nullptr) {
  if (opt.text.empty() && opt.exemplar_path.empty())
    throw InvalidPrompt("segment: need a text prompt, an image exemplar, or both");
  const CastModel<S> model = load_cast_checkpoint<S>(opt.model_path);
  const PointCloud cloud = load_ply(opt.cloud_path);

  Prompt prompt;
  if (!opt.text.empty() && !opt.exemplar_path.empty()) {
    const HashBowTextEncoder text_enc(model.config().text_dim);
    const ProceduralImageEncoder image_enc(
        ProceduralTeacher(model.config().image_dim, kTeacherParts, 0.0, kTeacherSeed));
    prompt = Prompt::both(text_enc.encode(opt.text),
                          image_enc.encode(Exemplar::load(opt.exemplar_path)));
  } else if (!opt.text.empty()) {
    prompt = Prompt::text(HashBowTextEncoder(model.config().text_dim).encode(opt.text));
  } else {
    const ProceduralImageEncoder image_enc(
        ProceduralTeacher(model.config().image_dim, kTeacherParts, 0.0, kTeacherSeed));
    prompt = Prompt::image(image_enc.encode(Exemplar::load(opt.exemplar_path)));
  }

  const SegmentationMask mask = model.segment(cloud, prompt);

  ArrayFile f;
  f.put("scores", mask.scores, ArrayFile::DType::F32);
  f.put("logits", mask.logits, ArrayFile::DType::F32);
  f.save(opt.out_path);

  std::filesystem::path ply_path(opt.out_path);
  ply_path.replace_extension(".ply");
  if (ply_path == std::filesystem::path(opt.out_path)) ply_path += ".scores.ply";
  Mat rgb(mask.scores.size(), 3);
  for (Eigen::Index i = 0; i < mask.scores.size(); ++i) {
    const double s = mask.scores[i];
    rgb(i, 0) = s;
    rgb(i, 1) = 0.2;
    rgb(i, 2) = 1.0 - s;
  }
  save_ply_rgb(normalize_cloud(cloud), rgb, ply_path.string());
  detail::log_line(console, "segment: scores -> " + opt.out_path + ", colored cloud -> " +
                                ply_path.string());
  return mask;
}

// ---- visualize ----------------------------------------------------------------------

struct VisualizeOptions {
  std::string features_path;  // array container with a 'features' matrix
  std::string cloud_path;
  std::string out_path;  // RGB PLY
};

/// Projects per-point features to RGB with PCA and writes a colored PLY.
inline void visualize_stage(const VisualizeOptions& opt, std::ostream* console = nullptr) {
  const ArrayFile f = ArrayFile::load(opt.features_path);
  if (!f.contains("features"))
    throw IoError("visualize: '" + opt.features_path + "' has no 'features' array");
  const Mat features = f.mat("features");
  const PointCloud cloud = load_ply(opt.cloud_path);
  if (features.rows() != static_cast<Eigen::Index>(cloud.size()))
    throw InvalidInput("visualize: features and cloud disagree on point count");
  save_ply_rgb(cloud, pca_to_rgb(features), opt.out_path);
  detail::log_line(console, "visualize: wrote " + opt.out_path);
}

}  // namespace affseg
