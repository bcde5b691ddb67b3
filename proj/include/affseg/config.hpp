#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "affseg/backbone.hpp"
#include "affseg/cast.hpp"
#include "affseg/cmat.hpp"
#include "affseg/common.hpp"

namespace affseg {

/// Flat `key = value` text config. Blank lines and `#` comments are ignored;
/// duplicate or undocumented keys are rejected.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw InvalidConfig(origin + " line " + std::to_string(line_no) + ": expected key=value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw InvalidConfig(origin + " line " + std::to_string(line_no) + ": empty key");
      if (cfg.values_.count(key))
        throw InvalidConfig(origin + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  void require_known_keys(const std::set<std::string>& documented) const {
    for (const auto& [key, value] : values_)
      if (!documented.count(key))
        throw InvalidConfig(origin_ + ": unknown key '" + key + "'");
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig(origin_ + ": key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  int get_int(const std::string& key, int fallback) const {
    const double v = get_double(key, fallback);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
      throw InvalidConfig(origin_ + ": key '" + key + "' must be an integer");
    return i;
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t used = 0;
      const unsigned long long v = std::stoull(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig(origin_ + ": key '" + key + "' is not an unsigned integer");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  std::map<std::string, std::string> values_;
  std::string origin_;
};

inline std::string parse_profile(const KeyValueConfig& cfg) {
  const std::string profile = cfg.get_string("profile", "toy");
  if (profile != "paper" && profile != "toy")
    throw InvalidConfig("config: profile must be 'paper' or 'toy', got '" + profile + "'");
  return profile;
}

struct PretrainRunConfig {
  std::string profile = "toy";
  BackboneConfig backbone;
  PretrainConfig pretrain;
  int teacher_dim = 16;
};

/// Documented pretrain keys: profile, lambda_rec, lambda_aff, lambda_div,
/// epochs, batch_size, lr, warmup_epochs, mask_ratio, seed.
inline PretrainRunConfig load_pretrain_config(const KeyValueConfig& cfg) {
  cfg.require_known_keys({"profile", "lambda_rec", "lambda_aff", "lambda_div", "epochs",
                          "batch_size", "lr", "warmup_epochs", "mask_ratio", "seed"});
  PretrainRunConfig out;
  out.profile = parse_profile(cfg);
  out.backbone = out.profile == "paper" ? BackboneConfig::paper() : BackboneConfig::toy();
  out.pretrain = out.profile == "paper" ? PretrainConfig::paper() : PretrainConfig::toy();
  out.pretrain.lambda_rec = cfg.get_double("lambda_rec", out.pretrain.lambda_rec);
  out.pretrain.lambda_aff = cfg.get_double("lambda_aff", out.pretrain.lambda_aff);
  out.pretrain.lambda_div = cfg.get_double("lambda_div", out.pretrain.lambda_div);
  out.pretrain.epochs = cfg.get_int("epochs", out.pretrain.epochs);
  out.pretrain.batch_size = cfg.get_int("batch_size", out.pretrain.batch_size);
  out.pretrain.lr = cfg.get_double("lr", out.pretrain.lr);
  out.pretrain.warmup_epochs = cfg.get_int("warmup_epochs", out.pretrain.warmup_epochs);
  out.pretrain.seed = cfg.get_u64("seed", out.pretrain.seed);
  out.backbone.mask_ratio = cfg.get_double("mask_ratio", out.backbone.mask_ratio);
  out.backbone.validate();
  out.pretrain.validate();
  return out;
}

struct FinetuneRunConfig {
  std::string profile = "toy";
  BackboneConfig backbone;  // used only when fine-tuning from scratch
  CastConfig cast;
  FinetuneConfig finetune;
};

/// Documented finetune keys: profile, epochs, batch_size, lr_backbone, lr_new,
/// lambda_focal, lambda_dice, fusion_depth, seed.
inline FinetuneRunConfig load_finetune_config(const KeyValueConfig& cfg) {
  cfg.require_known_keys({"profile", "epochs", "batch_size", "lr_backbone", "lr_new",
                          "lambda_focal", "lambda_dice", "fusion_depth", "seed"});
  FinetuneRunConfig out;
  out.profile = parse_profile(cfg);
  out.backbone = out.profile == "paper" ? BackboneConfig::paper() : BackboneConfig::toy();
  out.cast = out.profile == "paper" ? CastConfig::paper() : CastConfig::toy();
  out.finetune = out.profile == "paper" ? FinetuneConfig::paper() : FinetuneConfig::toy();
  out.finetune.epochs = cfg.get_int("epochs", out.finetune.epochs);
  out.finetune.batch_size = cfg.get_int("batch_size", out.finetune.batch_size);
  out.finetune.lr_backbone = cfg.get_double("lr_backbone", out.finetune.lr_backbone);
  out.finetune.lr_new = cfg.get_double("lr_new", out.finetune.lr_new);
  out.finetune.lambda_focal = cfg.get_double("lambda_focal", out.finetune.lambda_focal);
  out.finetune.lambda_dice = cfg.get_double("lambda_dice", out.finetune.lambda_dice);
  out.cast.fusion_depth = cfg.get_int("fusion_depth", out.cast.fusion_depth);
  out.cast.lambda_focal = out.finetune.lambda_focal;
  out.cast.lambda_dice = out.finetune.lambda_dice;
  out.finetune.seed = cfg.get_u64("seed", out.finetune.seed);
  out.backbone.validate();
  out.cast.validate();
  out.finetune.validate();
  return out;
}

}  // namespace affseg
