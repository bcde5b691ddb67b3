#pragma once

#include <cctype>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/array_file.hpp"
#include "affseg/common.hpp"
#include "affseg/rng.hpp"
#include "affseg/teacher.hpp"

namespace affseg {

/// A segmentation query: nothing, a text phrase, an image exemplar, or both.
struct Prompt {
  enum class Kind { None, Text, Image, Both };
  Kind kind = Kind::None;
  Vec text_feature;   // populated for Text/Both
  Vec image_feature;  // populated for Image/Both

  static Prompt none() { return {}; }
  static Prompt text(Vec f) {
    Prompt p;
    p.kind = Kind::Text;
    p.text_feature = std::move(f);
    return p;
  }
  static Prompt image(Vec f) {
    Prompt p;
    p.kind = Kind::Image;
    p.image_feature = std::move(f);
    return p;
  }
  static Prompt both(Vec t, Vec i) {
    Prompt p;
    p.kind = Kind::Both;
    p.text_feature = std::move(t);
    p.image_feature = std::move(i);
    return p;
  }

  bool has_text() const { return kind == Kind::Text || kind == Kind::Both; }
  bool has_image() const { return kind == Kind::Image || kind == Kind::Both; }
  int token_count() const { return (has_text() ? 1 : 0) + (has_image() ? 1 : 0); }
};

inline const char* prompt_kind_name(Prompt::Kind k) {
  switch (k) {
    case Prompt::Kind::None: return "none";
    case Prompt::Kind::Text: return "text";
    case Prompt::Kind::Image: return "image";
    case Prompt::Kind::Both: return "both";
  }
  return "none";
}

inline Prompt::Kind prompt_kind_from_name(const std::string& name) {
  if (name == "none") return Prompt::Kind::None;
  if (name == "text") return Prompt::Kind::Text;
  if (name == "image") return Prompt::Kind::Image;
  if (name == "both") return Prompt::Kind::Both;
  throw InvalidPrompt("unknown prompt kind '" + name + "'");
}

/// Frozen text encoder interface (the paper's Φ_text).
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual Vec encode(const std::string& text) const = 0;
};

/// Deterministic bag-of-words embedding: each lowercase word hashes to a fixed
/// pseudo-random unit direction; the phrase embedding is the normalized sum.
class HashBowTextEncoder : public TextEncoder {
 public:
  explicit HashBowTextEncoder(int dim = 32, uint64_t seed = 11) : dim_(dim), seed_(seed) {
    if (dim < 1) throw InvalidConfig("text encoder: dim must be positive");
  }
  int dim() const override { return dim_; }

  Vec encode(const std::string& text) const override {
    Vec sum = Vec::Zero(dim_);
    std::string word;
    int words = 0;
    auto flush = [&] {
      if (word.empty()) return;
      const uint64_t key = fnv1a64(word) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
      Vec w(dim_);
      for (int i = 0; i < dim_; ++i)
        w[i] = hashed_normal(key + static_cast<uint64_t>(i) * 0xbf58476d1ce4e5b9ULL);
      sum += w / w.norm();
      ++words;
      word.clear();
    };
    for (char ch : text) {
      if (std::isalnum(static_cast<unsigned char>(ch)))
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      else
        flush();
    }
    flush();
    if (words == 0) throw InvalidPrompt("text prompt contains no words");
    const double n = sum.norm();
    return n > 0 ? Vec(sum / n) : sum;
  }

 private:
  int dim_;
  uint64_t seed_;
};

/// Placeholder for a real language-model text encoder; no weights ship here.
class ExternalTextEncoderStub : public TextEncoder {
 public:
  ExternalTextEncoderStub(std::string name, int dim) : name_(std::move(name)), dim_(dim) {}
  int dim() const override { return dim_; }
  Vec encode(const std::string&) const override {
    throw InvalidConfig("text encoder '" + name_ +
                        "' is an external-model stub; bundle an adapter that implements encode()");
  }

 private:
  std::string name_;
  int dim_;
};

// ---- image exemplars ---------------------------------------------------------

/// An image prompt is a rendered part-id buffer of a donor object in which
/// only the queried part remains foreground.
struct Exemplar {
  Eigen::MatrixXi part_ids;  // H x W, -1 background
  std::string affordance;
  std::string donor_object;

  void save(const std::string& path) const {
    ArrayFile f;
    Mat m = part_ids.cast<double>();
    f.put("part_ids", m, ArrayFile::DType::I32);
    nlohmann::json meta{{"affordance", affordance}, {"donor_object", donor_object}};
    f.put_string("__meta__", meta.dump());
    f.save(path);
  }

  static Exemplar load(const std::string& path) {
    ArrayFile f = ArrayFile::load(path);
    Exemplar e;
    const Mat m = f.mat("part_ids");
    e.part_ids = m.cast<int>();
    const auto meta = nlohmann::json::parse(f.str("__meta__"));
    e.affordance = meta.at("affordance").get<std::string>();
    e.donor_object = meta.at("donor_object").get<std::string>();
    return e;
  }
};

/// Frozen image-prompt encoder interface (the paper's Φ_img).
class ImagePromptEncoder {
 public:
  virtual ~ImagePromptEncoder() = default;
  virtual int dim() const = 0;
  virtual Vec encode(const Exemplar& exemplar) const = 0;
};

/// Desk-scale image encoder: the procedural teacher's embedding pooled over
/// the exemplar's foreground pixels.
class ProceduralImageEncoder : public ImagePromptEncoder {
 public:
  explicit ProceduralImageEncoder(ProceduralTeacher teacher) : teacher_(std::move(teacher)) {}
  int dim() const override { return teacher_.feature_dim(); }

  Vec encode(const Exemplar& exemplar) const override {
    Vec sum = Vec::Zero(teacher_.feature_dim());
    long count = 0;
    for (Eigen::Index r = 0; r < exemplar.part_ids.rows(); ++r) {
      for (Eigen::Index c = 0; c < exemplar.part_ids.cols(); ++c) {
        const int part = exemplar.part_ids(r, c);
        if (part < 0) continue;
        sum += teacher_.part_embedding(part);
        ++count;
      }
    }
    if (count == 0) throw InvalidPrompt("image exemplar has no foreground pixels");
    return sum / static_cast<double>(count);
  }

 private:
  ProceduralTeacher teacher_;
};

/// Placeholder for a real vision-model image-prompt encoder.
class ExternalImageEncoderStub : public ImagePromptEncoder {
 public:
  ExternalImageEncoderStub(std::string name, int dim) : name_(std::move(name)), dim_(dim) {}
  int dim() const override { return dim_; }
  Vec encode(const Exemplar&) const override {
    throw InvalidConfig("image encoder '" + name_ +
                        "' is an external-model stub; bundle an adapter that implements encode()");
  }

 private:
  std::string name_;
  int dim_;
};

}  // namespace affseg
