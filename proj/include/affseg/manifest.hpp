#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/common.hpp"

namespace affseg {

struct PromptRecord {
  std::string id;
  std::string kind;        // "text" | "image"
  std::string affordance;  // heatmap key in the object's heatmap archive
  std::string text;        // text prompts
  std::string exemplar;    // relative path, image prompts

  nlohmann::json to_json() const {
    nlohmann::json j{{"id", id}, {"kind", kind}, {"affordance", affordance}};
    if (kind == "text") j["text"] = text;
    if (kind == "image") j["exemplar"] = exemplar;
    return j;
  }
  static PromptRecord from_json(const nlohmann::json& j) {
    PromptRecord p;
    p.id = j.at("id").get<std::string>();
    p.kind = j.at("kind").get<std::string>();
    p.affordance = j.at("affordance").get<std::string>();
    p.text = j.value("text", "");
    p.exemplar = j.value("exemplar", "");
    if (p.kind != "text" && p.kind != "image")
      throw IoError("manifest: prompt '" + p.id + "' has unknown kind '" + p.kind + "'");
    return p;
  }
};

struct ObjectRecord {
  std::string object_id;
  std::string category;
  std::string split;  // "train" | "seen-test" | "unseen-test" ("" before build_splits)
  std::string cloud;     // relative PLY path
  std::string heatmaps;  // relative array-container path
  std::vector<PromptRecord> prompts;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const PromptRecord& p : prompts) arr.push_back(p.to_json());
    return {{"object_id", object_id}, {"category", category}, {"split", split},
            {"cloud", cloud},         {"heatmaps", heatmaps}, {"prompts", arr}};
  }
  static ObjectRecord from_json(const nlohmann::json& j) {
    ObjectRecord r;
    r.object_id = j.at("object_id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.cloud = j.at("cloud").get<std::string>();
    r.heatmaps = j.at("heatmaps").get<std::string>();
    for (const auto& p : j.at("prompts")) r.prompts.push_back(PromptRecord::from_json(p));
    return r;
  }
};

/// Line-delimited dataset index: one JSON object per cloud, sorted by object
/// id for deterministic bytes.
struct DatasetManifest {
  std::vector<ObjectRecord> records;

  void sort() {
    std::sort(records.begin(), records.end(),
              [](const ObjectRecord& a, const ObjectRecord& b) { return a.object_id < b.object_id; });
  }

  std::vector<const ObjectRecord*> split(const std::string& name) const {
    std::vector<const ObjectRecord*> out;
    for (const ObjectRecord& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("manifest: cannot open '" + path + "' for writing");
    for (const ObjectRecord& r : records) out << r.to_json().dump() << "\n";
    if (!out) throw IoError("manifest: write to '" + path + "' failed");
  }

  static DatasetManifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open '" + path + "'");
    DatasetManifest m;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        m.records.push_back(ObjectRecord::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest: '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return m;
  }

  bool operator==(const DatasetManifest& other) const {
    if (records.size() != other.records.size()) return false;
    for (size_t i = 0; i < records.size(); ++i)
      if (records[i].to_json() != other.records[i].to_json()) return false;
    return true;
  }
};

/// Assigns splits: held-out categories go entirely to unseen-test; within each
/// remaining category every fifth object (by sorted id) becomes seen-test
/// (20%) and the rest train.
inline DatasetManifest build_splits(std::vector<ObjectRecord> objects,
                                    const std::set<std::string>& unseen_categories) {
  if (unseen_categories.empty())
    throw InvalidConfig("build_splits: need at least one held-out category");
  std::set<std::string> present;
  for (const ObjectRecord& r : objects) present.insert(r.category);
  bool any_seen = false;
  for (const std::string& cat : present) any_seen = any_seen || !unseen_categories.count(cat);
  if (!any_seen) throw InvalidConfig("build_splits: all categories held out, nothing to train on");

  DatasetManifest m;
  m.records = std::move(objects);
  m.sort();
  std::map<std::string, int> seen_rank;
  for (ObjectRecord& r : m.records) {
    if (unseen_categories.count(r.category)) {
      r.split = "unseen-test";
    } else {
      const int rank = seen_rank[r.category]++;
      r.split = (rank % 5 == 4) ? "seen-test" : "train";
    }
  }
  return m;
}

}  // namespace affseg
