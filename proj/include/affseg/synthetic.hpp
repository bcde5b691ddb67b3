#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "affseg/camera.hpp"
#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/prompts.hpp"
#include "affseg/rng.hpp"

namespace affseg {

/// Parametric surface primitive sampled uniformly by area, in its local frame.
struct Primitive {
  enum class Type { CylinderSide, Disk, Box, TorusArc, SphereCap };
  Type type = Type::Box;
  double a = 0, b = 0, c = 0, d = 0;

  static Primitive cylinder_side(double radius, double height) {
    return {Type::CylinderSide, radius, height, 0, 0};
  }
  static Primitive disk(double radius) { return {Type::Disk, radius, 0, 0, 0}; }
  static Primitive box(double ex, double ey, double ez) { return {Type::Box, ex, ey, ez, 0}; }
  static Primitive torus_arc(double major, double minor, double angle0, double angle1) {
    return {Type::TorusArc, major, minor, angle0, angle1};
  }
  static Primitive sphere_cap(double radius, double cos_cutoff) {
    return {Type::SphereCap, radius, cos_cutoff, 0, 0};
  }

  void validate() const {
    switch (type) {
      case Type::CylinderSide:
        if (a <= 0 || b <= 0) throw InvalidSpec("cylinder with zero extent");
        break;
      case Type::Disk:
        if (a <= 0) throw InvalidSpec("disk with zero extent");
        break;
      case Type::Box:
        if (a <= 0 || b <= 0 || c <= 0) throw InvalidSpec("box with zero extent");
        break;
      case Type::TorusArc:
        if (a <= 0 || b <= 0 || d <= c + 1e-12 || b >= a)
          throw InvalidSpec("torus arc with zero extent");
        break;
      case Type::SphereCap:
        if (a <= 0 || b >= 1.0) throw InvalidSpec("sphere cap with zero extent");
        break;
    }
  }

  double area() const {
    switch (type) {
      case Type::CylinderSide: return 2.0 * M_PI * a * b;
      case Type::Disk: return M_PI * a * a;
      case Type::Box: return 2.0 * (a * b + b * c + a * c);
      case Type::TorusArc: return (d - c) * a * 2.0 * M_PI * b;  // mean over tube angle
      case Type::SphereCap: return 2.0 * M_PI * a * a * (1.0 - b);
    }
    return 0.0;
  }

  Vec3 sample(Rng& rng) const {
    switch (type) {
      case Type::CylinderSide: {
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        return {a * std::cos(theta), a * std::sin(theta), rng.uniform(-0.5, 0.5) * b};
      }
      case Type::Disk: {
        const double r = a * std::sqrt(rng.uniform());
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        return {r * std::cos(theta), r * std::sin(theta), 0.0};
      }
      case Type::Box: {
        // choose a face pair by area, then a sign and a uniform point on it
        const double axy = a * b, ayz = b * c, axz = a * c;
        const double u = rng.uniform() * (axy + ayz + axz);
        const double sign = rng.uniform() < 0.5 ? -0.5 : 0.5;
        const double px = rng.uniform(-0.5, 0.5), py = rng.uniform(-0.5, 0.5);
        if (u < axy) return {px * a, py * b, sign * c};
        if (u < axy + ayz) return {sign * a, px * b, py * c};
        return {px * a, sign * b, py * c};
      }
      case Type::TorusArc: {
        // rejection on the tube angle keeps sampling uniform by area
        const double theta = rng.uniform(c, d);
        double phi;
        do {
          phi = rng.uniform(0.0, 2.0 * M_PI);
        } while (rng.uniform() > (a + b * std::cos(phi)) / (a + b));
        return {(a + b * std::cos(phi)) * std::cos(theta),
                (a + b * std::cos(phi)) * std::sin(theta), b * std::sin(phi)};
      }
      case Type::SphereCap: {
        const double z = rng.uniform(b, 1.0);
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        return {a * rho * std::cos(phi), a * rho * std::sin(phi), a * z};
      }
    }
    return Vec3::Zero();
  }
};

struct PartSpec {
  int part_id = 0;
  std::string name;
  std::vector<Primitive> primitives;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::vector<std::string> affordances;
};

struct SyntheticObjectSpec {
  std::string category;
  std::string object_id;
  std::vector<PartSpec> parts;
  int point_count = 2048;
  uint64_t seed = 0;
};

inline const std::vector<std::string>& synthetic_categories() {
  static const std::vector<std::string> cats{"mug", "chair", "hammer", "door"};
  return cats;
}

/// Text phrase used for each affordance tag (LASO-style imperative queries).
inline const std::map<std::string, std::string>& affordance_prompts() {
  static const std::map<std::string, std::string> prompts{
      {"grasp", "grasp the handle"}, {"contain", "fill the body"},
      {"sit", "sit on the seat"},    {"lean", "lean on the back"},
      {"pound", "pound with the head"}, {"grip", "grip the handle"},
      {"open", "open the knob"},     {"push", "push the panel"}};
  return prompts;
}

namespace detail {

inline Mat3 rot_x(double angle) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle);
  return r;
}
inline Mat3 rot_y(double angle) {
  Mat3 r;
  r << std::cos(angle), 0, std::sin(angle), 0, 1, 0, -std::sin(angle), 0, std::cos(angle);
  return r;
}

}  // namespace detail

/// Randomized (seeded) spec for one object of the given category. Dimensions
/// jitter around category defaults so every object is distinct.
inline SyntheticObjectSpec make_object_spec(const std::string& category, const std::string& object_id,
                                            uint64_t seed, int point_count = 2048) {
  Rng rng(seed, fnv1a64(std::string("spec-") + object_id));
  auto jitter = [&rng](double v) { return v * rng.uniform(0.85, 1.15); };
  SyntheticObjectSpec spec;
  spec.category = category;
  spec.object_id = object_id;
  spec.point_count = point_count;
  spec.seed = seed;

  if (category == "mug") {
    const double r = jitter(0.35), h = jitter(0.75);
    PartSpec body;
    body.part_id = 0;
    body.name = "body";
    body.primitives = {Primitive::cylinder_side(r, h)};
    body.affordances = {"contain"};

    PartSpec bottom;  // the base disk shares the body's id and tags
    bottom.part_id = 0;
    bottom.name = "body_bottom";
    bottom.primitives = {Primitive::disk(r)};
    bottom.translation = Vec3(0, 0, -0.5 * h);
    bottom.affordances = {"contain"};

    PartSpec handle;
    handle.part_id = 1;
    handle.name = "handle";
    handle.primitives = {
        Primitive::torus_arc(jitter(0.22), jitter(0.045), -0.45 * M_PI, 0.45 * M_PI)};
    handle.rotation = detail::rot_x(M_PI / 2.0);  // arc opens sideways in the x-z plane
    handle.translation = Vec3(r, 0, 0);
    handle.affordances = {"grasp"};
    spec.parts = {body, bottom, handle};
  } else if (category == "chair") {
    const double w = jitter(0.85), depth = jitter(0.8), leg_h = jitter(0.75);
    const double back_h = jitter(0.9);
    PartSpec seat;
    seat.part_id = 0;
    seat.name = "seat";
    seat.primitives = {Primitive::box(w, depth, 0.1)};
    seat.affordances = {"sit"};

    PartSpec back;
    back.part_id = 1;
    back.name = "back";
    back.primitives = {Primitive::box(w, 0.08, back_h)};
    back.translation = Vec3(0, -0.5 * depth + 0.04, 0.5 * back_h + 0.05);
    back.affordances = {"lean"};

    spec.parts = {seat, back};
    PartSpec leg_proto;
    leg_proto.part_id = 2;
    leg_proto.name = "legs";
    leg_proto.primitives = {Primitive::cylinder_side(jitter(0.05), leg_h)};
    const double ox = 0.5 * w - 0.08, oy = 0.5 * depth - 0.08;
    const Vec3 corners[4] = {{ox, oy, 0}, {-ox, oy, 0}, {ox, -oy, 0}, {-ox, -oy, 0}};
    for (const Vec3& corner : corners) {
      PartSpec leg = leg_proto;
      leg.translation = Vec3(0, 0, -0.5 * leg_h - 0.05) + corner;
      spec.parts.push_back(leg);
    }
  } else if (category == "hammer") {
    const double hr = jitter(0.06), hh = jitter(1.1);
    PartSpec handle;
    handle.part_id = 0;
    handle.name = "handle";
    handle.primitives = {Primitive::cylinder_side(hr, hh)};
    handle.affordances = {"grip"};

    PartSpec head;
    head.part_id = 1;
    head.name = "head";
    head.primitives = {Primitive::box(jitter(0.55), jitter(0.16), jitter(0.16))};
    head.translation = Vec3(0, 0, 0.5 * hh + 0.06);
    head.affordances = {"pound"};
    spec.parts = {handle, head};
  } else if (category == "door") {
    const double w = jitter(0.95), h = jitter(1.9);
    PartSpec panel;
    panel.part_id = 0;
    panel.name = "panel";
    panel.primitives = {Primitive::box(w, 0.07, h)};
    panel.affordances = {"push"};

    PartSpec knob;
    knob.part_id = 1;
    knob.name = "knob";
    knob.primitives = {Primitive::sphere_cap(jitter(0.07), -1.0)};
    knob.rotation = detail::rot_y(M_PI / 2.0);
    knob.translation = Vec3(0.5 * w - 0.1, -0.09, 0.0);
    knob.affordances = {"open"};
    spec.parts = {panel, knob};
  } else {
    throw InvalidSpec("unknown category '" + category + "'");
  }
  return spec;
}

/// Samples the spec to a labeled, unit-sphere-normalized cloud with one binary
/// heatmap per affordance tag (optionally distance-smoothed, see
/// smooth_heatmaps).
inline PointCloud generate_object(const SyntheticObjectSpec& spec) {
  if (spec.parts.empty()) throw InvalidSpec("object spec has no parts");
  if (spec.point_count < 1) throw InvalidSpec("object spec has no points");

  struct Piece {
    const PartSpec* part;
    const Primitive* prim;
    double area;
  };
  std::vector<Piece> pieces;
  double total_area = 0.0;
  for (const PartSpec& part : spec.parts) {
    if (part.primitives.empty()) throw InvalidSpec("part '" + part.name + "' has no primitives");
    for (const Primitive& prim : part.primitives) {
      prim.validate();
      pieces.push_back({&part, &prim, prim.area()});
      total_area += pieces.back().area;
    }
  }

  // area-proportional counts, largest remainder makes them sum exactly
  std::vector<int> counts(pieces.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t i = 0; i < pieces.size(); ++i) {
    const double exact = spec.point_count * pieces[i].area / total_area;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - counts[i], i});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  for (int left = spec.point_count - assigned, i = 0; left > 0; --left, ++i)
    counts[remainders[static_cast<size_t>(i) % remainders.size()].second] += 1;

  PointCloud cloud;
  cloud.points.resize(spec.point_count, 3);
  cloud.part_labels.resize(spec.point_count);
  Rng rng(spec.seed, fnv1a64(std::string("sample-") + spec.object_id));
  Eigen::Index at = 0;
  for (size_t i = 0; i < pieces.size(); ++i) {
    for (int s = 0; s < counts[i]; ++s) {
      const Vec3 local = pieces[i].prim->sample(rng);
      cloud.points.row(at) =
          (pieces[i].part->rotation * local + pieces[i].part->translation).transpose();
      cloud.part_labels[at] = pieces[i].part->part_id;
      ++at;
    }
  }

  cloud = normalize_cloud(cloud);

  // binary heatmaps on the normalized coordinates
  std::map<std::string, std::vector<char>> tagged;
  for (const PartSpec& part : spec.parts)
    for (const std::string& tag : part.affordances) {
      auto& mask = tagged[tag];
      mask.resize(static_cast<size_t>(spec.point_count), 0);
      for (Eigen::Index i = 0; i < cloud.part_labels.size(); ++i)
        if (cloud.part_labels[i] == part.part_id) mask[static_cast<size_t>(i)] = 1;
    }
  if (tagged.empty()) throw InvalidSpec("object spec tags no affordances");
  for (const auto& [tag, mask] : tagged) {
    Vec heat = Vec::Zero(spec.point_count);
    bool any = false;
    for (Eigen::Index i = 0; i < heat.size(); ++i) {
      heat[i] = mask[static_cast<size_t>(i)] ? 1.0 : 0.0;
      any = any || mask[static_cast<size_t>(i)];
    }
    if (!any) throw InvalidSpec("affordance '" + tag + "' maps to no sampled points");
    cloud.heatmaps[tag] = heat;
  }
  return cloud;
}

/// Replaces each binary heatmap with exp(-d / decay), d = Euclidean distance
/// to the nearest tagged point: 1 on the part, decaying monotonically outside.
inline void smooth_heatmaps(PointCloud& cloud, double decay = 0.05) {
  if (decay <= 0) throw InvalidSpec("heatmap decay must be positive");
  for (auto& [tag, heat] : cloud.heatmaps) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < heat.size(); ++i)
      if (heat[i] >= 0.5) support.push_back(i);
    if (support.empty()) continue;
    Vec smoothed(heat.size());
    for (Eigen::Index i = 0; i < heat.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j : support)
        best = std::min(best, (cloud.points.row(i) - cloud.points.row(j)).norm());
      smoothed[i] = std::exp(-best / decay);
    }
    heat = smoothed;
  }
}

/// Renders the donor so that only the tagged part stays foreground — the image
/// exemplar used as a visual prompt for that affordance.
inline Exemplar make_exemplar(const PointCloud& donor, const std::string& donor_id,
                              const std::string& affordance, const std::vector<int>& tagged_parts,
                              const Camera& camera) {
  ViewProjection proj = project_points(donor, camera);
  Exemplar e;
  e.affordance = affordance;
  e.donor_object = donor_id;
  e.part_ids = proj.part_id_buffer;
  for (Eigen::Index r = 0; r < e.part_ids.rows(); ++r)
    for (Eigen::Index c = 0; c < e.part_ids.cols(); ++c) {
      int& id = e.part_ids(r, c);
      if (id < 0) continue;
      bool keep = false;
      for (int t : tagged_parts) keep = keep || (id == t);
      if (!keep) id = -1;
    }
  return e;
}

/// part ids tagged with `affordance` in this spec (usually one).
inline std::vector<int> tagged_part_ids(const SyntheticObjectSpec& spec,
                                        const std::string& affordance) {
  std::vector<int> ids;
  for (const PartSpec& part : spec.parts)
    for (const std::string& tag : part.affordances)
      if (tag == affordance) {
        bool seen = false;
        for (int id : ids) seen = seen || id == part.part_id;
        if (!seen) ids.push_back(part.part_id);
      }
  return ids;
}

/// Affordance tags present in a category's spec, sorted for determinism.
inline std::vector<std::string> category_affordances(const std::string& category) {
  const SyntheticObjectSpec spec = make_object_spec(category, "probe", 0);
  std::vector<std::string> tags;
  for (const PartSpec& part : spec.parts)
    for (const std::string& tag : part.affordances) {
      bool seen = false;
      for (const std::string& t : tags) seen = seen || t == tag;
      if (!seen) tags.push_back(tag);
    }
  std::sort(tags.begin(), tags.end());
  return tags;
}

}  // namespace affseg
