#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"

namespace affseg {

/// Writes a binary little-endian PLY with float32 x/y/z and, when the cloud
/// carries part labels, a uchar part_label property.
inline void save_ply(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("ply: cannot open '" + path + "' for writing");
  const bool labeled = cloud.has_labels();
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (labeled) out << "property uchar part_label\n";
  out << "end_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    float xyz[3] = {static_cast<float>(cloud.points(static_cast<Eigen::Index>(i), 0)),
                    static_cast<float>(cloud.points(static_cast<Eigen::Index>(i), 1)),
                    static_cast<float>(cloud.points(static_cast<Eigen::Index>(i), 2))};
    out.write(reinterpret_cast<const char*>(xyz), 12);
    if (labeled) {
      const uint8_t label = static_cast<uint8_t>(cloud.part_labels[static_cast<Eigen::Index>(i)]);
      out.write(reinterpret_cast<const char*>(&label), 1);
    }
  }
  if (!out) throw IoError("ply: write to '" + path + "' failed");
}

/// Writes a binary little-endian PLY with float32 x/y/z and uchar r/g/b
/// columns; `rgb` holds per-point channel values in [0, 1].
inline void save_ply_rgb(const PointCloud& cloud, const Mat& rgb, const std::string& path) {
  if (rgb.rows() != static_cast<Eigen::Index>(cloud.size()) || rgb.cols() != 3)
    throw InvalidInput("ply: rgb matrix must be N x 3");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("ply: cannot open '" + path + "' for writing");
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(cloud.size()); ++i) {
    float xyz[3] = {static_cast<float>(cloud.points(i, 0)), static_cast<float>(cloud.points(i, 1)),
                    static_cast<float>(cloud.points(i, 2))};
    out.write(reinterpret_cast<const char*>(xyz), 12);
    for (int c = 0; c < 3; ++c) {
      const double clamped = std::min(1.0, std::max(0.0, rgb(i, c)));
      const uint8_t byte = static_cast<uint8_t>(std::lround(clamped * 255.0));
      out.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  if (!out) throw IoError("ply: write to '" + path + "' failed");
}

namespace detail {

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  return -1;
}

}  // namespace detail

/// Reads a binary little-endian PLY written by save_ply (extra scalar vertex
/// properties are skipped; list properties and other formats are rejected).
inline PointCloud load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("ply: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw IoError("ply: '" + path + "' is not a PLY file");

  struct Prop {
    std::string name;
    std::string type;
    int offset = 0;
  };
  std::vector<Prop> props;
  long vertex_count = -1;
  int stride = 0;
  bool in_vertex = false, format_ok = false;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw IoError("ply: '" + path + "' uses unsupported format '" + fmt + "'");
      format_ok = true;
    } else if (tok == "element") {
      std::string kind;
      long count = 0;
      ls >> kind >> count;
      in_vertex = (kind == "vertex");
      if (in_vertex) vertex_count = count;
      else if (count > 0) throw IoError("ply: '" + path + "' has unsupported element '" + kind + "'");
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw IoError("ply: '" + path + "' has unsupported list property");
      const int sz = detail::ply_type_size(type);
      if (sz < 0) throw IoError("ply: '" + path + "' has unknown property type '" + type + "'");
      props.push_back({name, type, stride});
      stride += sz;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!format_ok || vertex_count < 0) throw IoError("ply: '" + path + "' has a malformed header");

  int off_x = -1, off_y = -1, off_z = -1, off_label = -1;
  for (const Prop& p : props) {
    if (p.name == "x" || p.name == "y" || p.name == "z") {
      if (p.type != "float" && p.type != "float32")
        throw IoError("ply: '" + path + "' stores coordinates as '" + p.type + "'");
      (p.name == "x" ? off_x : p.name == "y" ? off_y : off_z) = p.offset;
    } else if (p.name == "part_label") {
      if (p.type != "uchar" && p.type != "uint8")
        throw IoError("ply: '" + path + "' stores part_label as '" + p.type + "'");
      off_label = p.offset;
    }
  }
  if (off_x < 0 || off_y < 0 || off_z < 0)
    throw IoError("ply: '" + path + "' lacks float x/y/z properties");

  PointCloud cloud;
  cloud.points.resize(vertex_count, 3);
  if (off_label >= 0) cloud.part_labels.resize(vertex_count);
  std::vector<char> record(static_cast<size_t>(stride));
  for (long i = 0; i < vertex_count; ++i) {
    if (!in.read(record.data(), stride)) throw IoError("ply: '" + path + "' truncated");
    float xyz[3];
    std::memcpy(&xyz[0], record.data() + off_x, 4);
    std::memcpy(&xyz[1], record.data() + off_y, 4);
    std::memcpy(&xyz[2], record.data() + off_z, 4);
    cloud.points(i, 0) = xyz[0];
    cloud.points(i, 1) = xyz[1];
    cloud.points(i, 2) = xyz[2];
    if (off_label >= 0) {
      uint8_t label = 0;
      std::memcpy(&label, record.data() + off_label, 1);
      cloud.part_labels[i] = label;
    }
  }
  return cloud;
}

}  // namespace affseg
