#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "affseg/common.hpp"

namespace affseg {

/// Minimal named-array container (".arr"): a flat, little-endian binary file
/// holding an ordered list of (name, dtype, shape, payload) records. Used for
/// lifted feature sets, checkpoints, and cached intermediates. Entries are
/// written in insertion order so equal content produces identical bytes.
class ArrayFile {
 public:
  enum class DType : uint8_t { F64 = 0, F32 = 1, I32 = 2, U8 = 3, Str = 4 };

  struct Entry {
    DType dtype = DType::F64;
    std::vector<uint64_t> shape;
    std::vector<double> values;  // numeric payloads, row-major
    std::string text;            // Str payloads

    uint64_t element_count() const {
      uint64_t n = 1;
      for (uint64_t d : shape) n *= d;
      return n;
    }
  };

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  size_t size() const { return order_.size(); }
  const std::vector<std::string>& names() const { return order_; }

  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("array file: missing entry '" + name + "'");
    return entries_[it->second];
  }

  void put(const std::string& name, const Mat& m, DType dtype = DType::F64) {
    Entry e;
    e.dtype = dtype;
    e.shape = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    e.values.resize(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        e.values[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    insert(name, std::move(e));
  }

  void put(const std::string& name, const Vec& v, DType dtype = DType::F64) {
    Entry e;
    e.dtype = dtype;
    e.shape = {static_cast<uint64_t>(v.size())};
    e.values.assign(v.data(), v.data() + v.size());
    insert(name, std::move(e));
  }

  void put(const std::string& name, const VecI& v) {
    Entry e;
    e.dtype = DType::I32;
    e.shape = {static_cast<uint64_t>(v.size())};
    e.values.resize(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) e.values[static_cast<size_t>(i)] = v[i];
    insert(name, std::move(e));
  }

  void put_string(const std::string& name, const std::string& text) {
    Entry e;
    e.dtype = DType::Str;
    e.shape = {text.size()};
    e.text = text;
    insert(name, std::move(e));
  }

  Mat mat(const std::string& name) const {
    const Entry& e = at(name);
    if (e.shape.size() != 2) throw IoError("array file: '" + name + "' is not 2-D");
    Mat m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = e.values[static_cast<size_t>(r * m.cols() + c)];
    return m;
  }

  Vec vec(const std::string& name) const {
    const Entry& e = at(name);
    if (e.shape.size() != 1) throw IoError("array file: '" + name + "' is not 1-D");
    Vec v(static_cast<Eigen::Index>(e.shape[0]));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = e.values[static_cast<size_t>(i)];
    return v;
  }

  VecI veci(const std::string& name) const {
    const Entry& e = at(name);
    if (e.shape.size() != 1) throw IoError("array file: '" + name + "' is not 1-D");
    VecI v(static_cast<Eigen::Index>(e.shape[0]));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v[i] = static_cast<int>(e.values[static_cast<size_t>(i)]);
    return v;
  }

  std::string str(const std::string& name) const {
    const Entry& e = at(name);
    if (e.dtype != DType::Str) throw IoError("array file: '" + name + "' is not a string");
    return e.text;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("array file: cannot open '" + path + "' for writing");
    out.write(kMagic, 8);
    write_u32(out, static_cast<uint32_t>(order_.size()));
    for (const std::string& name : order_) {
      const Entry& e = entries_[index_.at(name)];
      write_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const uint8_t dt = static_cast<uint8_t>(e.dtype);
      out.write(reinterpret_cast<const char*>(&dt), 1);
      const uint8_t nd = static_cast<uint8_t>(e.shape.size());
      out.write(reinterpret_cast<const char*>(&nd), 1);
      for (uint64_t d : e.shape) write_u64(out, d);
      write_payload(out, e);
    }
    if (!out) throw IoError("array file: write to '" + path + "' failed");
  }

  static ArrayFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("array file: cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
      throw IoError("array file: '" + path + "' has a bad header");
    const uint32_t count = read_u32(in, path);
    ArrayFile f;
    for (uint32_t i = 0; i < count; ++i) {
      const uint32_t name_len = read_u32(in, path);
      std::string name(name_len, '\0');
      if (!in.read(name.data(), name_len)) throw IoError("array file: '" + path + "' truncated");
      uint8_t dt = 0, nd = 0;
      in.read(reinterpret_cast<char*>(&dt), 1);
      in.read(reinterpret_cast<char*>(&nd), 1);
      if (!in || dt > 4) throw IoError("array file: '" + path + "' has a bad record");
      Entry e;
      e.dtype = static_cast<DType>(dt);
      e.shape.resize(nd);
      for (uint8_t d = 0; d < nd; ++d) e.shape[d] = read_u64(in, path);
      read_payload(in, e, path);
      f.insert(name, std::move(e));
    }
    return f;
  }

 private:
  static constexpr char kMagic[9] = "AFSARR1\0";

  void insert(const std::string& name, Entry&& e) {
    auto it = index_.find(name);
    if (it != index_.end()) {
      entries_[it->second] = std::move(e);
      return;
    }
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    order_.push_back(name);
  }

  static void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  static uint32_t read_u32(std::ifstream& in, const std::string& path) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("array file: '" + path + "' truncated");
    return v;
  }
  static uint64_t read_u64(std::ifstream& in, const std::string& path) {
    uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError("array file: '" + path + "' truncated");
    return v;
  }

  static void write_payload(std::ofstream& out, const Entry& e) {
    switch (e.dtype) {
      case DType::F64:
        out.write(reinterpret_cast<const char*>(e.values.data()),
                  static_cast<std::streamsize>(e.values.size() * 8));
        break;
      case DType::F32: {
        std::vector<float> buf(e.values.begin(), e.values.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * 4));
        break;
      }
      case DType::I32: {
        std::vector<int32_t> buf(e.values.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<int32_t>(e.values[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * 4));
        break;
      }
      case DType::U8: {
        std::vector<uint8_t> buf(e.values.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<uint8_t>(e.values[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        break;
      }
      case DType::Str:
        out.write(e.text.data(), static_cast<std::streamsize>(e.text.size()));
        break;
    }
  }

  static void read_payload(std::ifstream& in, Entry& e, const std::string& path) {
    const uint64_t n = e.element_count();
    auto fail = [&] { throw IoError("array file: '" + path + "' truncated"); };
    switch (e.dtype) {
      case DType::F64:
        e.values.resize(n);
        if (!in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(n * 8))) fail();
        break;
      case DType::F32: {
        std::vector<float> buf(n);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4))) fail();
        e.values.assign(buf.begin(), buf.end());
        break;
      }
      case DType::I32: {
        std::vector<int32_t> buf(n);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4))) fail();
        e.values.assign(buf.begin(), buf.end());
        break;
      }
      case DType::U8: {
        std::vector<uint8_t> buf(n);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) fail();
        e.values.assign(buf.begin(), buf.end());
        break;
      }
      case DType::Str: {
        e.text.resize(n);
        if (n && !in.read(e.text.data(), static_cast<std::streamsize>(n))) fail();
        break;
      }
    }
  }

  std::vector<Entry> entries_;
  std::vector<std::string> order_;
  std::map<std::string, size_t> index_;
};

}  // namespace affseg
