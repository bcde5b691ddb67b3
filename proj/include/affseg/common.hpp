#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace affseg {

inline constexpr const char* kVersion = "1.0.0";

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using MatX2i = Eigen::Matrix<int, Eigen::Dynamic, 2>;
using VecI = Eigen::VectorXi;

struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& msg) : std::runtime_error("invalid input: " + msg) {}
};

struct InvalidConfig : std::runtime_error {
  explicit InvalidConfig(const std::string& msg) : std::runtime_error("invalid config: " + msg) {}
};

struct InvalidSpec : std::runtime_error {
  explicit InvalidSpec(const std::string& msg) : std::runtime_error("invalid object spec: " + msg) {}
};

struct InvalidPrompt : std::runtime_error {
  explicit InvalidPrompt(const std::string& msg) : std::runtime_error("invalid prompt: " + msg) {}
};

struct LiftingFailed : std::runtime_error {
  explicit LiftingFailed(const std::string& msg) : std::runtime_error("lifting failed: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

struct TrainingAborted : std::runtime_error {
  explicit TrainingAborted(const std::string& msg) : std::runtime_error("training aborted: " + msg) {}
};

/// 64-bit FNV-1a, used for stable string hashing (prompt text, noise streams).
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace affseg
