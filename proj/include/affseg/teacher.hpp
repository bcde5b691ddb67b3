#pragma once

#include <memory>
#include <string>

#include <Eigen/QR>

#include "affseg/camera.hpp"
#include "affseg/common.hpp"
#include "affseg/rng.hpp"

namespace affseg {

/// Dense 2D feature map produced by a teacher: one d-dim vector per cell on a
/// grid whose cells cover `stride` render pixels each.
struct FeatureGrid {
  int height = 0, width = 0, channels = 0, stride = 1;
  Mat data;  // (height*width) x channels, row-major by (row * width + col)

  Vec cell(int row, int col) const { return data.row(row * width + col).transpose(); }

  /// Nearest-cell sample for a render-space pixel.
  Vec sample(int render_row, int render_col) const {
    int r = static_cast<int>(std::lround(double(render_row) / stride));
    int c = static_cast<int>(std::lround(double(render_col) / stride));
    r = std::min(std::max(r, 0), height - 1);
    c = std::min(std::max(c, 0), width - 1);
    return cell(r, c);
  }
};

/// Frozen 2D encoder interface: rendered view buffers in, dense features out.
class TeacherEncoder {
 public:
  virtual ~TeacherEncoder() = default;
  virtual int feature_dim() const = 0;
  virtual std::string name() const = 0;
  virtual FeatureGrid encode(const ViewProjection& view) const = 0;
};

/// Deterministic desk-scale teacher. Each part id maps to a fixed random
/// orthonormal embedding; background pixels map to the zero vector; optional
/// zero-mean Gaussian pixel noise is hashed from (seed, buffer, pixel) so the
/// output is a pure function of the view content.
class ProceduralTeacher : public TeacherEncoder {
 public:
  ProceduralTeacher(int feature_dim = 16, int num_parts = 8, double noise_scale = 0.0,
                    uint64_t seed = 7)
      : dim_(feature_dim), noise_scale_(noise_scale), seed_(seed) {
    if (feature_dim < 1) throw InvalidConfig("procedural teacher: feature_dim must be positive");
    if (num_parts < 1 || num_parts > feature_dim)
      throw InvalidConfig("procedural teacher: need 1 <= num_parts <= feature_dim");
    if (noise_scale < 0) throw InvalidConfig("procedural teacher: noise_scale must be >= 0");
    Rng rng(seed, 0xfacade);
    Mat g(dim_, num_parts);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(dim_, num_parts);
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      Eigen::Index argmax = 0;
      q.col(c).cwiseAbs().maxCoeff(&argmax);
      if (q(argmax, c) < 0) q.col(c) = -q.col(c);
    }
    embeddings_ = q;
  }

  int feature_dim() const override { return dim_; }
  std::string name() const override { return "procedural"; }
  int num_parts() const { return static_cast<int>(embeddings_.cols()); }
  uint64_t seed() const { return seed_; }
  double noise_scale() const { return noise_scale_; }

  Vec part_embedding(int part_id) const {
    if (part_id < 0 || part_id >= num_parts())
      throw InvalidInput("procedural teacher: part id out of range");
    return embeddings_.col(part_id);
  }

  FeatureGrid encode(const ViewProjection& view) const override {
    const int h = static_cast<int>(view.part_id_buffer.rows());
    const int w = static_cast<int>(view.part_id_buffer.cols());
    FeatureGrid grid;
    grid.height = h;
    grid.width = w;
    grid.channels = dim_;
    grid.stride = 1;
    grid.data = Mat::Zero(static_cast<Eigen::Index>(h) * w, dim_);

    uint64_t view_key = 0;
    if (noise_scale_ > 0) {
      view_key = fnv1a64(view.part_id_buffer.data(),
                         static_cast<size_t>(h) * w * sizeof(int), seed_);
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const int part = view.part_id_buffer(r, c);
        if (part < 0) continue;  // background stays zero
        if (part >= num_parts())
          throw InvalidInput("procedural teacher: view references unknown part id");
        Eigen::Index row = static_cast<Eigen::Index>(r) * w + c;
        grid.data.row(row) = embeddings_.col(part).transpose();
        if (noise_scale_ > 0) {
          const uint64_t pixel_key = view_key ^ (0x9e3779b97f4a7c15ULL * (uint64_t(row) + 1));
          for (int ch = 0; ch < dim_; ++ch)
            grid.data(row, ch) += noise_scale_ * hashed_normal(pixel_key + uint64_t(ch) * 0x2545f4914f6cdd1dULL);
        }
      }
    }
    return grid;
  }

 private:
  int dim_;
  double noise_scale_;
  uint64_t seed_;
  Mat embeddings_;  // dim_ x num_parts, orthonormal columns
};

/// Placeholder adapter for an external vision foundation model. The interface
/// is the integration point; no weights ship with this library, so encoding
/// always fails with a clear message.
class ExternalTeacherStub : public TeacherEncoder {
 public:
  ExternalTeacherStub(std::string model_name, int feature_dim)
      : name_(std::move(model_name)), dim_(feature_dim) {}
  int feature_dim() const override { return dim_; }
  std::string name() const override { return name_; }
  FeatureGrid encode(const ViewProjection&) const override {
    throw InvalidConfig("teacher '" + name_ +
                        "' is an external-model stub; bundle an adapter that implements encode()");
  }

 private:
  std::string name_;
  int dim_;
};

inline std::unique_ptr<TeacherEncoder> make_teacher(const std::string& name, int feature_dim,
                                                    int num_parts, double noise_scale,
                                                    uint64_t seed) {
  if (name == "procedural")
    return std::make_unique<ProceduralTeacher>(feature_dim, num_parts, noise_scale, seed);
  return std::make_unique<ExternalTeacherStub>(name, feature_dim);
}

}  // namespace affseg
