// Teacher encoder invariants and 2D-to-3D feature lifting: fidelity on
// synthetic views, view-order invariance, occlusion fallbacks, and the PCA
// false-color projection.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "affseg/camera.hpp"
#include "affseg/lifting.hpp"
#include "affseg/point_cloud.hpp"
#include "affseg/teacher.hpp"

#include "test_support.hpp"

using namespace affseg;

namespace {

/// A view whose only meaningful content is the part-id buffer.
ViewProjection buffer_view(const Eigen::MatrixXi& part_ids) {
  ViewProjection view;
  view.part_id_buffer = part_ids;
  return view;
}

}  // namespace

TEST_CASE("procedural teacher maps parts to fixed orthonormal embeddings", "[lifting]") {
  const ProceduralTeacher teacher(16, 8, 0.0, 7);
  REQUIRE(teacher.feature_dim() == 16);
  REQUIRE(teacher.num_parts() == 8);

  Mat e(16, 8);
  for (int p = 0; p < 8; ++p) e.col(p) = teacher.part_embedding(p);
  const Mat gram = e.transpose() * e;
  REQUIRE((gram - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);

  // Same constructor arguments give the same embeddings; a different seed
  // gives different ones.
  const ProceduralTeacher twin(16, 8, 0.0, 7);
  const ProceduralTeacher other(16, 8, 0.0, 8);
  REQUIRE(teacher.part_embedding(3) == twin.part_embedding(3));
  REQUIRE((teacher.part_embedding(3) - other.part_embedding(3)).norm() > 1e-3);

  REQUIRE_THROWS_AS(teacher.part_embedding(-1), InvalidInput);
  REQUIRE_THROWS_AS(teacher.part_embedding(8), InvalidInput);
  REQUIRE_THROWS_AS(ProceduralTeacher(4, 5), InvalidConfig);   // parts > dim
  REQUIRE_THROWS_AS(ProceduralTeacher(0, 1), InvalidConfig);
  REQUIRE_THROWS_AS(ProceduralTeacher(8, 4, -0.1), InvalidConfig);
}

TEST_CASE("teacher encodes foreground pixels exactly and background to zero", "[lifting]") {
  const ProceduralTeacher teacher(16, 8, 0.0, 7);
  Eigen::MatrixXi ids = Eigen::MatrixXi::Constant(4, 5, -1);
  ids(0, 0) = 0;
  ids(1, 2) = 3;
  ids(3, 4) = 7;
  const FeatureGrid grid = teacher.encode(buffer_view(ids));

  REQUIRE(grid.height == 4);
  REQUIRE(grid.width == 5);
  REQUIRE(grid.channels == 16);
  REQUIRE(grid.cell(0, 0) == teacher.part_embedding(0));
  REQUIRE(grid.cell(1, 2) == teacher.part_embedding(3));
  REQUIRE(grid.cell(3, 4) == teacher.part_embedding(7));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) {
      if (ids(r, c) >= 0) continue;
      INFO("pixel " << r << "," << c);
      REQUIRE(grid.cell(r, c).norm() == 0.0);
    }

  Eigen::MatrixXi bad = ids;
  bad(2, 2) = 8;  // beyond num_parts
  REQUIRE_THROWS_AS(teacher.encode(buffer_view(bad)), InvalidInput);
}

TEST_CASE("teacher noise is deterministic and leaves background unchanged", "[lifting]") {
  Eigen::MatrixXi ids = Eigen::MatrixXi::Constant(3, 3, -1);
  ids(1, 1) = 2;
  ids(0, 2) = 5;

  const ProceduralTeacher noisy(16, 8, 0.05, 7);
  const FeatureGrid a = noisy.encode(buffer_view(ids));
  const FeatureGrid b = noisy.encode(buffer_view(ids));
  REQUIRE(a.data == b.data);  // pure function of the buffer

  const ProceduralTeacher clean(16, 8, 0.0, 7);
  const FeatureGrid base = clean.encode(buffer_view(ids));
  REQUIRE((a.data.row(1 * 3 + 1) - base.data.row(1 * 3 + 1)).norm() > 0.0);
  REQUIRE(a.data.row(0).norm() == 0.0);  // background pixels stay exactly zero
  REQUIRE(a.data.row(2 * 3 + 0).norm() == 0.0);
}

TEST_CASE("feature grid sampling rounds to the nearest cell and clamps", "[lifting]") {
  FeatureGrid grid;
  grid.height = 2;
  grid.width = 3;
  grid.channels = 1;
  grid.stride = 2;
  grid.data = Mat(6, 1);
  for (int i = 0; i < 6; ++i) grid.data(i, 0) = i;

  REQUIRE(grid.sample(0, 0)[0] == 0.0);   // cell (0,0)
  REQUIRE(grid.sample(2, 4)[0] == 5.0);   // exact cell (1,2)
  REQUIRE(grid.sample(1, 3)[0] == 5.0);   // rounds half away from zero
  REQUIRE(grid.sample(9, 9)[0] == 5.0);   // clamped to the last cell
  REQUIRE(grid.sample(0, 5)[0] == 2.0);   // row clamp independent of column
}

TEST_CASE("lifting recovers exact part embeddings for visible points", "[lifting]") {
  // Eight labeled points on a circle: every point faces at least one of the
  // four ring cameras, and with zero teacher noise each view contributes the
  // exact embedding of the point's own label.
  PointCloud cloud;
  cloud.points.resize(8, 3);
  cloud.part_labels.resize(8);
  for (int i = 0; i < 8; ++i) {
    const double th = 2.0 * M_PI * i / 8.0;
    cloud.points.row(i) << 0.8 * std::cos(th), 0.8 * std::sin(th), 0.02 * i;
    cloud.part_labels[i] = i;
  }

  const ProceduralTeacher teacher(16, 8, 0.0, 7);
  const std::vector<Camera> cams = camera_ring(4);
  const LiftedFeatureSet set = lift_features(cloud, cams, teacher);

  REQUIRE(set.size() == 8);
  REQUIRE(set.dim() == 16);
  REQUIRE(set.view_count == 4);
  REQUIRE(set.teacher_name == "procedural");
  for (int i = 0; i < 8; ++i) {
    INFO("point " << i);
    REQUIRE(set.visibility_count[i] >= 1);
    REQUIRE(set.fallback[static_cast<size_t>(i)] == 0);
    const Vec expect = teacher.part_embedding(i);
    REQUIRE((set.features.row(i).transpose() - expect).norm() < 1e-9);
  }
}

TEST_CASE("lifting is invariant to the order of the camera list", "[lifting]") {
  Rng rng(2024);
  PointCloud cloud = support::random_cloud(rng, 40, /*labeled=*/true, /*parts=*/8);
  const ProceduralTeacher teacher(16, 8, 0.0, 7);

  std::vector<Camera> cams = camera_ring(6);
  const LiftedFeatureSet a = lift_features(cloud, cams, teacher);

  std::mt19937 gen(99);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(cams.begin(), cams.end(), gen);
    const LiftedFeatureSet b = lift_features(cloud, cams, teacher);
    REQUIRE(a.features == b.features);  // bitwise: canonical reduction order
    REQUIRE(a.visibility_count == b.visibility_count);
    REQUIRE(a.fallback == b.fallback);
  }
}

TEST_CASE("occluded points fall back to their nearest visible neighbor", "[lifting]") {
  // One camera on the +x axis: the nearer point hides the farther one, which
  // must copy its feature and carry the fallback flag.
  PointCloud cloud;
  cloud.points.resize(3, 3);
  cloud.points.row(0) << 0.5, 0.0, 0.0;    // nearest to the camera
  cloud.points.row(1) << -0.5, 0.0, 0.0;   // hidden directly behind point 0
  cloud.points.row(2) << 0.0, 0.45, 0.0;   // visible off to the side
  cloud.part_labels.resize(3);
  cloud.part_labels << 1, 2, 3;

  const std::vector<Camera> cams = camera_ring(1, /*elevation_deg=*/0.0);
  const ProceduralTeacher teacher(16, 8, 0.0, 7);
  const LiftedFeatureSet set = lift_features(cloud, cams, teacher);

  REQUIRE(set.visibility_count[0] == 1);
  REQUIRE(set.visibility_count[1] == 0);
  REQUIRE(set.visibility_count[2] == 1);
  REQUIRE(set.fallback == std::vector<char>{0, 1, 0});
  // Nearest visible neighbor of the hidden point is point 2 (distance
  // sqrt(0.25 + 0.2025) < 1.0 to point 0).
  REQUIRE(set.features.row(1) == set.features.row(2));
  REQUIRE((set.features.row(0).transpose() - teacher.part_embedding(1)).norm() < 1e-12);
  REQUIRE((set.features.row(2).transpose() - teacher.part_embedding(3)).norm() < 1e-12);
}

TEST_CASE("lifting validates its inputs and reports total failure", "[lifting]") {
  const ProceduralTeacher teacher(16, 8, 0.0, 7);
  Rng rng(5);
  PointCloud cloud = support::random_cloud(rng, 10, true, 8);

  SECTION("no cameras") {
    REQUIRE_THROWS_AS(lift_features(cloud, {}, teacher), InvalidInput);
  }
  SECTION("empty cloud") {
    PointCloud empty;
    empty.points.resize(0, 3);
    REQUIRE_THROWS_AS(lift_features(empty, camera_ring(2), teacher), InvalidInput);
  }
  SECTION("unnormalized cloud") {
    PointCloud big = cloud;
    big.points *= 3.0;
    REQUIRE_THROWS_AS(lift_features(big, camera_ring(2), teacher), InvalidInput);
  }
  SECTION("every point behind the camera") {
    Camera behind;  // identity rotation, looking along +z from the origin
    behind.extrinsic(2, 3) = -5.0;  // scene ends up at z ~ -5, behind the lens
    REQUIRE_THROWS_AS(lift_features(cloud, {behind}, teacher), LiftingFailed);
  }
}

TEST_CASE("pca false-coloring matches the closed-form axis-aligned case", "[lifting]") {
  // Six points on the coordinate axes: the covariance is exactly diagonal, so
  // the three channels are min-max rescales of x, y, z ordered by variance.
  Mat f(6, 3);
  f << 3, 0, 0, -3, 0, 0, 0, 2, 0, 0, -2, 0, 0, 0, 1, 0, 0, -1;
  const Mat rgb = pca_to_rgb(f);

  Mat expect(6, 3);
  expect << 1.0, 0.5, 0.5,   // +x extreme on the top-variance channel
            0.0, 0.5, 0.5,
            0.5, 1.0, 0.5,
            0.5, 0.0, 0.5,
            0.5, 0.5, 1.0,
            0.5, 0.5, 0.0;
  REQUIRE((rgb - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pca false-coloring collapses rank-deficient channels to gray", "[lifting]") {
  // Features vary along two directions only; the third channel has no
  // variance left and must render mid-gray.
  Rng rng(17);
  Mat basis = support::random_normal_matrix(rng, 2, 5);
  Mat coeffs = support::random_matrix(rng, 30, 2);
  Mat f = coeffs * basis;  // rank 2, 5 channels
  const Mat rgb = pca_to_rgb(f);
  REQUIRE(rgb.rows() == 30);
  REQUIRE((rgb.col(2).array() - 0.5).abs().maxCoeff() < 1e-9);
  REQUIRE(rgb.col(0).minCoeff() == 0.0);
  REQUIRE(rgb.col(0).maxCoeff() == 1.0);

  REQUIRE_THROWS_AS(pca_to_rgb(Mat::Zero(2, 4)), InvalidInput);  // < 3 points
  REQUIRE_THROWS_AS(pca_to_rgb(Mat::Zero(5, 2)), InvalidInput);  // < 3 channels
}

TEST_CASE("teacher factory returns stubs for external model names", "[lifting]") {
  auto procedural = make_teacher("procedural", 16, 8, 0.0, 7);
  REQUIRE(procedural->name() == "procedural");
  REQUIRE(procedural->feature_dim() == 16);

  auto external = make_teacher("some-vision-model", 768, 8, 0.0, 7);
  REQUIRE(external->feature_dim() == 768);
  Eigen::MatrixXi ids = Eigen::MatrixXi::Constant(2, 2, 0);
  REQUIRE_THROWS_AS(external->encode(buffer_view(ids)), InvalidConfig);
}
