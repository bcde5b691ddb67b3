#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Geometry>

#include "affseg/common.hpp"
#include "affseg/point_cloud.hpp"

namespace affseg {

/// Pinhole camera: 4x4 world-to-camera rigid transform plus intrinsics.
/// Camera frame: +z forward (into the scene), +x right, +y down (image rows).
struct Camera {
  Mat4 extrinsic = Mat4::Identity();  // world -> camera
  double focal = 200.0;               // pixels
  double cx = 111.5, cy = 111.5;      // principal point (col, row), pixels
  int height = 224, width = 224;

  Vec3 to_camera(const Vec3& p_world) const {
    return extrinsic.topLeftCorner<3, 3>() * p_world + extrinsic.topRightCorner<3, 1>();
  }

  bool rotation_valid(double tol = 1e-6) const {
    const Mat3 r = extrinsic.topLeftCorner<3, 3>();
    return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
           std::abs(r.determinant() - 1.0) < tol;
  }
};

namespace detail {

inline Camera look_at_origin(const Vec3& position, double focal, int height, int width) {
  Camera cam;
  cam.focal = focal;
  cam.height = height;
  cam.width = width;
  cam.cx = (width - 1) * 0.5;
  cam.cy = (height - 1) * 0.5;

  const Vec3 forward = (-position).normalized();  // camera looks at the origin
  Vec3 up_world(0.0, 0.0, 1.0);
  if (std::abs(forward.dot(up_world)) > 0.999) up_world = Vec3(0.0, 1.0, 0.0);
  const Vec3 right = forward.cross(up_world).normalized();
  const Vec3 down = forward.cross(right).normalized();  // +y is down in image space

  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  cam.extrinsic.setIdentity();
  cam.extrinsic.topLeftCorner<3, 3>() = r;
  cam.extrinsic.topRightCorner<3, 1>() = -r * position;
  return cam;
}

}  // namespace detail

/// V cameras on a single ring: equal azimuth steps of 360/V degrees, fixed
/// elevation above the xy-plane, all at the given radius looking at the origin.
inline std::vector<Camera> camera_ring(int views, double elevation_deg = 20.0, double radius = 2.2,
                                       int height = 224, int width = 224, double focal = 200.0) {
  if (views < 1) throw InvalidInput("camera_ring: need at least one view");
  if (radius <= 1.0) throw InvalidInput("camera_ring: radius must exceed the unit sphere");
  const double el = elevation_deg * M_PI / 180.0;
  std::vector<Camera> cams;
  cams.reserve(views);
  for (int v = 0; v < views; ++v) {
    const double az = 2.0 * M_PI * v / views;
    const Vec3 pos(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                   radius * std::sin(el));
    cams.push_back(detail::look_at_origin(pos, focal, height, width));
  }
  return cams;
}

/// Result of splatting a cloud into one view. Buffers are row-major H x W,
/// background pixels hold depth = +inf, part id -1, winner -1.
struct ViewProjection {
  MatX2i point_pixel;   // N x 2 (row, col); (-1, -1) when off-screen
  std::vector<char> visible;  // N; true iff the point wins >= 1 pixel
  Mat depth;            // H x W, camera-space depth of the winning point
  Eigen::MatrixXi part_id_buffer;  // H x W, -1 = background
  Eigen::MatrixXi winner;          // H x W, index of the winning point, -1 = none
  std::vector<double> point_depth; // N, camera-space z (negative/0 = behind)

  bool on_screen(int i) const { return point_pixel(i, 0) >= 0; }
};

/// Z-buffer point splatting. Every point is projected through the pinhole
/// model; pixels within splat_radius of the projection are contested, and at
/// each pixel the nearest point wins (equal depths resolve to the lower point
/// index via iteration order). Points behind the camera or projecting outside
/// the image are marked off-screen.
inline ViewProjection project_points(const PointCloud& cloud, const Camera& camera,
                                     double splat_radius = 1.5) {
  const int n = static_cast<int>(cloud.size());
  const int h = camera.height, w = camera.width;
  ViewProjection proj;
  proj.point_pixel = MatX2i::Constant(n, 2, -1);
  proj.visible.assign(n, 0);
  proj.depth = Mat::Constant(h, w, std::numeric_limits<double>::infinity());
  proj.part_id_buffer = Eigen::MatrixXi::Constant(h, w, -1);
  proj.winner = Eigen::MatrixXi::Constant(h, w, -1);
  proj.point_depth.assign(n, 0.0);

  const double r2 = splat_radius * splat_radius;
  const int reach = static_cast<int>(std::floor(splat_radius));

  std::vector<double> proj_row(n), proj_col(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 pc = camera.to_camera(cloud.points.row(i).transpose());
    proj.point_depth[i] = pc.z();
    if (pc.z() <= 1e-9) continue;  // behind the camera
    const double col = camera.cx + camera.focal * pc.x() / pc.z();
    const double row = camera.cy + camera.focal * pc.y() / pc.z();
    const int irow = static_cast<int>(std::lround(row));
    const int icol = static_cast<int>(std::lround(col));
    if (irow < 0 || irow >= h || icol < 0 || icol >= w) continue;
    proj.point_pixel(i, 0) = irow;
    proj.point_pixel(i, 1) = icol;
    proj_row[i] = row;
    proj_col[i] = col;

    for (int dr = -reach; dr <= reach; ++dr) {
      for (int dc = -reach; dc <= reach; ++dc) {
        const int pr = irow + dr, pcix = icol + dc;
        if (pr < 0 || pr >= h || pcix < 0 || pcix >= w) continue;
        const double dy = pr - row, dx = pcix - col;
        if (dy * dy + dx * dx > r2) continue;
        if (pc.z() < proj.depth(pr, pcix)) {
          proj.depth(pr, pcix) = pc.z();
          proj.winner(pr, pcix) = i;
        }
      }
    }
  }

  const bool labeled = cloud.has_labels();
  for (int pr = 0; pr < h; ++pr) {
    for (int pcix = 0; pcix < w; ++pcix) {
      const int win = proj.winner(pr, pcix);
      if (win < 0) continue;
      proj.visible[win] = 1;
      proj.part_id_buffer(pr, pcix) = labeled ? cloud.part_labels[win] : 0;
    }
  }
  return proj;
}

/// The pixel this point actually won that lies nearest to its projection
/// (row-major order breaks exact ties). Returns false when the point is not
/// visible. Feature sampling anchors here rather than at the raw projection,
/// so occluded-side features never bleed across depth boundaries.
inline bool nearest_won_pixel(const ViewProjection& proj, int point_index, int* out_row, int* out_col) {
  if (!proj.visible[point_index] || !proj.on_screen(point_index)) return false;
  const int irow = proj.point_pixel(point_index, 0);
  const int icol = proj.point_pixel(point_index, 1);
  const int h = static_cast<int>(proj.depth.rows());
  const int w = static_cast<int>(proj.depth.cols());
  int best_r = -1, best_c = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int dr = -2; dr <= 2; ++dr) {
    for (int dc = -2; dc <= 2; ++dc) {
      const int pr = irow + dr, pcix = icol + dc;
      if (pr < 0 || pr >= h || pcix < 0 || pcix >= w) continue;
      if (proj.winner(pr, pcix) != point_index) continue;
      const double d = double(dr) * dr + double(dc) * dc;
      if (d < best_d) {
        best_d = d;
        best_r = pr;
        best_c = pcix;
      }
    }
  }
  if (best_r < 0) return false;
  *out_row = best_r;
  *out_col = best_c;
  return true;
}

}  // namespace affseg
