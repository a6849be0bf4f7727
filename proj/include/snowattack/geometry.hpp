#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <optional>
#include <random>
#include <vector>

#include "snowattack/error.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/scenefmt.hpp"

namespace snow {

using Point3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

/// Points with camera-space depth at or below this are behind the camera.
inline constexpr double kBehindCameraEpsilon = 1e-4;

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// Rigid transform between two camera frames: x' = R x + t.
struct RelativeTransform {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return R * x + t; }
  Eigen::Matrix<double, 3, 4> matrix() const {
    Eigen::Matrix<double, 3, 4> m;
    m << R, t;
    return m;
  }
};

/// Maps through `first`, then through `after`.
inline RelativeTransform compose(const RelativeTransform& after, const RelativeTransform& first) {
  return {after.R * first.R, after.R * first.t + after.t};
}

inline Eigen::Vector3d to_camera(const CameraPose& pose, const Point3& world) {
  return pose.rotation() * world + pose.translation();
}

/// Projects a camera-space point; nullopt when it is at or behind the camera plane.
inline std::optional<PixelDepth> try_project_camera(const Eigen::Matrix3d& K, const Eigen::Vector3d& cam) {
  if (!(cam.z() > kBehindCameraEpsilon)) return std::nullopt;
  const Eigen::Vector3d p = K * cam;
  return PixelDepth{p.x() / p.z(), p.y() / p.z(), cam.z()};
}

inline std::optional<PixelDepth> try_project(const CameraPose& pose, const Point3& world) {
  return try_project_camera(pose.K, to_camera(pose, world));
}

inline PixelDepth project(const CameraPose& pose, const Point3& world) {
  auto p = try_project(pose, world);
  if (!p) throw GeometryError("project: point at or behind the camera plane");
  return *p;
}

/// d(u, v, depth) / d(camera coordinates) for an upper-triangular K.
inline Eigen::Matrix3d projection_jacobian(const Eigen::Matrix3d& K, const Eigen::Vector3d& cam) {
  const double z = cam.z();
  const double s = 1.0 / (K(2, 2) * z);
  Eigen::Matrix3d J;
  J(0, 0) = K(0, 0) * s;
  J(0, 1) = K(0, 1) * s;
  J(0, 2) = -(K(0, 0) * cam.x() + K(0, 1) * cam.y()) * s / z;
  J(1, 0) = 0.0;
  J(1, 1) = K(1, 1) * s;
  J(1, 2) = -K(1, 1) * cam.y() * s / z;
  J(2, 0) = 0.0;
  J(2, 1) = 0.0;
  J(2, 2) = 1.0;
  return J;
}

inline Point3 unproject(const CameraPose& pose, double u, double v, double depth) {
  if (!(depth > 0.0)) throw GeometryError("unproject: depth must be positive");
  const Eigen::Vector3d ray = pose.K.partialPivLu().solve(Eigen::Vector3d(u, v, 1.0));
  const Eigen::Vector3d cam = ray * (depth / ray.z());
  return pose.rotation().transpose() * (cam - pose.translation());
}

/// Maps camera-t coordinates to camera-(t+1) coordinates.
inline RelativeTransform relative_transform(const CameraPose& pose_t, const CameraPose& pose_t1) {
  const Eigen::Matrix3d R = pose_t1.rotation() * pose_t.rotation().transpose();
  return {R, pose_t1.translation() - R * pose_t.translation()};
}

/// Pixel-extent test: u in [-0.5 - margin, width - 0.5 + margin], same for v.
inline bool inside_frame(const PixelDepth& p, int width, int height, double margin) {
  return p.u >= -0.5 - margin && p.u <= width - 0.5 + margin && p.v >= -0.5 - margin && p.v <= height - 0.5 + margin;
}

inline bool visible_in(const CameraPose& pose, const Point3& world, int width, int height, double margin) {
  auto p = try_project(pose, world);
  return p && inside_frame(*p, width, height, margin);
}

/// Draws points that are visible in frame t or, after adding `motion`, in
/// frame t+1. Each draw picks one of the two frustums, samples a uniform pixel
/// (extended by `margin`) and a uniform depth in [near, far] and unprojects it.
/// Draws from the frame-(t+1) frustum that also land in frame t are rejected so
/// the overlap is not sampled twice as densely.
inline std::vector<Point3> sample_visible_points(Rng& rng, std::size_t n, const ScenePair& scene,
                                                 const Eigen::Vector3d& motion, double margin,
                                                 std::optional<DepthRange> range = std::nullopt) {
  std::vector<Point3> out;
  if (n == 0) return out;
  const DepthRange dr = range.value_or(scene_depth_range(scene));
  if (!(dr.near > 0.0) || dr.far < dr.near) throw SamplingError("sampling: invalid depth range");
  const int w = scene.width(), h = scene.height();
  std::uniform_real_distribution<double> ux(-0.5 - margin, w - 0.5 + margin);
  std::uniform_real_distribution<double> uy(-0.5 - margin, h - 0.5 + margin);
  std::uniform_real_distribution<double> ud(dr.near, dr.far > dr.near ? dr.far : dr.near + 1e-12);
  std::bernoulli_distribution pick_t1(0.5);

  const std::size_t budget = 1000 + 100 * n;
  out.reserve(n);
  for (std::size_t attempt = 0; attempt < budget && out.size() < n; ++attempt) {
    const bool from_t1 = pick_t1(rng);
    const double u = ux(rng), v = uy(rng);
    const double d = dr.far > dr.near ? ud(rng) : dr.near;
    Point3 X = unproject(from_t1 ? scene.cam_t1 : scene.cam_t, u, v, d);
    if (from_t1) X -= motion;
    const bool vis_t = visible_in(scene.cam_t, X, w, h, margin);
    const bool vis_t1 = visible_in(scene.cam_t1, X + motion, w, h, margin);
    if (from_t1 && vis_t) continue;
    if (!(vis_t || vis_t1)) continue;
    out.push_back(X);
  }
  if (out.size() < n) throw SamplingError("sampling: retry budget exhausted (degenerate camera or motion)");
  return out;
}

}  // namespace snow
