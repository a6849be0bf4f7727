#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>

#include "snowattack/error.hpp"
#include "snowattack/geometry.hpp"
#include "snowattack/optics.hpp"
#include "snowattack/render.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/snowflake.hpp"

namespace snow {

struct SnowInitOptions {
  double flake_size = 0.0;   // mean world radius; <= 0 picks default_flake_size
  double size_spread = 0.4;  // sizes uniform in mean * [1 - spread, 1 + spread]
  double margin = 0.0;       // px beyond the frame border still counted as visible
  std::optional<DepthRange> depth_range;
  int template_count = 12;
  int template_resolution = 32;
  RenderParams render;  // supplies the initial transparency
};

/// World fall speed that moves a flake at median scene depth ~10 px per frame.
inline double default_fall_speed(const ScenePair& scene) {
  return 10.0 * median_depth(scene.depth_t) / scene.cam_t.K(0, 0);
}

/// World radius that projects to ~2 px at median scene depth.
inline double default_flake_size(const ScenePair& scene) {
  return 2.0 * median_depth(scene.depth_t) / scene.cam_t.K(0, 0);
}

/// Unit world direction for "down : right" in the frame-t image plane.
inline Eigen::Vector3d fall_direction(const ScenePair& scene, const SnowDirection& dir) {
  if (!(dir.down > 0.0)) throw ConfigError("snow direction: down weight must be positive");
  const Eigen::Vector3d image_plane = Eigen::Vector3d(dir.right, dir.down, 0.0).normalized();
  return scene.cam_t.rotation().transpose() * image_plane;
}

inline SnowField init_snowfield(const ScenePair& scene, std::size_t n, const SnowDirection& dir, double fall_speed,
                                std::uint64_t seed, const SnowInitOptions& opts = {}) {
  if (dir.jitter < 0.0) throw ConfigError("snow direction: jitter must be nonnegative");
  Rng rng(seed);
  SnowField field;
  field.seed = seed;
  field.direction = fall_direction(scene, dir);
  field.templates = make_templates(seed, opts.template_count, opts.template_resolution);
  const Eigen::Vector3d mean_motion = fall_speed * field.direction;
  const double size = opts.flake_size > 0.0 ? opts.flake_size : default_flake_size(scene);

  std::normal_distribution<double> jitter(0.0, dir.jitter > 0.0 ? dir.jitter : 1.0);
  std::uniform_int_distribution<int> pick_template(0, opts.template_count - 1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> spread(1.0 - opts.size_spread, 1.0 + opts.size_spread);
  const RelativeTransform rel = relative_transform(scene.cam_t, scene.cam_t1);

  field.flakes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Snowflake f;
    for (int c = 0; c < 3; ++c) f.motion[c] = mean_motion[c] * (1.0 + (dir.jitter > 0.0 ? jitter(rng) : 0.0));
    // both cameras must see the flake in front of them so its depths are defined
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      f.position = sample_visible_points(rng, 1, scene, f.motion, opts.margin, opts.depth_range).front();
      f.depth_t = to_camera(scene.cam_t, f.position).z();
      f.depth_t1 = rel.apply(to_camera(scene.cam_t, f.position + f.motion)).z();
      placed = f.depth_t > kBehindCameraEpsilon && f.depth_t1 > kBehindCameraEpsilon;
    }
    if (!placed) throw SamplingError("init_snowfield: could not place a flake in front of both cameras");
    f.template_id = pick_template(rng);
    f.rotation = angle(rng);
    f.world_size = size * spread(rng);
    f.logit = logit(init_transparency(f.depth_t, opts.render));
    field.flakes.push_back(f);
  }
  return field;
}

/// Alpha above which a flake owns a pixel's ground-truth motion.
inline constexpr double kGroundTruthAlpha = 0.5;

/// Projected displacement of a flake from frame t to frame t+1, offsets included.
inline std::optional<Eigen::Vector2d> flake_displacement(const ScenePair& scene, const Snowflake& f) {
  const auto p0 = try_project(scene.cam_t, f.position + f.delta_t);
  const auto p1 = try_project(scene.cam_t1, f.position + f.motion + f.delta_t1);
  if (!p0 || !p1) return std::nullopt;
  return Eigen::Vector2d(p1->u - p0->u, p1->v - p0->v);
}

/// Background flow, overwritten wherever the frontmost flake with effective
/// alpha above 0.5 (in frame t) covers the pixel by that flake's displacement.
inline FlowField snow_ground_truth_flow(const ScenePair& scene, const SnowField& field, const RenderParams& params) {
  if (!scene.background_flow) throw Error("snow_ground_truth_flow: scene has no background flow");
  FlowField flow = *scene.background_flow;
  if (field.flakes.empty()) return flow;
  FrameTape tape;
  render_frame(scene, field, 0, params, tape);
  std::vector<double> owner_depth(flow.pixels(), std::numeric_limits<double>::infinity());
  for (int k : tape.order) {  // far to near
    const auto& fp = tape.footprints[std::size_t(k)];
    const auto disp = flake_displacement(scene, field.flakes[std::size_t(k)]);
    if (!disp) continue;
    for (const auto& p : fp.pixels) {
      if (p.alpha <= kGroundTruthAlpha || fp.depth > owner_depth[std::size_t(p.index)]) continue;
      owner_depth[std::size_t(p.index)] = fp.depth;
      flow.data[std::size_t(p.index) * 2] = disp->x();
      flow.data[std::size_t(p.index) * 2 + 1] = disp->y();
    }
  }
  return flow;
}

}  // namespace snow
