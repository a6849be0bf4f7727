#pragma once

// Synthetic scenes: the translating-texture fixture used by the experiments
// and small random scenes used by the gradient checks.

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "snowattack/scene.hpp"

namespace snow {

namespace detail {

struct Wave {
  double kx, ky, amplitude;
  double phase[3];
};

inline double eval_waves(const std::vector<Wave>& waves, double x, double y, int c, double scale) {
  double v = 0.5;
  for (const auto& w : waves) v += w.amplitude * std::sin(2.0 * M_PI * (w.kx * x + w.ky * y) / scale + w.phase[c]);
  return std::clamp(v, 0.02, 0.98);
}

inline std::vector<Wave> random_waves(std::mt19937_64& rng, int count, int max_freq, bool integer_freq) {
  std::uniform_int_distribution<int> ifreq(-max_freq, max_freq);
  std::uniform_real_distribution<double> rfreq(-max_freq, max_freq);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::vector<Wave> out;
  while (int(out.size()) < count) {
    Wave w{};
    w.kx = integer_freq ? ifreq(rng) : rfreq(rng);
    w.ky = integer_freq ? ifreq(rng) : rfreq(rng);
    if (std::abs(w.kx) + std::abs(w.ky) < 1.0) continue;
    w.amplitude = 0.35 / count;
    for (double& p : w.phase) p = phase(rng);
    out.push_back(w);
  }
  return out;
}

}  // namespace detail

struct TranslatingFixture {
  int size = 96;
  double shift = 2.0;      // px per frame, integer for an exact background flow
  double near = 5.0;       // depth of the bottom row
  double far = 15.0;       // depth of the top row
  double focal_px = 192.0;
  std::uint64_t seed = 7;  // texture
};

/// Square scene showing a slanted textured wall (depth `far` at the top row
/// down to `near` at the bottom row) under a static camera. The texture is
/// periodic and frame t+1 is frame t moved right by `shift` pixels with wrap,
/// so the background flow is exactly (shift, 0) for integer shifts.
inline ScenePair translating_texture_scene(const TranslatingFixture& fx = {}) {
  const int size = fx.size;
  std::mt19937_64 rng(fx.seed);
  const auto waves = detail::random_waves(rng, 6, 6, true);
  ScenePair s;
  s.frame_t = Image(size, size);
  s.frame_t1 = Image(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        s.frame_t.at(x, y, c) = detail::eval_waves(waves, x, y, c, size);
        s.frame_t1.at(x, y, c) = detail::eval_waves(waves, x - fx.shift, y, c, size);
      }
  s.depth_t = DepthMap(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) s.depth_t.at(x, y) = fx.far - (fx.far - fx.near) * y / double(size - 1);
  s.depth_t1 = s.depth_t;
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = K(1, 1) = fx.focal_px;
  K(0, 2) = K(1, 2) = (size - 1) / 2.0;
  s.cam_t.K = K;
  s.cam_t1.K = K;
  s.background_flow = FlowField(size, size, fx.shift, 0.0);
  return s;
}

/// Small scene with random smooth texture, random smooth depth in [2, 8] and a
/// slightly moved second camera. Frame t+1 shows the texture shifted by a
/// random subpixel amount; there is no background flow.
inline ScenePair random_small_scene(std::uint64_t seed, int size = 16) {
  std::mt19937_64 rng(seed);
  const auto tex = detail::random_waves(rng, 5, 3, false);
  const auto dep = detail::random_waves(rng, 3, 1, false);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double sx = 0.8 * unit(rng), sy = 0.8 * unit(rng);

  ScenePair s;
  s.frame_t = Image(size, size);
  s.frame_t1 = Image(size, size);
  s.depth_t = DepthMap(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        s.frame_t.at(x, y, c) = detail::eval_waves(tex, x, y, c, size);
        s.frame_t1.at(x, y, c) = detail::eval_waves(tex, x - sx, y - sy, c, size);
      }
      // eval_waves lies in [0.02, 0.98]; stretch to [2, 8]
      s.depth_t.at(x, y) = 2.0 + 6.0 * (detail::eval_waves(dep, x, y, 0, size) - 0.02) / 0.96;
    }
  s.depth_t1 = s.depth_t;

  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = K(1, 1) = 1.2 * size;
  K(0, 2) = K(1, 2) = (size - 1) / 2.0;
  s.cam_t.K = K;
  s.cam_t1.K = K;
  const Eigen::Vector3d axis = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)).normalized();
  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.02 * unit(rng), axis).toRotationMatrix();
  s.cam_t1.Rt.leftCols<3>() = R;
  s.cam_t1.Rt.col(3) = 0.05 * Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
  return s;
}

}  // namespace snow
