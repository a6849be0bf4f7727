#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "snowattack/optics.hpp"

namespace snow {

/// R x R alpha mask with values in [0,1] and maximum entry 1.
struct FlakeTemplate {
  int id = 0;
  int resolution = 0;
  std::vector<double> mask;

  double at(int x, int y) const { return mask[std::size_t(y) * resolution + x]; }

  /// Bilinear lookup in template pixel coordinates; zero outside the mask.
  double sample(double x, double y) const {
    if (x <= -1.0 || y <= -1.0 || x >= resolution || y >= resolution) return 0.0;
    const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto get = [&](int xi, int yi) {
      return (xi < 0 || yi < 0 || xi >= resolution || yi >= resolution) ? 0.0 : at(xi, yi);
    };
    return (1 - fy) * ((1 - fx) * get(x0, y0) + fx * get(x0 + 1, y0)) +
           fy * ((1 - fx) * get(x0, y0 + 1) + fx * get(x0 + 1, y0 + 1));
  }
};

/// One snowflake. Offsets and the transparency logit are the optimizable
/// parameters; everything else is fixed after initialization.
struct Snowflake {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world, frame t, before offset
  Eigen::Vector3d motion = Eigen::Vector3d::Zero();    // world units per frame
  Eigen::Vector3d delta_t = Eigen::Vector3d::Zero();   // offset before the motion
  Eigen::Vector3d delta_t1 = Eigen::Vector3d::Zero();  // offset after the motion
  int template_id = 0;
  double rotation = 0.0;    // radians
  double world_size = 0.0;  // flake radius in scene units
  double logit = 0.0;       // transparency = sigmoid(logit)
  double depth_t = 0.0;     // camera-space depth at initialization, frame t
  double depth_t1 = 0.0;    // same for frame t+1

  double transparency() const { return sigmoid(logit); }
};

struct SnowField {
  std::vector<Snowflake> flakes;
  std::vector<FlakeTemplate> templates;
  std::uint64_t seed = 0;
  Eigen::Vector3d direction = Eigen::Vector3d::UnitY();  // unit mean fall direction, world frame
};

/// Fall direction given as image-plane weights (down : right) of frame t.
struct SnowDirection {
  double down = 5.0;
  double right = 2.0;
  double jitter = 0.1;  // per-component relative stddev of the per-flake motion
};

namespace detail {

inline void normalize_max(std::vector<double>& mask) {
  double m = 0.0;
  for (double v : mask) m = std::max(m, v);
  if (m > 0.0)
    for (double& v : mask) v /= m;
}

inline FlakeTemplate gaussian_template(int id, int resolution, double sigma) {
  FlakeTemplate t{id, resolution, std::vector<double>(std::size_t(resolution) * resolution)};
  const double c = (resolution - 1) / 2.0;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const double r2 = (x - c) * (x - c) + (y - c) * (y - c);
      t.mask[std::size_t(y) * resolution + x] = std::exp(-r2 / (2 * sigma * sigma));
    }
  normalize_max(t.mask);
  return t;
}

/// Soft-edged k-armed star: boundary radius oscillates between inner and
/// outer radius with angular frequency k; 4x4 supersampled.
inline FlakeTemplate star_template(int id, int resolution, int arms, double outer, double inner, double phase) {
  FlakeTemplate t{id, resolution, std::vector<double>(std::size_t(resolution) * resolution)};
  const double c = (resolution - 1) / 2.0;
  const double softness = 0.04 * resolution;
  constexpr int kSub = 4;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x - 0.5 + (sx + 0.5) / kSub - c;
          const double py = y - 0.5 + (sy + 0.5) / kSub - c;
          const double r = std::hypot(px, py);
          const double phi = std::atan2(py, px) - phase;
          const double lobe = std::pow(0.5 + 0.5 * std::cos(arms * phi), 2.0);
          const double boundary = inner + (outer - inner) * lobe;
          acc += sigmoid((boundary - r) / softness);
        }
      t.mask[std::size_t(y) * resolution + x] = acc / (kSub * kSub);
    }
  normalize_max(t.mask);
  return t;
}

}  // namespace detail

/// Procedural template set: even ids are Gaussian blobs of varying width, odd
/// ids are 5/6/7-armed stars. Deterministic in `seed`.
inline std::vector<FlakeTemplate> make_templates(std::uint64_t seed, int count, int resolution) {
  if (count < 1) throw ConfigError("templates: count must be at least 1");
  if (resolution < 8) throw ConfigError("templates: resolution must be at least 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<FlakeTemplate> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    if (i % 2 == 0) {
      const double sigma = resolution * (0.10 + 0.08 * unit(rng));
      out.push_back(detail::gaussian_template(i, resolution, sigma));
    } else {
      const int arms = 5 + (i / 2) % 3;
      const double outer = 0.36 * resolution * (0.85 + 0.15 * unit(rng));
      const double inner = outer * (0.30 + 0.20 * unit(rng));
      const double phase = 2.0 * M_PI * unit(rng);
      out.push_back(detail::star_template(i, resolution, arms, outer, inner, phase));
    }
  }
  return out;
}

/// Number of arms of template `id` as built by make_templates (0 for blobs).
inline int template_arms(int id) { return id % 2 == 0 ? 0 : 5 + (id / 2) % 3; }

}  // namespace snow
