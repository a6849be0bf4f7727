#pragma once

// Per-flake appearance model: inverse-depth scaling, depth-dependent initial
// transparency, out-of-focus disk blur and the soft depth-test visibility.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "snowattack/error.hpp"
#include "snowattack/scenefmt.hpp"

namespace snow {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Toggles for the individual rendering stages. Disabling a stage is only
/// used to produce the stage-by-stage breakdown images.
struct RenderStages {
  bool scaling = true;
  bool transparency = true;
  bool blur = true;
  bool occlusion = true;
};

struct RenderParams {
  double focus_depth = 2.0;
  double aperture = 1.0;             // px * scene units
  double visibility_softness = 0.25; // scene units
  std::array<double, 3> flake_color{1.0, 1.0, 1.0};
  double transparency_near = 0.9;
  double transparency_falloff = 8.0; // scene units
  RenderStages stages;
  double unscaled_radius_px = 3.0;   // flake radius when the scaling stage is off
  int threads = 1;
};

inline void validate(const RenderParams& p) {
  if (!(p.visibility_softness > 0.0)) throw ConfigError("render: visibility_softness must be positive");
  if (!(p.aperture >= 0.0)) throw ConfigError("render: aperture must be nonnegative");
  if (!(p.transparency_near > 0.0 && p.transparency_near <= 1.0))
    throw ConfigError("render: transparency_near must lie in (0, 1]");
  if (!(p.transparency_falloff > 0.0)) throw ConfigError("render: transparency_falloff must be positive");
  if (!(p.focus_depth > 0.0)) throw ConfigError("render: focus_depth must be positive");
  for (double c : p.flake_color)
    if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("render: flake_color must lie in [0,1]");
  if (p.threads < 1) throw ConfigError("render: threads must be at least 1");
}

/// Projected flake radius in pixels.
inline double flake_scale(double world_size, double focal_px, double depth) {
  if (!(depth > 0.0)) throw GeometryError("flake_scale: depth must be positive");
  return focal_px * world_size / depth;
}

inline double init_transparency(double depth, const RenderParams& p) {
  const double theta = p.transparency_near * std::exp(-depth / p.transparency_falloff);
  return std::clamp(theta, 0.02, p.transparency_near);
}

/// Disk radius of the point spread function, snapped to multiples of 0.5 px.
inline double blur_radius(double depth, const RenderParams& p) {
  const double r = p.aperture * std::abs(1.0 / depth - 1.0 / p.focus_depth);
  return std::round(2.0 * r) / 2.0;
}

/// Square alpha patch of odd size; the center entry sits at (size-1)/2.
struct AlphaPatch {
  int size = 0;
  std::vector<double> values;

  AlphaPatch() = default;
  explicit AlphaPatch(int n, double fill = 0.0) : size(n), values(std::size_t(n) * n, fill) {}

  double& at(int x, int y) { return values[std::size_t(y) * size + x]; }
  double at(int x, int y) const { return values[std::size_t(y) * size + x]; }
  double mass() const {
    double m = 0.0;
    for (double v : values) m += v;
    return m;
  }
  int half() const { return (size - 1) / 2; }
};

/// Normalized disk kernel; each weight is the fraction of its pixel covered by
/// a disk of `radius` (16x16 supersampling).
inline AlphaPatch disk_kernel(double radius) {
  if (radius <= 0.0) return AlphaPatch(1, 1.0);
  const int half = int(std::ceil(radius + 0.5));
  AlphaPatch k(2 * half + 1);
  constexpr int kSub = 16;
  double total = 0.0;
  for (int j = -half; j <= half; ++j) {
    for (int i = -half; i <= half; ++i) {
      int covered = 0;
      for (int sj = 0; sj < kSub; ++sj) {
        for (int si = 0; si < kSub; ++si) {
          const double x = i - 0.5 + (si + 0.5) / kSub;
          const double y = j - 0.5 + (sj + 0.5) / kSub;
          covered += (x * x + y * y <= radius * radius);
        }
      }
      const double w = double(covered) / (kSub * kSub);
      k.at(i + half, j + half) = w;
      total += w;
    }
  }
  for (double& v : k.values) v /= total;
  return k;
}

/// Full convolution of `mask` with a disk of `radius`; the output grows by the
/// kernel half-width on each side so no mass is lost.
inline AlphaPatch blur_with_radius(const AlphaPatch& mask, double radius) {
  if (radius <= 0.0) return mask;
  const AlphaPatch k = disk_kernel(radius);
  const int kh = k.half();
  AlphaPatch out(mask.size + 2 * kh);
  for (int y = 0; y < mask.size; ++y) {
    for (int x = 0; x < mask.size; ++x) {
      const double m = mask.at(x, y);
      if (m == 0.0) continue;
      for (int j = 0; j < k.size; ++j)
        for (int i = 0; i < k.size; ++i) out.at(x + i, y + j) += m * k.at(i, j);
    }
  }
  return out;
}

inline AlphaPatch psf_blur(const AlphaPatch& mask, double depth, const RenderParams& p) {
  return blur_with_radius(mask, blur_radius(depth, p));
}

/// Scene depth at a subpixel position, bilinear with edge clamping.
inline double interpolate_depth(const DepthMap& depth, double u, double v) {
  u = std::clamp(u, 0.0, double(depth.width - 1));
  v = std::clamp(v, 0.0, double(depth.height - 1));
  const int x0 = std::min(int(u), depth.width - 1), y0 = std::min(int(v), depth.height - 1);
  const int x1 = std::min(x0 + 1, depth.width - 1), y1 = std::min(y0 + 1, depth.height - 1);
  const double fx = u - x0, fy = v - y0;
  return (1 - fy) * ((1 - fx) * depth.at(x0, y0) + fx * depth.at(x1, y0)) +
         fy * ((1 - fx) * depth.at(x0, y1) + fx * depth.at(x1, y1));
}

struct VisibilitySample {
  double value = 1.0;
  double d_flake_depth = 0.0;  // d value / d flake depth
};

/// Soft depth test: sigmoid((scene depth - flake depth) / softness).
inline VisibilitySample visibility_sample(const DepthMap& depth, double u, double v, double flake_depth,
                                          double softness) {
  const double s = sigmoid((interpolate_depth(depth, u, v) - flake_depth) / softness);
  return {s, -s * (1.0 - s) / softness};
}

inline double visibility(const DepthMap& depth, double u, double v, double flake_depth, double softness) {
  return visibility_sample(depth, u, v, flake_depth, softness).value;
}

}  // namespace snow
