#pragma once

// Differentiable snow-to-scene renderer.
//
// Each flake owns a fixed alpha patch per frame (template rotated, scaled by
// inverse initial depth, disk blurred). Rendering projects the offset flake
// center into the frame, spreads the patch over the four pixels around each
// patch entry, multiplies by transparency and a soft depth-test visibility and
// composites flakes back to front with "over" blending. The forward pass
// records a RenderTape from which `backward` computes exact gradients for
// delta_t, delta_t1 and the transparency logit of every flake.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "snowattack/error.hpp"
#include "snowattack/geometry.hpp"
#include "snowattack/optics.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/snowflake.hpp"

namespace snow {

/// Per-pixel upstream gradient for an RGB frame (same layout as Image, no
/// range restriction).
struct ImageGradient {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageGradient() = default;
  ImageGradient(int w, int h) : width(w), height(h), data(std::size_t(w) * h * 3, 0.0) {}
};

/// Subpixel placement weight. The two weights of an entry, (1 - S(f)) and
/// S(f), distribute it over the neighboring pixels like bilinear weights, but
/// S is the quintic smoothstep so the footprint is twice continuously
/// differentiable in the flake position.
inline double placement_weight(double f) { return f * f * f * (f * (6.0 * f - 15.0) + 10.0); }
inline double placement_weight_derivative(double f) { return 30.0 * f * f * (f - 1.0) * (f - 1.0); }

struct FootprintPixel {
  int index = 0;  // y * width + x
  double shape = 0.0;
  double dshape_du = 0.0;
  double dshape_dv = 0.0;
  double vis = 1.0;
  double dvis_ddepth = 0.0;
  double alpha = 0.0;
  std::array<double, 3> under{};  // composite below this flake, before blending
};

struct FlakeFootprint {
  int flake = -1;
  bool active = false;
  double u = 0.0, v = 0.0, depth = 0.0;
  double theta = 1.0;
  Eigen::Matrix3d jacobian = Eigen::Matrix3d::Zero();  // d(u, v, depth) / d(world offset)
  std::vector<FootprintPixel> pixels;
};

struct FrameTape {
  std::vector<FlakeFootprint> footprints;  // indexed by flake
  std::vector<int> order;                  // compositing order, far to near
  Image background;
};

struct RenderTape {
  std::array<FrameTape, 2> frames;
  RenderParams params;
};

struct RenderResult {
  Image frame_t;
  Image frame_t1;
  RenderTape tape;
};

struct FlakeGradient {
  Eigen::Vector3d delta_t = Eigen::Vector3d::Zero();
  Eigen::Vector3d delta_t1 = Eigen::Vector3d::Zero();
  double logit = 0.0;
};

/// Rotated, resampled template covering a flake of `radius_px` (3x3
/// supersampled per pixel).
inline AlphaPatch flake_image(const FlakeTemplate& tpl, double rotation, double radius_px) {
  const int half = int(std::ceil(radius_px + 1.0));
  AlphaPatch patch(2 * half + 1);
  const double scale = tpl.resolution / (2.0 * std::max(radius_px, 1e-6));
  const double center = (tpl.resolution - 1) / 2.0;
  const double c = std::cos(rotation), s = std::sin(rotation);
  constexpr int kSub = 3;
  for (int j = 0; j < patch.size; ++j)
    for (int i = 0; i < patch.size; ++i) {
      double acc = 0.0;
      for (int sj = 0; sj < kSub; ++sj)
        for (int si = 0; si < kSub; ++si) {
          const double ox = i - half + (si + 0.5) / kSub - 0.5;
          const double oy = j - half + (sj + 0.5) / kSub - 0.5;
          const double rx = c * ox + s * oy;
          const double ry = -s * ox + c * oy;
          acc += tpl.sample(center + rx * scale, center + ry * scale);
        }
      patch.at(i, j) = acc / (kSub * kSub);
    }
  return patch;
}

/// Frozen per-frame appearance of a flake (before transparency and visibility).
inline AlphaPatch flake_appearance(const SnowField& field, const Snowflake& flake, const CameraPose& cam,
                                   double init_depth, const RenderParams& params) {
  const auto& tpl = field.templates.at(std::size_t(flake.template_id));
  const double radius =
      params.stages.scaling ? flake_scale(flake.world_size, cam.K(0, 0), init_depth) : params.unscaled_radius_px;
  AlphaPatch patch = flake_image(tpl, flake.rotation, radius);
  if (params.stages.blur) patch = psf_blur(patch, init_depth, params);
  return patch;
}

namespace detail {

inline FlakeFootprint build_footprint(const ScenePair& scene, const SnowField& field, int index, int frame,
                                      const RelativeTransform& rel, const RenderParams& params) {
  const Snowflake& flake = field.flakes[std::size_t(index)];
  FlakeFootprint fp;
  fp.flake = index;
  const double init_depth = frame == 0 ? flake.depth_t : flake.depth_t1;
  if (!(init_depth > kBehindCameraEpsilon)) return fp;

  const Eigen::Matrix3d R0 = scene.cam_t.rotation();
  Eigen::Vector3d cam;
  Eigen::Matrix3d world_to_cam;
  const CameraPose& pose = frame == 0 ? scene.cam_t : scene.cam_t1;
  if (frame == 0) {
    cam = to_camera(scene.cam_t, flake.position + flake.delta_t);
    world_to_cam = R0;
  } else {
    cam = rel.apply(to_camera(scene.cam_t, flake.position + flake.motion + flake.delta_t1));
    world_to_cam = rel.R * R0;
  }
  const auto proj = try_project_camera(pose.K, cam);
  if (!proj) return fp;

  const AlphaPatch patch = flake_appearance(field, flake, pose, init_depth, params);
  const int half = patch.half();
  const int w = scene.width(), h = scene.height();
  const int base_u = int(std::floor(proj->u)), base_v = int(std::floor(proj->v));
  if (base_u + half + 1 < 0 || base_u - half > w - 1 || base_v + half + 1 < 0 || base_v - half > h - 1) return fp;

  fp.active = true;
  fp.u = proj->u;
  fp.v = proj->v;
  fp.depth = proj->depth;
  fp.theta = params.stages.transparency ? flake.transparency() : 1.0;
  fp.jacobian = projection_jacobian(pose.K, cam) * world_to_cam;

  const double fu = proj->u - base_u, fv = proj->v - base_v;
  const std::array<double, 2> wx{1.0 - placement_weight(fu), placement_weight(fu)};
  const std::array<double, 2> wy{1.0 - placement_weight(fv), placement_weight(fv)};
  const std::array<double, 2> dwx{-placement_weight_derivative(fu), placement_weight_derivative(fu)};
  const std::array<double, 2> dwy{-placement_weight_derivative(fv), placement_weight_derivative(fv)};
  const DepthMap& depth_map = frame == 0 ? scene.depth_t : scene.depth_t1;

  for (int py = std::max(0, base_v - half); py <= std::min(h - 1, base_v + half + 1); ++py) {
    for (int px = std::max(0, base_u - half); px <= std::min(w - 1, base_u + half + 1); ++px) {
      double shape = 0.0, ds_du = 0.0, ds_dv = 0.0;
      // entry (ix, iy) lands on pixel (base + ix - half + a, ...) with weight wx[a] * wy[b]
      for (int b = 0; b < 2; ++b) {
        const int iy = py - base_v + half - b;
        if (iy < 0 || iy >= patch.size) continue;
        for (int a = 0; a < 2; ++a) {
          const int ix = px - base_u + half - a;
          if (ix < 0 || ix >= patch.size) continue;
          const double m = patch.at(ix, iy);
          shape += wx[std::size_t(a)] * wy[std::size_t(b)] * m;
          ds_du += dwx[std::size_t(a)] * wy[std::size_t(b)] * m;
          ds_dv += wx[std::size_t(a)] * dwy[std::size_t(b)] * m;
        }
      }
      if (shape == 0.0 && ds_du == 0.0 && ds_dv == 0.0) continue;
      FootprintPixel p;
      p.index = py * w + px;
      p.shape = shape;
      p.dshape_du = ds_du;
      p.dshape_dv = ds_dv;
      if (params.stages.occlusion) {
        const auto vs = visibility_sample(depth_map, px, py, fp.depth, params.visibility_softness);
        p.vis = vs.value;
        p.dvis_ddepth = vs.d_flake_depth;
      }
      p.alpha = fp.theta * p.vis * p.shape;
      fp.pixels.push_back(p);
    }
  }
  return fp;
}

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int t = std::min(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(std::size_t(t));
  for (int k = 0; k < t; ++k)
    pool.emplace_back([&, k] {
      for (int i = k; i < n; i += t) fn(i);
    });
}

inline void blend(double* px, double alpha, const std::array<double, 3>& color) {
  for (int c = 0; c < 3; ++c) px[c] = (1.0 - alpha) * px[c] + alpha * color[std::size_t(c)];
}

}  // namespace detail

/// Renders one frame (0 = t, 1 = t+1) and records its tape.
inline Image render_frame(const ScenePair& scene, const SnowField& field, int frame, const RenderParams& params,
                          FrameTape& tape) {
  const RelativeTransform rel = relative_transform(scene.cam_t, scene.cam_t1);
  const int n = int(field.flakes.size());
  tape.footprints.assign(std::size_t(n), {});
  detail::parallel_for(n, params.threads, [&](int i) {
    tape.footprints[std::size_t(i)] = detail::build_footprint(scene, field, i, frame, rel, params);
  });
  tape.order.clear();
  for (int i = 0; i < n; ++i)
    if (tape.footprints[std::size_t(i)].active && !tape.footprints[std::size_t(i)].pixels.empty())
      tape.order.push_back(i);
  std::stable_sort(tape.order.begin(), tape.order.end(), [&](int a, int b) {
    return tape.footprints[std::size_t(a)].depth > tape.footprints[std::size_t(b)].depth;
  });
  tape.background = frame == 0 ? scene.frame_t : scene.frame_t1;
  Image img = tape.background;
  for (int k : tape.order)
    for (auto& p : tape.footprints[std::size_t(k)].pixels) {
      double* px = img.data.data() + std::size_t(p.index) * 3;
      std::copy(px, px + 3, p.under.begin());
      detail::blend(px, p.alpha, params.flake_color);
    }
  return img;
}

inline RenderResult render_pair(const ScenePair& scene, const SnowField& field, const RenderParams& params) {
  validate(params);
  for (const auto& f : field.flakes)
    if (f.template_id < 0 || std::size_t(f.template_id) >= field.templates.size())
      throw ShapeError("render: flake references a missing template");
  RenderResult out;
  out.tape.params = params;
  out.frame_t = render_frame(scene, field, 0, params, out.tape.frames[0]);
  out.frame_t1 = render_frame(scene, field, 1, params, out.tape.frames[1]);
  return out;
}

/// Re-composites a recorded frame from its background and stored alphas.
inline Image replay(const FrameTape& tape, const RenderParams& params) {
  Image img = tape.background;
  for (int k : tape.order)
    for (const auto& p : tape.footprints[std::size_t(k)].pixels)
      detail::blend(img.data.data() + std::size_t(p.index) * 3, p.alpha, params.flake_color);
  return img;
}

/// Reverse-mode pass through compositing, visibility, placement and
/// projection. Returns one gradient per flake of the field that was rendered.
inline std::vector<FlakeGradient> backward(const RenderTape& tape, const ImageGradient& grad_t,
                                           const ImageGradient& grad_t1) {
  const auto& bg = tape.frames[0].background;
  for (const ImageGradient* g : {&grad_t, &grad_t1})
    if (g->width != bg.width || g->height != bg.height || g->data.size() != bg.data.size())
      throw ShapeError("render backward: gradient shape does not match the tape");
  if (tape.frames[0].footprints.size() != tape.frames[1].footprints.size())
    throw ShapeError("render backward: inconsistent tape");

  const std::size_t n = tape.frames[0].footprints.size();
  std::vector<FlakeGradient> grads(n);
  std::vector<double> theta_grad(n, 0.0);
  const auto& color = tape.params.flake_color;

  for (int frame = 0; frame < 2; ++frame) {
    const FrameTape& ft = tape.frames[std::size_t(frame)];
    std::vector<double> g = (frame == 0 ? grad_t : grad_t1).data;
    for (auto it = ft.order.rbegin(); it != ft.order.rend(); ++it) {
      const FlakeFootprint& fp = ft.footprints[std::size_t(*it)];
      double g_theta = 0.0, g_u = 0.0, g_v = 0.0, g_depth = 0.0;
      for (const auto& p : fp.pixels) {
        double* gp = g.data() + std::size_t(p.index) * 3;
        double g_alpha = 0.0;
        for (int c = 0; c < 3; ++c) {
          g_alpha += gp[c] * (color[std::size_t(c)] - p.under[std::size_t(c)]);
          gp[c] *= 1.0 - p.alpha;
        }
        g_theta += g_alpha * p.vis * p.shape;
        g_depth += g_alpha * fp.theta * p.shape * p.dvis_ddepth;
        g_u += g_alpha * fp.theta * p.vis * p.dshape_du;
        g_v += g_alpha * fp.theta * p.vis * p.dshape_dv;
      }
      const Eigen::Vector3d g_world = fp.jacobian.transpose() * Eigen::Vector3d(g_u, g_v, g_depth);
      auto& out = grads[std::size_t(fp.flake)];
      (frame == 0 ? out.delta_t : out.delta_t1) += g_world;
      if (tape.params.stages.transparency) theta_grad[std::size_t(fp.flake)] += g_theta;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const FlakeFootprint& fp = tape.frames[0].footprints[i].active ? tape.frames[0].footprints[i]
                                                                   : tape.frames[1].footprints[i];
    const double theta = fp.theta;
    grads[i].logit = theta_grad[i] * theta * (1.0 - theta);
  }
  return grads;
}

}  // namespace snow
