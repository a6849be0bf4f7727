#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <vector>

#include "snowattack/scenefmt.hpp"

namespace snow {

/// Two consecutive frames with per-frame depth and camera, plus optional
/// background ground-truth flow from frame t to frame t+1.
struct ScenePair {
  Image frame_t, frame_t1;
  DepthMap depth_t, depth_t1;
  CameraPose cam_t, cam_t1;
  std::optional<FlowField> background_flow;

  int width() const { return frame_t.width; }
  int height() const { return frame_t.height; }
};

inline void validate(const ScenePair& s) {
  validate(s.frame_t);
  validate(s.frame_t1);
  validate(s.depth_t);
  validate(s.depth_t1);
  validate(s.cam_t);
  validate(s.cam_t1);
  const int w = s.width(), h = s.height();
  auto same = [&](int ow, int oh) { return ow == w && oh == h; };
  if (!same(s.frame_t1.width, s.frame_t1.height) || !same(s.depth_t.width, s.depth_t.height) ||
      !same(s.depth_t1.width, s.depth_t1.height))
    throw ShapeError("scene: frames and depth maps must share dimensions");
  if (s.background_flow) {
    validate(*s.background_flow);
    if (!same(s.background_flow->width, s.background_flow->height))
      throw ShapeError("scene: background flow dimensions differ from frames");
  }
}

namespace scene_files {
inline constexpr const char* kFrameT = "frame_t.ppm";
inline constexpr const char* kFrameT1 = "frame_t1.ppm";
inline constexpr const char* kDepthT = "depth_t.pfm";
inline constexpr const char* kDepthT1 = "depth_t1.pfm";
inline constexpr const char* kCamT = "cam_t.cam";
inline constexpr const char* kCamT1 = "cam_t1.cam";
inline constexpr const char* kGtFlow = "gt_flow.flo";
}  // namespace scene_files

inline ScenePair load_scene(const std::filesystem::path& dir) {
  namespace f = scene_files;
  for (const char* name : {f::kFrameT, f::kFrameT1, f::kDepthT, f::kDepthT1, f::kCamT, f::kCamT1})
    if (!std::filesystem::exists(dir / name)) throw FormatError("scene: missing " + (dir / name).string());
  ScenePair s;
  s.frame_t = read_ppm(dir / f::kFrameT);
  s.frame_t1 = read_ppm(dir / f::kFrameT1);
  s.depth_t = read_pfm(dir / f::kDepthT);
  s.depth_t1 = read_pfm(dir / f::kDepthT1);
  s.cam_t = read_cam(dir / f::kCamT);
  s.cam_t1 = read_cam(dir / f::kCamT1);
  if (std::filesystem::exists(dir / f::kGtFlow)) s.background_flow = read_flo(dir / f::kGtFlow);
  validate(s);
  return s;
}

inline void save_scene(const ScenePair& s, const std::filesystem::path& dir) {
  namespace f = scene_files;
  validate(s);
  write_ppm(s.frame_t, dir / f::kFrameT);
  write_ppm(s.frame_t1, dir / f::kFrameT1);
  write_pfm(s.depth_t, dir / f::kDepthT);
  write_pfm(s.depth_t1, dir / f::kDepthT1);
  write_cam(s.cam_t, dir / f::kCamT);
  write_cam(s.cam_t1, dir / f::kCamT1);
  if (s.background_flow) write_flo(*s.background_flow, dir / f::kGtFlow);
}

/// Near/far planes for flake placement: the [min, max] of both depth maps,
/// clamped to [0.5, 80].
struct DepthRange {
  double near = 0.5;
  double far = 80.0;
};

inline DepthRange scene_depth_range(const ScenePair& s) {
  auto [lo0, hi0] = std::minmax_element(s.depth_t.data.begin(), s.depth_t.data.end());
  auto [lo1, hi1] = std::minmax_element(s.depth_t1.data.begin(), s.depth_t1.data.end());
  DepthRange r;
  r.near = std::clamp(std::min(*lo0, *lo1), 0.5, 80.0);
  r.far = std::clamp(std::max(*hi0, *hi1), 0.5, 80.0);
  return r;
}

inline double median_depth(const DepthMap& depth) {
  std::vector<double> v = depth.data;
  auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace snow
