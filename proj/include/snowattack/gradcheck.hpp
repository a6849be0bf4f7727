#pragma once

// Central finite-difference checks of the analytic gradients of the renderer,
// the victims and the full attack loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "snowattack/attack.hpp"
#include "snowattack/fixtures.hpp"
#include "snowattack/flowvictim.hpp"
#include "snowattack/render.hpp"

namespace snow {

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value is
/// at round-off level from dominating the report.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GroupReport {
  std::string name;
  int entries = 0;
  double max_rel = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  void add(double analytic, double numeric, double floor) {
    const double r = relative_error(analytic, numeric, floor);
    ++entries;
    if (!(r <= max_rel)) {  // also catches NaN
      max_rel = std::isnan(r) ? INFINITY : r;
      worst_analytic = analytic;
      worst_numeric = numeric;
    }
  }
};

struct GradCheckReport {
  std::vector<GroupReport> groups;

  GroupReport& group(const std::string& name) {
    for (auto& g : groups)
      if (g.name == name) return g;
    groups.push_back({name});
    return groups.back();
  }
  double max_rel() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel);
    return m;
  }
  void merge(const GradCheckReport& o) {
    for (const auto& g : o.groups) {
      auto& mine = group(g.name);
      mine.entries += g.entries;
      if (!(g.max_rel <= mine.max_rel)) {
        mine.max_rel = g.max_rel;
        mine.worst_analytic = g.worst_analytic;
        mine.worst_numeric = g.worst_numeric;
      }
    }
  }
};

struct GradCheckOptions {
  double h_delta = 1e-4;      // scene units
  double h_logit = 1e-3;
  double h_intensity = 1e-4;
  double floor = 1e-6;
  int victim_pixels = 50;
  double corrupt_scale = 1.0;  // multiplies analytic gradients; != 1 is a fault-injection hook
  std::uint64_t seed = 0;
};

namespace detail {

/// Five-point central difference, O(h^4).
template <class Fn>
double central_difference(Fn&& f, double& x, double h) {
  const double x0 = x;
  double v[4];
  const double off[4] = {-2.0, -1.0, 1.0, 2.0};
  for (int k = 0; k < 4; ++k) {
    x = x0 + off[k] * h;
    v[k] = f();
  }
  x = x0;
  return (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Walks every optimizable scalar of a field: (group name, reference, step).
inline void for_each_parameter(SnowField& field, const GradCheckOptions& opt,
                               const std::function<void(const char*, std::size_t, int, double&, double)>& fn) {
  for (std::size_t i = 0; i < field.flakes.size(); ++i) {
    auto& f = field.flakes[i];
    for (int c = 0; c < 3; ++c) fn("delta_t", i, c, f.delta_t[c], opt.h_delta);
    for (int c = 0; c < 3; ++c) fn("delta_t1", i, c, f.delta_t1[c], opt.h_delta);
    fn("theta", i, 0, f.logit, opt.h_logit);
  }
}

inline double pick(const FlakeGradient& g, const std::string& group, int c) {
  if (group == "delta_t") return g.delta_t[c];
  if (group == "delta_t1") return g.delta_t1[c];
  return g.logit;
}

}  // namespace detail

/// Renderer in isolation: L = <w_t, frame_t> + <w_t1, frame_t1> for random weights.
inline GradCheckReport check_render(const ScenePair& scene, SnowField field, const RenderParams& params,
                                    const GradCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  ImageGradient w_t(scene.width(), scene.height()), w_t1(scene.width(), scene.height());
  for (double& v : w_t.data) v = unit(rng);
  for (double& v : w_t1.data) v = unit(rng);
  auto objective = [&] {
    const RenderResult r = render_pair(scene, field, params);
    return detail::dot(w_t.data, r.frame_t.data) + detail::dot(w_t1.data, r.frame_t1.data);
  };
  const RenderResult r = render_pair(scene, field, params);
  const auto grads = backward(r.tape, w_t, w_t1);
  GradCheckReport rep;
  detail::for_each_parameter(field, opt, [&](const char* group, std::size_t i, int c, double& x, double h) {
    const double numeric = detail::central_difference(objective, x, h);
    rep.group(std::string("render.") + group).add(opt.corrupt_scale * detail::pick(grads[i], group, c), numeric, opt.floor);
  });
  return rep;
}

/// Victim in isolation: L = <g, flow> for random g, checked on random input entries.
inline GradCheckReport check_victim(const Image& I1, const Image& I2, const EstimatorConfig& cfg,
                                    const GradCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  FlowField g(I1.width, I1.height);
  for (double& v : g.data) v = unit(rng);
  auto [g1, g2] = flow_input_gradient(I1, I2, cfg, g);
  Image a = I1, b = I2;
  auto objective = [&] { return detail::dot(g.data, estimate_flow(a, b, cfg).data); };
  std::uniform_int_distribution<std::size_t> entry(0, I1.data.size() - 1);
  GradCheckReport rep;
  const std::string name = "victim." + to_string(cfg.kind);
  for (int k = 0; k < opt.victim_pixels; ++k) {
    const std::size_t e1 = entry(rng), e2 = entry(rng);
    rep.group(name + ".I1").add(opt.corrupt_scale * g1.data[e1],
                                detail::central_difference(objective, a.data[e1], opt.h_intensity), opt.floor);
    rep.group(name + ".I2").add(opt.corrupt_scale * g2.data[e2],
                                detail::central_difference(objective, b.data[e2], opt.h_intensity), opt.floor);
  }
  return rep;
}

/// Full attack loss with respect to every offset and logit.
inline GradCheckReport check_loss(const ScenePair& scene, SnowField field, const AttackConfig& cfg,
                                  const GradCheckOptions& opt) {
  const FlowField target = resolve_target(cfg.target, scene.width(), scene.height());
  Evaluation ev = evaluate(scene, field, cfg, target);
  const auto grads = loss_gradient(ev, field, cfg, target);
  auto objective = [&] { return evaluate(scene, field, cfg, target).terms.total(); };
  GradCheckReport rep;
  detail::for_each_parameter(field, opt, [&](const char* group, std::size_t i, int c, double& x, double h) {
    const double numeric = detail::central_difference(objective, x, h);
    rep.group(std::string("loss.") + group).add(opt.corrupt_scale * detail::pick(grads[i], group, c), numeric, opt.floor);
  });
  return rep;
}

struct GradCheckSuite {
  std::uint64_t seed = 0;
  std::vector<int> sizes{16};
  int scenes = 10;
  int flakes = 5;
  int hs_iterations = 20;
  double corrupt_scale = 1.0;
};

/// Renderer, both victims and the full loss on `scenes` random scenes per
/// size. Flakes get small random offsets and logit shifts so every parameter
/// is checked away from its initial value.
inline GradCheckReport run_gradcheck_suite(const GradCheckSuite& suite) {
  GradCheckReport all;
  for (int size : suite.sizes) {
    if (size < 8) throw ConfigError("gradcheck: scenes must be at least 8 px");
    for (int k = 0; k < suite.scenes; ++k) {
      const std::uint64_t seed = suite.seed + std::uint64_t(k);
      const ScenePair scene = random_small_scene(seed, size);
      SnowField field =
          init_snowfield(scene, std::size_t(suite.flakes), SnowDirection{}, default_fall_speed(scene), seed);
      std::mt19937_64 rng(seed ^ 0x5eedULL);
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      for (auto& f : field.flakes) {
        for (int c = 0; c < 3; ++c) {
          f.delta_t[c] = 0.02 * unit(rng);
          f.delta_t1[c] = 0.02 * unit(rng);
        }
        f.logit += 0.5 * unit(rng);
      }
      GradCheckOptions opt;
      opt.seed = seed;
      opt.corrupt_scale = suite.corrupt_scale;
      AttackConfig ac;
      ac.victim.hs_iterations = suite.hs_iterations;
      all.merge(check_render(scene, field, ac.render, opt));
      all.merge(check_loss(scene, field, ac, opt));
      const RenderResult r = render_pair(scene, field, ac.render);
      for (auto kind : {EstimatorKind::horn_schunck, EstimatorKind::lucas_kanade}) {
        EstimatorConfig vc = ac.victim;
        vc.kind = kind;
        all.merge(check_victim(r.frame_t, r.frame_t1, vc, opt));
      }
    }
  }
  return all;
}

/// Tolerance per group: 1e-4 for the renderer alone, 1e-3 elsewhere.
inline double gradcheck_tolerance(const std::string& group) {
  return group.rfind("render.", 0) == 0 ? 1e-4 : 1e-3;
}

}  // namespace snow
