#pragma once

// Adversarial snow: loss, parameter groups and the momentum gradient-descent
// loop that steers the victim's flow on the snowy frames towards a target.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snowattack/error.hpp"
#include "snowattack/flowvictim.hpp"
#include "snowattack/optics.hpp"
#include "snowattack/render.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/snowflake.hpp"
#include "snowattack/snowsim.hpp"

namespace snow {

/// Which parameter groups the attack may change.
struct ParamGroups {
  bool delta_t = true;
  bool delta_t1 = true;
  bool theta = true;

  bool any() const { return delta_t || delta_t1 || theta; }
  bool operator==(const ParamGroups&) const = default;
};

inline std::string to_string(const ParamGroups& g) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(g.delta_t, "delta_t");
  add(g.delta_t1, "delta_t1");
  add(g.theta, "theta");
  return out.empty() ? "none" : out;
}

/// Parses "delta_t+theta" style lists (',' also separates).
inline ParamGroups parse_param_groups(const std::string& s) {
  ParamGroups g{false, false, false};
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, '+')) {
    std::istringstream inner(item);
    std::string name;
    while (std::getline(inner, name, ',')) {
      const auto b = name.find_first_not_of(" \t"), e = name.find_last_not_of(" \t");
      name = b == std::string::npos ? "" : name.substr(b, e - b + 1);
      if (name == "delta_t") g.delta_t = true;
      else if (name == "delta_t1") g.delta_t1 = true;
      else if (name == "theta") g.theta = true;
      else if (name == "all") g = ParamGroups{};
      else throw ConfigError("unknown parameter group '" + name + "' (expected delta_t, delta_t1, theta)");
    }
  }
  return g;
}

/// The seven nonempty subsets in a fixed order.
inline std::vector<ParamGroups> all_param_subsets() {
  return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
          {true, false, true},  {false, true, true},  {true, true, true}};
}

struct AttackConfig {
  std::optional<FlowField> target;  // empty: zero-flow target
  double alpha_t = 1000.0;
  double alpha_t1 = 1000.0;
  int steps = 250;
  double lr_delta = 0.05;
  double lr_w = 0.1;
  double momentum = 0.9;
  ParamGroups optimize;
  EstimatorConfig victim;
  RenderParams render;
  std::uint64_t seed = 0;
};

inline void validate(const AttackConfig& c) {
  if (!(c.alpha_t >= 0.0) || !(c.alpha_t1 >= 0.0)) throw ConfigError("attack: alpha_t and alpha_t1 must be nonnegative");
  if (c.steps < 1) throw ConfigError("attack: steps must be at least 1");
  if (!(c.lr_delta >= 0.0) || !(c.lr_w >= 0.0)) throw ConfigError("attack: learning rates must be nonnegative");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("attack: momentum must lie in [0, 1)");
  if (!c.optimize.any()) throw ConfigError("attack: optimize must name at least one parameter group");
  validate(c.victim);
  validate(c.render);
}

inline FlowField resolve_target(const std::optional<FlowField>& target, int width, int height) {
  if (!target) return FlowField(width, height);
  if (target->width != width || target->height != height) throw ShapeError("attack: target flow size does not match the scene");
  return *target;
}

inline double reparam_theta(double w) { return sigmoid(w); }

inline double aee(const FlowField& f, const FlowField& g) {
  if (f.width != g.width || f.height != g.height) throw ShapeError("aee: flow fields differ in size");
  const std::size_t n = f.pixels();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::hypot(f.data[2 * i] - g.data[2 * i], f.data[2 * i + 1] - g.data[2 * i + 1]);
  return sum / double(n);
}

/// d aee(f, g) / d f; pixels where f equals g get the zero subgradient.
inline FlowField aee_gradient(const FlowField& f, const FlowField& g) {
  if (f.width != g.width || f.height != g.height) throw ShapeError("aee: flow fields differ in size");
  FlowField out(f.width, f.height);
  const std::size_t n = f.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double du = f.data[2 * i] - g.data[2 * i], dv = f.data[2 * i + 1] - g.data[2 * i + 1];
    const double norm = std::hypot(du, dv);
    if (norm == 0.0) continue;
    out.data[2 * i] = du / (norm * double(n));
    out.data[2 * i + 1] = dv / (norm * double(n));
  }
  return out;
}

/// (alpha / |S|) * sum over flakes of |offset|^2 / depth, for frame 0 (t) or 1 (t+1).
inline double offset_penalty(const SnowField& field, double alpha, int frame) {
  if (field.flakes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& f : field.flakes) {
    const double d = frame == 0 ? f.depth_t : f.depth_t1;
    if (!(d > 0.0)) throw GeometryError("loss: flake depth must be positive");
    sum += (frame == 0 ? f.delta_t : f.delta_t1).squaredNorm() / d;
  }
  return alpha / double(field.flakes.size()) * sum;
}

struct LossTerms {
  double aee = 0.0;
  double penalty_t = 0.0;
  double penalty_t1 = 0.0;

  double penalty() const { return penalty_t + penalty_t1; }
  double total() const { return aee + penalty_t + penalty_t1; }
};

inline LossTerms loss_terms(const FlowField& f_check, const FlowField& f_target, const SnowField& field, double alpha_t,
                            double alpha_t1) {
  return {aee(f_check, f_target), offset_penalty(field, alpha_t, 0), offset_penalty(field, alpha_t1, 1)};
}

inline double loss(const FlowField& f_check, const FlowField& f_target, const SnowField& field, double alpha_t,
                   double alpha_t1) {
  return loss_terms(f_check, f_target, field, alpha_t, alpha_t1).total();
}

/// Forward pass of the full chain at one parameter setting.
struct Evaluation {
  RenderResult render;
  FlowRun victim;
  LossTerms terms;
};

inline Evaluation evaluate(const ScenePair& scene, const SnowField& field, const AttackConfig& cfg,
                           const FlowField& target) {
  Evaluation ev{render_pair(scene, field, cfg.render), {}, {}};
  ev.victim = run_estimator(ev.render.frame_t, ev.render.frame_t1, cfg.victim);
  ev.terms = loss_terms(ev.victim.flow, target, field, cfg.alpha_t, cfg.alpha_t1);
  return ev;
}

/// Gradient of the total loss with respect to every flake's offsets and logit.
inline std::vector<FlakeGradient> loss_gradient(Evaluation& ev, const SnowField& field, const AttackConfig& cfg,
                                                const FlowField& target) {
  auto [g1, g2] = ev.victim.backward(aee_gradient(ev.victim.flow, target));
  std::vector<FlakeGradient> grads = backward(ev.render.tape, g1, g2);
  const double n = double(field.flakes.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& f = field.flakes[i];
    grads[i].delta_t += 2.0 * cfg.alpha_t / (n * f.depth_t) * f.delta_t;
    grads[i].delta_t1 += 2.0 * cfg.alpha_t1 / (n * f.depth_t1) * f.delta_t1;
  }
  return grads;
}

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double aee_target = 0.0;
  double penalty_t = 0.0;
  double penalty_t1 = 0.0;
  double aee_ground_truth = std::numeric_limits<double>::quiet_NaN();  // NaN without background flow
};

struct AttackResult {
  std::vector<StepRecord> trace;  // steps + 1 entries, entry 0 is the random-snow baseline
  SnowField final_field;
  FlowField initial_flow;
  FlowField final_flow;
  FlowField target;
  Image initial_frame_t, initial_frame_t1;
  Image final_frame_t, final_frame_t1;
};

/// Raised when the loss stops being finite; carries the trace up to that point.
class AttackDiverged : public Error {
 public:
  AttackDiverged(const std::string& what, std::vector<StepRecord> trace) : Error(what), trace(std::move(trace)) {}
  std::vector<StepRecord> trace;
};

inline AttackResult attack(const ScenePair& scene, const SnowField& field0, const AttackConfig& cfg) {
  validate(cfg);
  validate(scene);
  AttackResult res;
  res.target = resolve_target(cfg.target, scene.frame_t.width, scene.frame_t.height);
  SnowField field = field0;
  const std::size_t n = field.flakes.size();
  std::vector<Eigen::Vector3d> m_t(n, Eigen::Vector3d::Zero()), m_t1(n, Eigen::Vector3d::Zero());
  std::vector<double> m_w(n, 0.0);

  for (int step = 0;; ++step) {
    Evaluation ev = evaluate(scene, field, cfg, res.target);
    StepRecord rec{step, ev.terms.total(), ev.terms.aee, ev.terms.penalty_t, ev.terms.penalty_t1};
    if (scene.background_flow) rec.aee_ground_truth = aee(ev.victim.flow, snow_ground_truth_flow(scene, field, cfg.render));
    res.trace.push_back(rec);
    if (!std::isfinite(rec.loss))
      throw AttackDiverged("attack: loss became non-finite at step " + std::to_string(step), res.trace);
    if (step == 0) {
      res.initial_flow = ev.victim.flow;
      res.initial_frame_t = ev.render.frame_t;
      res.initial_frame_t1 = ev.render.frame_t1;
    }
    if (step == cfg.steps) {
      res.final_flow = ev.victim.flow;
      res.final_frame_t = std::move(ev.render.frame_t);
      res.final_frame_t1 = std::move(ev.render.frame_t1);
      break;
    }
    const auto grads = loss_gradient(ev, field, cfg, res.target);
    for (std::size_t i = 0; i < n; ++i) {
      auto& f = field.flakes[i];
      if (cfg.optimize.delta_t) {
        m_t[i] = cfg.momentum * m_t[i] + grads[i].delta_t;
        f.delta_t -= cfg.lr_delta * m_t[i];
      }
      if (cfg.optimize.delta_t1) {
        m_t1[i] = cfg.momentum * m_t1[i] + grads[i].delta_t1;
        f.delta_t1 -= cfg.lr_delta * m_t1[i];
      }
      if (cfg.optimize.theta) {
        m_w[i] = cfg.momentum * m_w[i] + grads[i].logit;
        f.logit -= cfg.lr_w * m_w[i];
      }
    }
  }
  res.final_field = std::move(field);
  return res;
}

/// Renders `field` and scores victim B's flow on the result against the target.
inline double evaluate_transfer(const ScenePair& scene, const SnowField& field, const EstimatorConfig& victim_b,
                                const std::optional<FlowField>& target, const RenderParams& render = {}) {
  const FlowField tgt = resolve_target(target, scene.frame_t.width, scene.frame_t.height);
  const RenderResult r = render_pair(scene, field, render);
  return aee(estimate_flow(r.frame_t, r.frame_t1, victim_b), tgt);
}

}  // namespace snow
