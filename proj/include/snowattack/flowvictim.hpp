#pragma once

// Differentiable classical flow estimators used as attack victims:
// coarse-to-fine Horn-Schunck with unrolled Jacobi sweeps, and windowed
// Lucas-Kanade with iterative warping. Both are recorded on an array tape so
// the flow can be differentiated with respect to the two input frames.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "snowattack/array_tape.hpp"
#include "snowattack/error.hpp"
#include "snowattack/render.hpp"
#include "snowattack/scenefmt.hpp"

namespace snow {

enum class EstimatorKind { horn_schunck, lucas_kanade };

inline std::string to_string(EstimatorKind k) {
  return k == EstimatorKind::horn_schunck ? "horn_schunck" : "lucas_kanade";
}

inline EstimatorKind parse_estimator_kind(const std::string& s) {
  if (s == "horn_schunck" || s == "hs") return EstimatorKind::horn_schunck;
  if (s == "lucas_kanade" || s == "lk") return EstimatorKind::lucas_kanade;
  throw ConfigError("unknown victim '" + s + "' (expected horn_schunck or lucas_kanade)");
}

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::horn_schunck;
  double hs_lambda = 0.01;
  int hs_iterations = 40;   // Jacobi sweeps per pyramid level
  int lk_window = 7;
  int lk_iterations = 3;    // warp-and-solve rounds per pyramid level
  double lk_regularization = 1e-4;
  int pyramid_levels = 3;
};

inline void validate(const EstimatorConfig& c) {
  if (!(c.hs_lambda > 0.0)) throw ConfigError("victim: hs_lambda must be positive");
  if (c.hs_iterations < 1) throw ConfigError("victim: hs_iterations must be at least 1");
  if (c.lk_window < 3 || c.lk_window % 2 == 0) throw ConfigError("victim: lk_window must be odd and at least 3");
  if (c.lk_iterations < 1) throw ConfigError("victim: lk_iterations must be at least 1");
  if (!(c.lk_regularization > 0.0)) throw ConfigError("victim: lk_regularization must be positive");
  if (c.pyramid_levels < 1) throw ConfigError("victim: pyramid_levels must be at least 1");
}

/// Coarsest pyramid levels are dropped once a side would fall below this.
inline constexpr int kMinPyramidSide = 4;
/// Largest absolute image derivative below which the data term is treated as absent.
inline constexpr double kDegenerateGradient = 1e-12;

struct FlowDiagnostics {
  int levels_used = 0;
  bool degenerate_data = false;  // both frames have (numerically) zero spatial gradient
};

class FlowRun;
inline FlowRun run_estimator(const Image& I1, const Image& I2, const EstimatorConfig& cfg);

/// A recorded estimator run. `backward` maps an upstream flow gradient to
/// gradients of the two RGB input frames and may be called repeatedly.
class FlowRun {
 public:
  FlowField flow;
  FlowDiagnostics diagnostics;

  std::pair<ImageGradient, ImageGradient> backward(const FlowField& grad_flow) {
    if (grad_flow.width != flow.width || grad_flow.height != flow.height || grad_flow.data.size() != flow.data.size())
      throw ShapeError("flow backward: gradient shape does not match the estimate");
    ImageGradient g1(flow.width, flow.height), g2(flow.width, flow.height);
    tape_->backward(out_, grad_flow.data);
    g1.data = tape_->grad(in1_);
    g2.data = tape_->grad(in2_);
    return {std::move(g1), std::move(g2)};
  }

 private:
  friend FlowRun run_estimator(const Image&, const Image&, const EstimatorConfig&);
  std::unique_ptr<ad::Tape> tape_ = std::make_unique<ad::Tape>();
  ad::Id in1_ = -1, in2_ = -1, out_ = -1;
};

inline FlowRun run_estimator(const Image& I1, const Image& I2, const EstimatorConfig& cfg) {
  validate(cfg);
  if (I1.width != I2.width || I1.height != I2.height) throw ShapeError("estimate_flow: frame dimensions differ");
  if (I1.width < 1 || I1.height < 1) throw ShapeError("estimate_flow: empty frames");

  FlowRun run;
  ad::Tape& t = *run.tape_;
  const ad::Shape rgb{I1.width, I1.height, 3};
  run.in1_ = ad::input(t, rgb, I1.data);
  run.in2_ = ad::input(t, rgb, I2.data);

  std::vector<ad::Id> p1{ad::luma(t, run.in1_)}, p2{ad::luma(t, run.in2_)};
  while (int(p1.size()) < cfg.pyramid_levels) {
    const ad::Shape s = t.shape(p1.back());
    if ((s.width + 1) / 2 < kMinPyramidSide || (s.height + 1) / 2 < kMinPyramidSide) break;
    p1.push_back(ad::downsample(t, p1.back()));
    p2.push_back(ad::downsample(t, p2.back()));
  }
  run.diagnostics.levels_used = int(p1.size());

  ad::Id flow = -1;
  for (int level = int(p1.size()) - 1; level >= 0; --level) {
    const ad::Shape s = t.shape(p1[std::size_t(level)]);
    flow = flow < 0 ? ad::zeros(t, {s.width, s.height, 2}) : ad::upsample_flow(t, flow, s.width, s.height);
    const ad::Id a = p1[std::size_t(level)], b = p2[std::size_t(level)];
    const ad::Id ax = ad::central_diff(t, a, 0), ay = ad::central_diff(t, a, 1);
    const int rounds = cfg.kind == EstimatorKind::horn_schunck ? 1 : cfg.lk_iterations;
    for (int r = 0; r < rounds; ++r) {
      const ad::Id bw = ad::warp(t, b, flow);
      const ad::Id ix = ad::lincomb(t, 0.5, ax, 0.5, ad::central_diff(t, bw, 0));
      const ad::Id iy = ad::lincomb(t, 0.5, ay, 0.5, ad::central_diff(t, bw, 1));
      const ad::Id it = ad::lincomb(t, 1.0, bw, -1.0, a);
      if (level == 0 && r == 0) {
        double m = 0.0;
        for (ad::Id id : {ix, iy})
          for (double v : t.value(id)) m = std::max(m, std::abs(v));
        run.diagnostics.degenerate_data = m < kDegenerateGradient;
      }
      if (cfg.kind == EstimatorKind::horn_schunck) {
        const ad::Id base = flow;
        for (int k = 0; k < cfg.hs_iterations; ++k) flow = ad::hs_step(t, flow, base, ix, iy, it, cfg.hs_lambda);
      } else {
        const int rad = cfg.lk_window / 2;
        const ad::Id sxx = ad::box_mean(t, ad::mul(t, ix, ix), rad);
        const ad::Id sxy = ad::box_mean(t, ad::mul(t, ix, iy), rad);
        const ad::Id syy = ad::box_mean(t, ad::mul(t, iy, iy), rad);
        const ad::Id sxt = ad::box_mean(t, ad::mul(t, ix, it), rad);
        const ad::Id syt = ad::box_mean(t, ad::mul(t, iy, it), rad);
        flow = ad::lk_update(t, flow, sxx, sxy, syy, sxt, syt, cfg.lk_regularization);
      }
    }
  }
  run.out_ = flow;
  run.flow = FlowField(I1.width, I1.height);
  run.flow.data = t.value(flow);
  return run;
}

inline FlowField estimate_flow(const Image& I1, const Image& I2, const EstimatorConfig& cfg) {
  return run_estimator(I1, I2, cfg).flow;
}

inline std::pair<ImageGradient, ImageGradient> flow_input_gradient(const Image& I1, const Image& I2,
                                                                   const EstimatorConfig& cfg,
                                                                   const FlowField& grad_flow) {
  return run_estimator(I1, I2, cfg).backward(grad_flow);
}

}  // namespace snow
