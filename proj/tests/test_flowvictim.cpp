#include <gtest/gtest.h>

#include <algorithm>

#include "snowattack/array_tape.hpp"
#include "snowattack/fixtures.hpp"
#include "snowattack/flowvictim.hpp"
#include "snowattack/gradcheck.hpp"

using namespace snow;

namespace {

double median(std::vector<double> v) {
  auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

std::vector<double> component(const FlowField& f, int c) {
  std::vector<double> out(f.pixels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.data[2 * i + std::size_t(c)];
  return out;
}

double variance(const std::vector<double>& v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

Image flip_x(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

EstimatorConfig config(EstimatorKind k) {
  EstimatorConfig c;
  c.kind = k;
  return c;
}

const EstimatorKind kKinds[] = {EstimatorKind::horn_schunck, EstimatorKind::lucas_kanade};

}  // namespace

TEST(EstimatorConfig, ValidationAndParsing) {
  EstimatorConfig c;
  EXPECT_NO_THROW(validate(c));
  c.hs_lambda = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.lk_window = 4;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.pyramid_levels = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.hs_iterations = 0;
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_EQ(parse_estimator_kind("lk"), EstimatorKind::lucas_kanade);
  EXPECT_EQ(parse_estimator_kind("horn_schunck"), EstimatorKind::horn_schunck);
  EXPECT_THROW(parse_estimator_kind("raft"), ConfigError);
}

TEST(EstimateFlow, IdenticalFramesGiveZeroFlow) {
  const ScenePair s = random_small_scene(3, 32);
  for (auto k : kKinds) {
    const FlowField f = estimate_flow(s.frame_t, s.frame_t, config(k));
    for (double v : f.data) EXPECT_NEAR(v, 0.0, 1e-6);
  }
}

TEST(EstimateFlow, RecoversWrappedUnitShift) {
  const ScenePair s = translating_texture_scene({64, 1.0, 4.0, 4.0, 128.0, 11});
  for (auto k : kKinds) {
    const FlowField f = estimate_flow(s.frame_t, s.frame_t1, config(k));
    EXPECT_NEAR(median(component(f, 0)), 1.0, 0.15) << to_string(k);
    EXPECT_NEAR(median(component(f, 1)), 0.0, 0.15) << to_string(k);
  }
}

TEST(EstimateFlow, LargeSmoothnessWeightFlattensTheField) {
  // frame t+1: texture displaced by a spatially varying flow
  const ScenePair s = translating_texture_scene({48, 0.0, 4.0, 4.0, 96.0, 5});
  const Image& a = s.frame_t;
  Image b(a.width, a.height);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const int sx = std::clamp(x - (x < a.width / 2 ? 1 : -1), 0, a.width - 1);
      for (int c = 0; c < 3; ++c) b.at(x, y, c) = a.at(sx, y, c);
    }
  EstimatorConfig lo = config(EstimatorKind::horn_schunck), hi = lo;
  lo.hs_lambda = 1.0;
  hi.hs_lambda = 1e4;
  const double v_lo = variance(component(estimate_flow(a, b, lo), 0));
  const double v_hi = variance(component(estimate_flow(a, b, hi), 0));
  EXPECT_LT(v_hi, v_lo);
  EXPECT_LT(v_hi, 1e-6);
}

TEST(EstimateFlow, HorizontalFlipNegatesU) {
  const ScenePair s = translating_texture_scene({64, 1.0, 4.0, 4.0, 128.0, 13});
  for (auto k : kKinds) {
    const FlowField f = estimate_flow(s.frame_t, s.frame_t1, config(k));
    const FlowField g = estimate_flow(flip_x(s.frame_t), flip_x(s.frame_t1), config(k));
    std::vector<double> du, dv;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        du.push_back(std::abs(f.u(x, y) + g.u(63 - x, y)));
        dv.push_back(std::abs(f.v(x, y) - g.v(63 - x, y)));
      }
    EXPECT_LT(median(du), 0.05) << to_string(k);
    EXPECT_LT(median(dv), 0.05) << to_string(k);
  }
}

TEST(EstimateFlow, DeterministicAcrossRuns) {
  const ScenePair s = random_small_scene(8, 24);
  for (auto k : kKinds)
    EXPECT_EQ(estimate_flow(s.frame_t, s.frame_t1, config(k)), estimate_flow(s.frame_t, s.frame_t1, config(k)));
}

TEST(EstimateFlow, DimensionMismatchRejected) {
  EXPECT_THROW(estimate_flow(Image(8, 8), Image(8, 9), EstimatorConfig{}), ShapeError);
}

TEST(EstimateFlow, PyramidStopsAtMinimumSide) {
  const ScenePair s = random_small_scene(1, 16);
  EstimatorConfig c;
  c.pyramid_levels = 10;
  EXPECT_EQ(run_estimator(s.frame_t, s.frame_t1, c).diagnostics.levels_used, 3);  // 16, 8, 4
}

TEST(FlowInputGradient, ZeroUpstreamGivesZero) {
  const ScenePair s = random_small_scene(2);
  for (auto k : kKinds) {
    auto [g1, g2] = flow_input_gradient(s.frame_t, s.frame_t1, config(k), FlowField(16, 16));
    for (double v : g1.data) EXPECT_EQ(v, 0.0);
    for (double v : g2.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(FlowInputGradient, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ScenePair s = random_small_scene(seed);
    for (auto k : kKinds) {
      EstimatorConfig c = config(k);
      c.hs_iterations = 20;
      GradCheckOptions opt;
      opt.seed = seed;
      for (const auto& g : check_victim(s.frame_t, s.frame_t1, c, opt).groups)
        EXPECT_LT(g.max_rel, 1e-3) << g.name << " seed " << seed;
    }
  }
}

TEST(FlowInputGradient, ConstantImagesAreDegenerateButFinite) {
  const Image a(16, 16, 0.4), b(16, 16, 0.6);
  for (auto k : kKinds) {
    FlowRun run = run_estimator(a, b, config(k));
    EXPECT_TRUE(run.diagnostics.degenerate_data);
    FlowField g(16, 16, 1.0, -1.0);
    auto [g1, g2] = run.backward(g);
    for (double v : g1.data) EXPECT_TRUE(std::isfinite(v));
    for (double v : g2.data) EXPECT_TRUE(std::isfinite(v));
    for (double v : run.flow.data) EXPECT_TRUE(std::isfinite(v));
  }
  const ScenePair s = random_small_scene(1);
  EXPECT_FALSE(run_estimator(s.frame_t, s.frame_t1, EstimatorConfig{}).diagnostics.degenerate_data);
}

TEST(FlowInputGradient, ShapeMismatchRejected) {
  const ScenePair s = random_small_scene(1);
  FlowRun run = run_estimator(s.frame_t, s.frame_t1, EstimatorConfig{});
  EXPECT_THROW(run.backward(FlowField(4, 4)), ShapeError);
}

TEST(ArrayTape, OpsMatchFiniteDifferences) {
  // scalar objective through every op used by the victims
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 9, h = 7;
  std::vector<double> img(std::size_t(w) * h * 3), fl(std::size_t(w) * h * 2), wts(std::size_t(w) * h * 2);
  for (double& v : img) v = u(rng);
  for (double& v : fl) v = 2.0 * u(rng) - 1.0;
  for (double& v : wts) v = u(rng) - 0.5;
  auto run = [&](ad::Tape& t, ad::Id& in_img, ad::Id& in_flow) {
    in_img = ad::input(t, {w, h, 3}, img);
    in_flow = ad::input(t, {w, h, 2}, fl);
    const ad::Id g = ad::luma(t, in_img);
    const ad::Id warped = ad::warp(t, g, in_flow);
    const ad::Id ix = ad::central_diff(t, warped, 0), iy = ad::central_diff(t, g, 1);
    const ad::Id it = ad::lincomb(t, 1.0, warped, -1.0, g);
    ad::Id f = ad::hs_step(t, in_flow, in_flow, ix, iy, it, 0.05);
    const ad::Id sxx = ad::box_mean(t, ad::mul(t, ix, ix), 1), sxy = ad::box_mean(t, ad::mul(t, ix, iy), 1);
    const ad::Id syy = ad::box_mean(t, ad::mul(t, iy, iy), 1), sxt = ad::box_mean(t, ad::mul(t, ix, it), 1);
    const ad::Id syt = ad::box_mean(t, ad::mul(t, iy, it), 1);
    f = ad::lk_update(t, f, sxx, sxy, syy, sxt, syt, 1e-2);
    // coarse level: downsampled frames feed one HS step, upsampled back
    const ad::Id gs = ad::downsample(t, g), ws = ad::downsample(t, warped);
    const ad::Id zero = ad::zeros(t, {t.shape(gs).width, t.shape(gs).height, 2});
    const ad::Id coarse = ad::hs_step(t, zero, zero, ad::central_diff(t, ws, 0), ad::central_diff(t, gs, 1),
                                      ad::lincomb(t, 1.0, ws, -1.0, gs), 0.05);
    return ad::add(t, f, ad::upsample_flow(t, coarse, w, h));
  };
  ad::Tape t;
  ad::Id a, b;
  const ad::Id out = run(t, a, b);
  t.backward(out, wts);
  const auto g_img = t.grad(a), g_flow = t.grad(b);
  auto objective = [&] {
    ad::Tape t2;
    ad::Id a2, b2;
    const ad::Id o = run(t2, a2, b2);
    double s = 0.0;
    for (std::size_t i = 0; i < wts.size(); ++i) s += wts[i] * t2.value(o)[i];
    return s;
  };
  for (std::size_t i = 0; i < img.size(); i += 7)
    EXPECT_LT(relative_error(g_img[i], detail::central_difference(objective, img[i], 1e-4), 1e-6), 1e-5);
  for (std::size_t i = 0; i < fl.size(); i += 5)
    EXPECT_LT(relative_error(g_flow[i], detail::central_difference(objective, fl[i], 1e-4), 1e-6), 1e-5);
}
