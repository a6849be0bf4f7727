#include <gtest/gtest.h>

#include "snowattack/fixtures.hpp"
#include "snowattack/render.hpp"
#include "snowattack/snowsim.hpp"

using namespace snow;

TEST(InitSnowfield, CountsAndVisibility) {
  const ScenePair scene = translating_texture_scene();
  const SnowField f = init_snowfield(scene, 150, SnowDirection{}, default_fall_speed(scene), 4);
  ASSERT_EQ(f.flakes.size(), 150u);
  for (const auto& fl : f.flakes) {
    const bool vt = visible_in(scene.cam_t, fl.position, 96, 96, 0.0);
    const bool vt1 = visible_in(scene.cam_t1, fl.position + fl.motion, 96, 96, 0.0);
    EXPECT_TRUE(vt || vt1);
    EXPECT_GT(fl.depth_t, 0.0);
    EXPECT_GT(fl.depth_t1, 0.0);
    EXPECT_EQ(fl.delta_t, Eigen::Vector3d::Zero());
    EXPECT_EQ(fl.delta_t1, Eigen::Vector3d::Zero());
    EXPECT_GT(fl.world_size, 0.0);
    EXPECT_GE(fl.template_id, 0);
    EXPECT_LT(fl.template_id, int(f.templates.size()));
  }
}

TEST(InitSnowfield, SameSeedSameFieldAndPrefixConsistent) {
  const ScenePair scene = translating_texture_scene();
  const auto a = init_snowfield(scene, 60, SnowDirection{}, default_fall_speed(scene), 9);
  const auto b = init_snowfield(scene, 60, SnowDirection{}, default_fall_speed(scene), 9);
  const auto c = init_snowfield(scene, 20, SnowDirection{}, default_fall_speed(scene), 9);
  const auto d = init_snowfield(scene, 60, SnowDirection{}, default_fall_speed(scene), 10);
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(a.flakes[i].position, b.flakes[i].position);
    EXPECT_EQ(a.flakes[i].logit, b.flakes[i].logit);
  }
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.flakes[i].position, c.flakes[i].position);
  EXPECT_NE(a.flakes[0].position, d.flakes[0].position);
}

TEST(InitSnowfield, ZeroFlakes) {
  const ScenePair scene = translating_texture_scene();
  EXPECT_TRUE(init_snowfield(scene, 0, SnowDirection{}, 0.1, 1).flakes.empty());
}

TEST(InitSnowfield, MotionFollowsDirectionWithoutJitter) {
  const ScenePair scene = translating_texture_scene();
  SnowDirection dir{3.0, 1.0, 0.0};
  const auto f = init_snowfield(scene, 10, dir, 0.2, 2);
  const Eigen::Vector3d expect = 0.2 * Eigen::Vector3d(1.0, 3.0, 0.0).normalized();
  for (const auto& fl : f.flakes) EXPECT_LT((fl.motion - expect).norm(), 1e-12);
  EXPECT_THROW(init_snowfield(scene, 1, SnowDirection{0.0, 1.0, 0.0}, 0.2, 2), ConfigError);
}

TEST(InitSnowfield, TransparencyDecreasesWithDepth) {
  const ScenePair scene = translating_texture_scene();
  auto f = init_snowfield(scene, 200, SnowDirection{}, default_fall_speed(scene), 3).flakes;
  std::sort(f.begin(), f.end(), [](const auto& a, const auto& b) { return a.depth_t < b.depth_t; });
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i].transparency(), f[i - 1].transparency() + 1e-15);
}

TEST(GroundTruthFlow, NoSnowIsBackground) {
  const ScenePair scene = translating_texture_scene();
  SnowField empty = init_snowfield(scene, 0, SnowDirection{}, 0.1, 1);
  EXPECT_EQ(snow_ground_truth_flow(scene, empty, RenderParams{}), *scene.background_flow);
}

TEST(GroundTruthFlow, RequiresBackgroundFlow) {
  const ScenePair scene = random_small_scene(1);
  const SnowField f = init_snowfield(scene, 3, SnowDirection{}, default_fall_speed(scene), 1);
  EXPECT_THROW(snow_ground_truth_flow(scene, f, RenderParams{}), Error);
}

TEST(GroundTruthFlow, OpaqueFlakeOwnsItsCenterPixel) {
  const ScenePair scene = translating_texture_scene();
  SnowField f = init_snowfield(scene, 1, SnowDirection{}, default_fall_speed(scene), 1);
  auto& fl = f.flakes[0];
  fl.position = unproject(scene.cam_t, 40.0, 50.0, 4.0);  // in front of the wall
  fl.depth_t = fl.depth_t1 = 4.0;
  fl.world_size = 5.0 * 4.0 / 192.0;
  fl.template_id = 0;
  fl.logit = 8.0;
  const FlowField gt = snow_ground_truth_flow(scene, f, RenderParams{});
  const Eigen::Vector2d expect = *flake_displacement(scene, fl);
  EXPECT_NEAR(gt.u(40, 50), expect.x(), 1e-12);
  EXPECT_NEAR(gt.v(40, 50), expect.y(), 1e-12);
  EXPECT_EQ(gt.u(0, 0), 2.0);  // far corner keeps the background motion
}
