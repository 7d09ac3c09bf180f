#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "streamrec/errors.hpp"
#include "streamrec/pipeline.hpp"

using namespace streamrec;

namespace {

ModelConfig small_config() {
  return {.dim = 16, .heads = 2, .depth = 1, .camera_depth = 1, .state_count = 4, .window_size = 4, .patch = 4,
          .head_width = 8};
}

}  // namespace

TEST(Pipeline, OracleClosedLoopReproducesGroundTruth) {
  const SceneSample scene = generate_scene(21, 9, 6, 7, Trajectory::orbit);
  const Model model = Model::oracle(small_config(), 21);
  EXPECT_TRUE(model.uses_oracle());
  EXPECT_EQ(model.config.patch, 1u);
  const RunResult r = run_stream(model, observations_from(scene));
  ASSERT_EQ(r.frame_ids, scene.frame_ids);
  for (std::size_t f = 0; f < 9; ++f) {
    EXPECT_NEAR(std::abs(r.poses[f].rotation.dot(scene.poses[f].rotation)), 1.0, 1e-12);
    EXPECT_LT((r.poses[f].translation - scene.poses[f].translation).norm(), 1e-12);
    for (std::size_t k = 0; k < scene.points[f].pixel_count(); ++k) {
      if (!scene.points[f].valid[k]) continue;
      EXPECT_EQ(r.points[f].points[k], scene.points[f].points[k]);
      EXPECT_EQ(r.confidence[f].conf[k], 2.0);
    }
  }
}

TEST(Pipeline, WindowAndPoolBookkeeping) {
  const SceneSample scene = generate_scene(1, 11, 8, 8, Trajectory::line);
  const Model model = Model::random(small_config(), 3);
  const RunResult r = run_stream(model, observations_from(scene));
  EXPECT_EQ(r.windows.size(), expected_window_count(11, 4));
  EXPECT_EQ(r.pool.size(), r.windows.size() * 4);
  EXPECT_EQ(r.pool.token_dim(), 32u);
  EXPECT_EQ(r.frame_ids.size(), 11u);
  EXPECT_EQ(r.windows.back().window.duplicated.back(), true);
  for (const auto& rec : r.windows) {
    EXPECT_EQ(rec.poses.size(), 4u);
    EXPECT_EQ(rec.camera_tokens.rows(), 4u);
    EXPECT_EQ(rec.camera_tokens.cols(), 32u);
    EXPECT_TRUE(rec.camera_tokens.all_finite());
  }
  for (const auto& c : r.confidence)
    for (double v : c.conf) EXPECT_GE(v, 1.0);
}

TEST(Pipeline, EarlierWindowsIgnoreLaterFrames) {
  const SceneSample scene = generate_scene(2, 10, 8, 8, Trajectory::orbit);
  const Model model = Model::random(small_config(), 4);
  auto obs = observations_from(scene);
  const RunResult full = run_stream(model, obs);
  const RunResult prefix = run_stream(model, std::span(obs).first(6));
  ASSERT_EQ(prefix.windows.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(prefix.windows[k].camera_tokens, full.windows[k].camera_tokens);
    for (std::size_t s = 0; s < 4; ++s) {
      EXPECT_EQ(prefix.windows[k].poses[s].translation, full.windows[k].poses[s].translation);
      EXPECT_EQ(prefix.windows[k].poses[s].rotation.w, full.windows[k].poses[s].rotation.w);
    }
  }
  // Changing the last frames leaves the first windows bit-identical.
  for (std::size_t f = 6; f < 10; ++f)
    for (auto& p : obs[f].image.points) p *= 3.0;
  const RunResult changed = run_stream(model, obs);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(changed.windows[k].camera_tokens, full.windows[k].camera_tokens);
  EXPECT_NE(changed.windows[3].camera_tokens, full.windows[3].camera_tokens);
}

TEST(Pipeline, SingleFrameStreamUsesPaddedWindow) {
  const SceneSample scene = generate_scene(5, 1, 4, 4, Trajectory::orbit);
  const Model model = Model::random(small_config(), 5);
  StreamingReconstructor rec(model, 4, 4);
  rec.push(observations_from(scene)[0]);
  EXPECT_TRUE(rec.windows().empty());
  rec.finish();
  ASSERT_EQ(rec.windows().size(), 1u);
  EXPECT_EQ(rec.windows()[0].window.frames, (std::vector<FrameId>{0, 0, 0, 0}));
  ASSERT_EQ(rec.outputs().size(), 1u);
  EXPECT_EQ(rec.outputs().at(0).appearances, 1u);
  EXPECT_THROW(rec.push(observations_from(scene)[0]), OrderingError);
}

TEST(Pipeline, ThreadCountDoesNotChangeResults) {
  const SceneSample scene = generate_scene(6, 7, 8, 8, Trajectory::random_walk);
  const Model model = Model::random(small_config(), 6);
  const auto obs = observations_from(scene);
  const RunResult a = run_stream(model, obs, 1);
  const RunResult b = run_stream(model, obs, 2);
  const RunResult c = run_stream(model, obs, 4);
  for (std::size_t f = 0; f < 7; ++f) {
    EXPECT_EQ(a.points[f].points, b.points[f].points);
    EXPECT_EQ(a.confidence[f].conf, b.confidence[f].conf);
    EXPECT_EQ(a.points[f].points, c.points[f].points);
    EXPECT_EQ(a.poses[f].translation, c.poses[f].translation);
  }
}

TEST(Pipeline, RejectsBadFrames) {
  const Model model = Model::random(small_config(), 7);
  StreamingReconstructor rec(model, 8, 8);
  FrameObservation bad{0, PointMap(4, 8), Pose{}};
  EXPECT_THROW(rec.push(bad), ShapeError);
  FrameObservation ok{3, PointMap(8, 8), Pose{}};
  rec.push(ok);
  ok.id = 2;
  EXPECT_THROW(rec.push(ok), OrderingError);
  EXPECT_THROW(run_stream(model, std::vector<FrameObservation>{}), EmptyInputError);
}

TEST(Model, RandomIsDeterministicPerSeed) {
  const Model a = Model::random(small_config(), 9), b = Model::random(small_config(), 9);
  const Model c = Model::random(small_config(), 10);
  EXPECT_EQ(a.decoder.units[0].frame.w1, b.decoder.units[0].frame.w1);
  EXPECT_EQ(a.camera_head.out_weight, b.camera_head.out_weight);
  EXPECT_NE(a.decoder.units[0].frame.w1, c.decoder.units[0].frame.w1);
}

TEST(PatchEmbedder, EncodesPatchesRowMajor) {
  SeededRng rng(1);
  const PatchEmbedder e = PatchEmbedder::random(rng, 2, 5);
  PointMap img(4, 2);
  for (std::size_t k = 0; k < 8; ++k) img.points[k] = Vec3(k, 0, 0);
  const Matrix tokens = e.encode(img);
  EXPECT_EQ(tokens.rows(), 2u);
  EXPECT_EQ(tokens.cols(), 5u);
  // Changing a pixel of the second patch leaves the first token alone.
  PointMap img2 = img;
  img2.at(1, 3) = Vec3(9, 9, 9);
  const Matrix t2 = e.encode(img2);
  EXPECT_EQ(tokens.slice_rows(0, 1), t2.slice_rows(0, 1));
  EXPECT_NE(tokens.slice_rows(1, 1), t2.slice_rows(1, 1));
}

TEST(MemoryFootprint, DefaultConfiguration) {
  const MemoryFootprint m = memory_footprint(64, 2, 17);
  EXPECT_EQ(m.pool_bytes_per_frame, 1024u);
  EXPECT_EQ(m.kv_bytes_per_frame, 34816u);
  EXPECT_DOUBLE_EQ(m.ratio, 34.0);
}
