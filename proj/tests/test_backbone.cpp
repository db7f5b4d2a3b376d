#include "tfuse/backbone.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace tfuse {
namespace {

struct Fixture {
  Backbone backbone{BackboneConfig{}};
  ParameterStore params;

  explicit Fixture(std::uint64_t seed = 1) {
    Rng rng(seed);
    backbone.init_parameters(params, rng);
  }
};

Tensor random_frames(Index length, std::uint64_t seed) {
  Rng rng(seed);
  return random_uniform({length, 3, 32, 16}, 0.0, 1.0, rng);
}

TEST(BackboneConfig, ReferenceDefaults) {
  BackboneConfig cfg;
  EXPECT_EQ(cfg.num_stages, 4);
  EXPECT_EQ(cfg.embed_dim, 768);
  EXPECT_EQ(cfg.stage_shape(4), (Shape{64, 2, 1}));
}

TEST(BackboneConfig, RejectsInvalid) {
  BackboneConfig one;
  one.num_stages = 1;
  one.channels = {8};
  EXPECT_THROW(one.validate(), std::invalid_argument);

  BackboneConfig tiny;
  tiny.input = {3, 8, 8};
  EXPECT_THROW(tiny.validate(), std::invalid_argument);

  BackboneConfig zero;
  zero.channels = {8, 0, 32, 64};
  EXPECT_THROW(zero.validate(), std::invalid_argument);
}

TEST(Backbone, StageShapesFollowConfigArithmetic) {
  Fixture f;
  Tape tape(false);
  Var frames = tape.constant(random_frames(3, 2));
  const std::vector<Index> channels{8, 16, 32, 64};
  for (int s = 1; s <= 4; ++s) {
    StageFeatureMap m = f.backbone.encode_to_stage(tape, f.params, frames, s);
    EXPECT_EQ(m.stage, s);
    EXPECT_EQ(m.maps.shape(), (Shape{3, channels[s - 1], 32 >> s, 16 >> s}));
  }
}

TEST(Backbone, SingleFrameFinalStage) {
  Fixture f;
  Tape tape(false);
  StageFeatureMap m = f.backbone.encode_to_stage(tape, f.params, tape.constant(random_frames(1, 3)), 4);
  EXPECT_EQ(m.maps.shape(), (Shape{1, 64, 2, 1}));
}

TEST(Backbone, ZeroInputGivesZeroMaps) {
  Fixture f;
  Tape tape(false);
  StageFeatureMap m = f.backbone.encode_to_stage(tape, f.params, tape.constant(Tensor({2, 3, 32, 16})), 4);
  EXPECT_EQ(m.maps.value().values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backbone, StageOutOfRange) {
  Fixture f;
  Tape tape(false);
  Var frames = tape.constant(random_frames(1, 4));
  EXPECT_THROW(f.backbone.encode_to_stage(tape, f.params, frames, 0), std::out_of_range);
  EXPECT_THROW(f.backbone.encode_to_stage(tape, f.params, frames, 5), std::out_of_range);
}

TEST(Backbone, WrongFrameShape) {
  Fixture f;
  Tape tape(false);
  EXPECT_THROW(f.backbone.encode_to_stage(tape, f.params, tape.constant(Tensor({1, 3, 16, 16})), 1),
               std::invalid_argument);
}

TEST(Backbone, LastBranchIsPoolThenProjection) {
  Fixture f;
  Tape tape(false);
  StageFeatureMap m = f.backbone.encode_to_stage(tape, f.params, tape.constant(random_frames(1, 5)), 4);
  Var map = reshape(m.maps, Shape{64, 2, 1});
  Tensor g = f.backbone.continue_from_stage(tape, f.params, map, 4).value();

  const Tensor& mv = map.value();
  Eigen::RowVectorXd pooled(64);
  for (Index c = 0; c < 64; ++c) pooled[c] = (mv[c * 2] + mv[c * 2 + 1]) / 2.0;
  const Tensor& w = f.params.get(Backbone::projection_weight_path(4));
  const Tensor& b = f.params.get(Backbone::projection_bias_path(4));
  Eigen::RowVectorXd expect = pooled * w.matrix() + b.matrix();
  ASSERT_EQ(g.shape(), (Shape{768}));
  for (Index i = 0; i < 768; ++i) EXPECT_NEAR(g[i], expect[i], 1e-12);
}

TEST(Backbone, ZeroMapGivesZeroEmbedding) {
  Fixture f;
  Tape tape(false);
  for (int s = 1; s <= 4; ++s) {
    Var map = tape.constant(Tensor(BackboneConfig{}.stage_shape(s)));
    Tensor g = f.backbone.continue_from_stage(tape, f.params, map, s).value();
    EXPECT_EQ(g.values().cwiseAbs().maxCoeff(), 0.0) << "stage " << s;
  }
}

TEST(Backbone, MapShapeMismatchAtStageBoundary) {
  Fixture f;
  Tape tape(false);
  EXPECT_THROW(f.backbone.continue_from_stage(tape, f.params, tape.constant(Tensor({8, 16, 8})), 2),
               std::invalid_argument);
}

TEST(Backbone, SingleFrameBranchesAgreeBeforeProjection) {
  Fixture f;
  Tape tape(false);
  Var frames = tape.constant(random_frames(1, 6));
  std::vector<Tensor> pooled;
  for (int s = 1; s <= 4; ++s) {
    StageFeatureMap m = f.backbone.encode_to_stage(tape, f.params, frames, s);
    Shape one = BackboneConfig{}.stage_shape(s);
    pooled.push_back(f.backbone.suffix_pooled(tape, f.params, reshape(m.maps, one), s).value());
  }
  for (int s = 1; s < 4; ++s) EXPECT_EQ(pooled[s], pooled[0]) << "stage " << s + 1;
}

TEST(Backbone, FramesAreIndependent) {
  Fixture f;
  Tensor frames = random_frames(3, 7);
  Tensor perturbed = frames;
  const Index per = 3 * 32 * 16;
  for (Index i = 2 * per; i < 3 * per; ++i) perturbed[i] += 0.5;

  Tape tape(false);
  const Tensor a = f.backbone.encode_to_stage(tape, f.params, tape.constant(frames), 4).maps.value();
  const Tensor b = f.backbone.encode_to_stage(tape, f.params, tape.constant(perturbed), 4).maps.value();
  const Index out = 64 * 2 * 1;
  for (Index i = 0; i < 2 * out; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a.values().tail(out), b.values().tail(out));
}

TEST(Backbone, SuffixStagesShareParameterNodes) {
  Fixture f;
  Tape tape;
  Var frames = tape.constant(random_frames(2, 8));
  f.backbone.encode_to_stage(tape, f.params, frames, 4);
  const Index before = tape.size();
  for (const std::string& path : f.backbone.stage_parameter_paths(1, 4)) {
    EXPECT_EQ(f.params.on(tape, path).id(), f.params.on(tape, path).id());
  }
  EXPECT_EQ(tape.size(), before);

  auto suffix2 = f.backbone.stage_parameter_paths(2, 4);
  auto suffix1 = f.backbone.stage_parameter_paths(1, 4);
  for (const std::string& p : suffix2) {
    EXPECT_NE(std::find(suffix1.begin(), suffix1.end(), p), suffix1.end()) << p;
  }
  EXPECT_TRUE(f.backbone.stage_parameter_paths(4, 4).empty());
}

TEST(Backbone, BranchProjectionsAreSeparate) {
  Fixture f;
  for (int a = 1; a <= 4; ++a) {
    for (int b = a + 1; b <= 4; ++b) {
      EXPECT_NE(Backbone::projection_weight_path(a), Backbone::projection_weight_path(b));
      EXPECT_NE(f.params.get(Backbone::projection_weight_path(a)), f.params.get(Backbone::projection_weight_path(b)));
    }
  }
}

TEST(PoolFrameFeatures, ConstantMap) {
  Tape tape(false);
  Tensor pooled = Backbone::pool_frame_features(tape.constant(Tensor::constant({2, 3, 4, 5}, 1.25))).value();
  EXPECT_EQ(pooled, Tensor::constant({2, 3}, 1.25));
}

TEST(PoolFrameFeatures, UnitSpatialMapKeepsChannels) {
  Tape tape(false);
  Tensor maps({2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(Backbone::pool_frame_features(tape.constant(maps)).value(), Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
}

TEST(PoolFrameFeatures, MatchesDoubleLoop) {
  Rng rng(9);
  Tensor maps = random_normal({3, 4, 5, 6}, 1.0, rng);
  Tape tape(false);
  Tensor pooled = Backbone::pool_frame_features(tape.constant(maps)).value();
  for (Index l = 0; l < 3; ++l) {
    for (Index c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (Index y = 0; y < 5; ++y) {
        for (Index x = 0; x < 6; ++x) acc += maps.at({l, c, y, x});
      }
      EXPECT_NEAR(pooled.at({l, c}), acc / 30.0, 1e-14);
    }
  }
}

}  // namespace
}  // namespace tfuse
