#include "tfuse/semantic_fusion.hpp"

#include <gtest/gtest.h>

namespace tfuse {
namespace {

Tensor random_frames(Index length, std::uint64_t seed) {
  Rng rng(seed);
  return random_uniform({length, 3, 32, 16}, 0.0, 1.0, rng);
}

ParameterStore classifier(Index dg, Index k, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore p;
  SemanticClassifier cls;
  p.add(cls.weight, random_normal({dg, k}, stddev, rng));
  p.add(cls.bias, random_normal({k}, stddev, rng));
  return p;
}

// Randomizes the heads that start at zero so tests see non-trivial weights.
ParameterStore trained_like(const FusionModel& model, std::uint64_t seed) {
  ParameterStore p = model.initial_parameters(seed);
  Rng rng(seed + 1);
  SemanticClassifier cls;
  p.get_mutable(cls.weight) = random_normal(p.get(cls.weight).shape(), 0.05, rng);
  p.get_mutable(cls.bias) = random_normal(p.get(cls.bias).shape(), 0.5, rng);
  for (int s = 1; s <= 4; ++s) {
    const IntraAttentionHead h = IntraAttentionHead::for_branch(s);
    p.get_mutable(h.weight) = random_normal(p.get(h.weight).shape(), 0.5, rng);
  }
  return p;
}

TEST(Variant, ParseAndName) {
  Variant v = Variant::parse("late_fusion/intra_inter_rn");
  EXPECT_EQ(v.fusion, FusionKind::kLateFusion);
  EXPECT_EQ(v.attention, AttentionKind::kIntraInterRn);
  EXPECT_EQ(v.name(), "late_fusion/intra_inter_rn");
  EXPECT_EQ(Variant::parse("ms_average").attention, AttentionKind::kAvgPool);
  EXPECT_THROW(Variant::parse("mid_fusion"), std::invalid_argument);
  EXPECT_THROW(Variant::parse("late_fusion/rn"), std::invalid_argument);
}

TEST(SemanticAttention, SingleBranchIsOne) {
  ParameterStore p = classifier(5, 1, 1.0, 1);
  Rng rng(2);
  Tape tape(false);
  Tensor u = semantic_attention(tape, p, {}, tape.constant(random_normal({1, 5}, 1, rng))).value();
  EXPECT_EQ(u, Tensor({1}, {1.0}));
}

TEST(SemanticAttention, ZeroClassifierIsUniform) {
  ParameterStore p = classifier(5, 4, 0.0, 3);
  Rng rng(4);
  Tape tape(false);
  Tensor u = semantic_attention(tape, p, {}, tape.constant(random_normal({4, 5}, 1, rng))).value();
  EXPECT_EQ(u, Tensor::constant({4}, 0.25));
}

TEST(SemanticAttention, ColumnMeanOfSoftmaxMatchesLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Index k = 1 + static_cast<Index>(seed % 4), dg = 7;
    ParameterStore p = classifier(dg, k, 1.0, seed);
    Rng rng(seed + 50);
    Tensor g = random_normal({k, dg}, 1, rng);
    Tape tape(false);
    Tensor u = semantic_attention(tape, p, {}, tape.constant(g)).value();

    const Tensor& w = p.get("semantic.weight");
    const Tensor& b = p.get("semantic.bias");
    std::vector<double> expect(static_cast<std::size_t>(k), 0.0);
    for (Index i = 0; i < k; ++i) {
      std::vector<double> logits(static_cast<std::size_t>(k));
      double top = -1e300;
      for (Index j = 0; j < k; ++j) {
        double z = b[j];
        for (Index d = 0; d < dg; ++d) z += g.at({i, d}) * w.at({d, j});
        logits[static_cast<std::size_t>(j)] = z;
        top = std::max(top, z);
      }
      double total = 0.0;
      for (double& z : logits) total += (z = std::exp(z - top));
      for (Index j = 0; j < k; ++j) expect[static_cast<std::size_t>(j)] += logits[static_cast<std::size_t>(j)] / total / k;
    }
    double sum_u = 0.0;
    for (Index j = 0; j < k; ++j) {
      EXPECT_NEAR(u[j], expect[static_cast<std::size_t>(j)], 1e-10);
      sum_u += u[j];
    }
    EXPECT_NEAR(sum_u, 1.0, 1e-9);
  }
}

TEST(SemanticAttention, LogitShiftLeavesWeightsUnchanged) {
  ParameterStore p = classifier(6, 3, 1.0, 5);
  ParameterStore shifted = p;
  shifted.get_mutable("semantic.bias").values().array() += 40.0;
  Rng rng(6);
  Tensor g = random_normal({3, 6}, 1, rng);
  Tape tape(false);
  Tensor a = semantic_attention(tape, p, {}, tape.constant(g)).value();
  Tensor b = semantic_attention(tape, shifted, {}, tape.constant(g)).value();
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

TEST(SemanticAttention, SharedScalingKeepsArgmax) {
  ParameterStore p = classifier(6, 3, 1.0, 7);
  Rng rng(8);
  Tensor row = random_normal({1, 6}, 1, rng);
  Tensor g({3, 6});
  for (Index i = 0; i < 3; ++i) std::copy_n(row.data(), 6, g.data() + i * 6);
  Tape tape(false);
  Tensor base = semantic_attention(tape, p, {}, tape.constant(g)).value();
  Index arg = 0;
  base.values().maxCoeff(&arg);
  for (double c : {0.1, 0.5, 2.0, 10.0}) {
    ParameterStore scaled = p;
    scaled.get_mutable("semantic.weight").values() *= c;
    scaled.get_mutable("semantic.bias").values() *= c;
    Index got = 0;
    semantic_attention(tape, scaled, {}, tape.constant(g)).value().values().maxCoeff(&got);
    EXPECT_EQ(got, arg) << "scale " << c;
  }
}

TEST(SemanticAttention, DimensionMismatch) {
  ParameterStore p = classifier(5, 3, 1.0, 9);
  Tape tape(false);
  EXPECT_THROW(semantic_attention(tape, p, {}, tape.constant(Tensor({3, 6}))), std::invalid_argument);
  EXPECT_THROW(semantic_attention(tape, p, {}, tape.constant(Tensor({2, 5}))), std::invalid_argument);
}

TEST(SemanticFuse, UniformAndOneHot) {
  Rng rng(10);
  Tensor g = random_normal({4, 5}, 1, rng);
  Tape tape(false);
  Tensor avg = semantic_fuse(tape.constant(g), tape.constant(Tensor::constant({4}, 0.25))).value();
  for (Index d = 0; d < 5; ++d) {
    EXPECT_EQ(avg[d], 0.25 * g.at({0, d}) + 0.25 * g.at({1, d}) + 0.25 * g.at({2, d}) + 0.25 * g.at({3, d}));
  }
  for (Index j = 0; j < 4; ++j) {
    Tensor u({4});
    u[j] = 1.0;
    Tensor pick = semantic_fuse(tape.constant(g), tape.constant(u)).value();
    for (Index d = 0; d < 5; ++d) EXPECT_EQ(pick[d], g.at({j, d}));
  }
}

TEST(SemanticFuse, MatchesLoop) {
  Rng rng(11);
  Tensor g = random_normal({3, 9}, 1, rng);
  Tensor u = random_uniform({3}, 0, 1, rng);
  u.values() /= u.values().sum();
  Tape tape(false);
  Tensor fused = semantic_fuse(tape.constant(g), tape.constant(u)).value();
  for (Index d = 0; d < 9; ++d) {
    double acc = 0.0;
    for (Index j = 0; j < 3; ++j) acc += u[j] * g.at({j, d});
    EXPECT_NEAR(fused[d], acc, 1e-14);
  }
}

TEST(SemanticFuse, LengthMismatch) {
  Tape tape(false);
  EXPECT_THROW(semantic_fuse(tape.constant(Tensor({3, 4})), tape.constant(Tensor({2}))), std::invalid_argument);
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  cfg.fusion.branch_stages = {2, 2};
  EXPECT_THROW(FusionModel{cfg}, std::invalid_argument);
  cfg.fusion.branch_stages = {5};
  EXPECT_THROW(FusionModel{cfg}, std::invalid_argument);
  cfg.fusion.branch_stages = {};
  EXPECT_THROW(FusionModel{cfg}, std::invalid_argument);
}

TEST(Pipeline, SingleFrameSingleBranchIsPlainEncoding) {
  ModelConfig cfg;
  cfg.fusion.branch_stages = {4};
  FusionModel model(cfg);
  ParameterStore p = trained_like(model, 12);
  Tape tape(false);
  Var frames = tape.constant(random_frames(1, 13));
  PipelineOutput out = model.forward_pipeline(tape, p, frames);
  StageFeatureMap m = model.backbone().encode_to_stage(tape, p, frames, 4);
  Tensor expect = model.backbone().continue_from_stage(tape, p, reshape(m.maps, Shape{64, 2, 1}), 4).value();
  EXPECT_EQ(out.g_fused.value(), expect);
  EXPECT_EQ(out.semantic_weights.value(), Tensor({1}, {1.0}));
}

TEST(Pipeline, UniformWeightsReduceToMsAverage) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = trained_like(model, 14);
  Tape tape(false);
  Var frames = tape.constant(random_frames(5, 15));
  PipelineOutput forced = model.forward_pipeline(tape, p, frames, {true, true});
  PipelineOutput baseline = model.ablation_forward(tape, p, frames, Variant::parse("ms_average/avg_pool"));
  EXPECT_EQ(forced.g_fused.value(), baseline.g_fused.value());
  PipelineOutput full = model.forward_pipeline(tape, p, frames);
  EXPECT_NE(full.g_fused.value(), baseline.g_fused.value());
}

TEST(Pipeline, LateFusionAveragePoolIsMeanOfFinalMaps) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = trained_like(model, 16);
  Tape tape(false);
  Var frames = tape.constant(random_frames(4, 17));
  Tensor g = model.ablation_forward(tape, p, frames, Variant::parse("late_fusion/avg_pool")).g_fused.value();
  StageFeatureMap m = model.backbone().encode_to_stage(tape, p, frames, 4);
  Tensor avg({64, 2, 1});
  for (Index l = 0; l < 4; ++l) {
    for (Index k = 0; k < 128; ++k) avg[k] += 0.25 * m.maps.value()[l * 128 + k];
  }
  Tensor expect = model.backbone().continue_from_stage(tape, p, tape.constant(avg), 4).value();
  for (Index d = 0; d < 768; ++d) EXPECT_NEAR(g[d], expect[d], 1e-12);
}

TEST(Pipeline, SingleBranchSemanticAttentionIsLateFusion) {
  ModelConfig cfg;
  cfg.fusion.branch_stages = {4};
  FusionModel model(cfg);
  ParameterStore p = trained_like(model, 18);
  Tape tape(false);
  Var frames = tape.constant(random_frames(4, 19));
  Tensor a = model.ablation_forward(tape, p, frames, Variant::parse("ms_semantic_attention/intra_inter_rn")).g_fused.value();
  Tensor b = model.ablation_forward(tape, p, frames, Variant::parse("late_fusion/intra_inter_rn")).g_fused.value();
  EXPECT_EQ(a, b);
}

TEST(Pipeline, EveryVariantEmitsEmbedding) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = trained_like(model, 20);
  for (Index length : {1, 3}) {
    Tape tape(false);
    Var frames = tape.constant(random_frames(length, 21));
    for (int f = 0; f < 5; ++f) {
      for (int a = 0; a < 6; ++a) {
        Variant v{static_cast<FusionKind>(f), static_cast<AttentionKind>(a)};
        PipelineOutput out = model.ablation_forward(tape, p, frames, v);
        EXPECT_EQ(out.g_fused.shape(), (Shape{768})) << v.name();
        EXPECT_TRUE(out.g_fused.value().all_finite()) << v.name();
        EXPECT_NEAR(out.semantic_weights.value().values().sum(), 1.0, 1e-9) << v.name();
        EXPECT_EQ(out.branch_features.dim(0), static_cast<Index>(out.stages.size()));
      }
    }
  }
}

TEST(Pipeline, EarlyAndLateUseConfiguredStages) {
  FusionModel model{ModelConfig{}};
  EXPECT_EQ(model.branch_stages(FusionKind::kEarlyFusion), std::vector<int>{2});
  EXPECT_EQ(model.branch_stages(FusionKind::kLateFusion), std::vector<int>{4});
  EXPECT_EQ(model.branch_stages(FusionKind::kMsSemanticAttention), (std::vector<int>{1, 2, 3, 4}));
}

TEST(Pipeline, Deterministic) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = trained_like(model, 22);
  Tensor frames = random_frames(6, 23);
  Tape t1(false), t2(false);
  EXPECT_EQ(model.forward_pipeline(t1, p, t1.constant(frames)).g_fused.value(),
            model.forward_pipeline(t2, p, t2.constant(frames)).g_fused.value());
}

TEST(Pipeline, EmptyTrackletRejected) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = model.initial_parameters(24);
  Tape tape(false);
  EXPECT_THROW(model.forward_pipeline(tape, p, tape.constant(Tensor({0, 3, 32, 16}))), std::invalid_argument);
}

TEST(FusionModel, ZeroClassifierAndEmbeddingWidth) {
  FusionModel model{ModelConfig{}};
  ParameterStore p = model.initial_parameters(25);
  EXPECT_EQ(p.get("semantic.weight").values().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.get(FusionModel::id_head_weight()).shape(), (Shape{768, 16}));
  Tape tape(false);
  PipelineOutput out = model.forward_pipeline(tape, p, tape.constant(random_frames(3, 26)));
  EXPECT_EQ(out.semantic_weights.value(), Tensor::constant({4}, 0.25));
}

}  // namespace
}  // namespace tfuse
