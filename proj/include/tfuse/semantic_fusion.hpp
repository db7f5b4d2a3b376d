#pragma once

#include "tfuse/backbone.hpp"
#include "tfuse/temporal_attention.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace tfuse {

enum class FusionKind {
  kFeatureAverage,
  kEarlyFusion,
  kLateFusion,
  kMsAverage,
  kMsSemanticAttention,
};

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view name);

/// One restricted pipeline: where frames are fused and how they are weighted.
struct Variant {
  FusionKind fusion = FusionKind::kMsSemanticAttention;
  AttentionKind attention = AttentionKind::kIntraInterRn;

  /// "<fusion>/<attention>", e.g. "late_fusion/intra_inter_rn".
  std::string name() const;
  /// Accepts "<fusion>/<attention>" or a bare fusion name (attention defaults to avg_pool).
  static Variant parse(std::string_view text);

  friend bool operator==(const Variant&, const Variant&) = default;
};

struct FusionConfig {
  /// Stages that get a fusion branch in the multi-stage variants.
  std::vector<int> branch_stages{1, 2, 3, 4};
  int early_stage = 2;
  Variant variant{};
};

struct ModelConfig {
  BackboneConfig backbone;
  AttentionConfig attention;
  FusionConfig fusion;
  /// Classes of the identity head used by the training loss.
  int num_identities = 16;
  /// Frames enter the backbone as (x − input_mean) / input_std.
  double input_mean = 0.5;
  double input_std = 0.25;

  void validate() const;
};

/// Softmax classifier B: linear d_g → K followed by softmax.
struct SemanticClassifier {
  std::string weight = "semantic.weight";  // [d_g×K]
  std::string bias = "semantic.bias";      // [K]
};

/// u_j = (1/K) Σ_i softmax(B(g_i))_j for branch features g [K×d_g] → [K].
Var semantic_attention(Tape& tape, const ParameterStore& params, const SemanticClassifier& cls, const Var& branches);
/// Σ_j u_j g_j → [d_g].
Var semantic_fuse(const Var& branches, const Var& weights);

struct ForwardOptions {
  /// Replace every frame attention with 1/L.
  bool uniform_frame_weights = false;
  /// Replace the semantic weights with 1/K.
  bool uniform_semantic_weights = false;
};

struct PipelineOutput {
  Var g_fused;                              // [d_g]
  Var branch_features;                      // [K×d_g]
  Var semantic_weights;                     // [K]
  std::vector<int> stages;                  // stage of each branch
  std::vector<AttentionWeights> attention;  // one per branch
};

class FusionModel {
 public:
  explicit FusionModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }

  static std::string id_head_weight() { return "id_head.weight"; }
  static std::string id_head_bias() { return "id_head.bias"; }

  /// Maps raw [0, 1] frames to backbone input.
  Tensor preprocess(Tensor frames) const;

  /// Backbone, per-branch attention heads, semantic classifier and identity head.
  void init_parameters(ParameterStore& params, Rng& rng) const;
  ParameterStore initial_parameters(std::uint64_t seed) const;

  /// Stages that carry a branch under the given fusion kind.
  std::vector<int> branch_stages(FusionKind fusion) const;

  /// Full multi-stage fusion with intra/inter frame attention and semantic
  /// attention, i.e. the configured default variant.
  PipelineOutput forward_pipeline(Tape& tape, const ParameterStore& params, const Var& frames,
                                  const ForwardOptions& options = {}) const;
  /// Restricted pipeline for one ablation variant; frames are [L×C×H×W].
  PipelineOutput ablation_forward(Tape& tape, const ParameterStore& params, const Var& frames, const Variant& variant,
                                  const ForwardOptions& options = {}) const;

  /// Per-frame embeddings through the full stack and the last branch's
  /// projection, [L×d_g]. Used by frame-level warm-up and feature averaging.
  Var frame_embeddings(Tape& tape, const ParameterStore& params, const Var& frames) const;

  /// Identity logits for a batch of embeddings [B×d_g].
  Var identity_logits(Tape& tape, const ParameterStore& params, const Var& embeddings) const;

 private:
  ModelConfig config_;
  Backbone backbone_;
};

}  // namespace tfuse
