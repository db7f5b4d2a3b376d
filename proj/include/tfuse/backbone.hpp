#pragma once

#include "tfuse/ops.hpp"
#include "tfuse/parameters.hpp"

#include <string>
#include <vector>

namespace tfuse {

struct BackboneConfig {
  int num_stages = 4;
  std::vector<Index> channels{8, 16, 32, 64};
  /// Frame shape C×H×W.
  Shape input{3, 32, 16};
  Index embed_dim = 768;

  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  /// Shape C_s×H_s×W_s emitted by stage s (stage 0 is the input frame).
  Shape stage_shape(int stage) const;
  Index stage_channels(int stage) const { return stage_shape(stage)[0]; }
};

/// Per-frame maps tapped after a stage, [L×C_s×H_s×W_s].
struct StageFeatureMap {
  int stage = 0;
  Var maps;
};

/// Stack of S stages (conv3×3 → relu → conv3×3 → relu → 2×2 average pool)
/// followed by global average pooling and one linear projection per fusion
/// branch. Branch s re-enters the stack after stage s, so all branches share
/// the suffix stages with per-frame encoding.
class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  int num_stages() const { return config_.num_stages; }

  static std::string kernel_path(int stage, int conv);
  static std::string bias_path(int stage, int conv);
  static std::string projection_weight_path(int branch);
  static std::string projection_bias_path(int branch);
  /// Parameter paths touched when running stages [from+1, to].
  std::vector<std::string> stage_parameter_paths(int from, int to) const;

  /// He-normal kernels, zero biases, one projection per branch 1..S.
  void init_parameters(ParameterStore& params, Rng& rng) const;

  /// Runs one stage on [N×C×H×W] maps.
  Var apply_stage(Tape& tape, const ParameterStore& params, const Var& x, int stage) const;
  /// Applies stages 1..stage to every frame of [L×C×H×W] input independently.
  StageFeatureMap encode_to_stage(Tape& tape, const ParameterStore& params, const Var& frames, int stage) const;
  /// Taps after every stage 1..up_to, computed in one pass.
  std::vector<StageFeatureMap> encode_all(Tape& tape, const ParameterStore& params, const Var& frames,
                                          int up_to) const;

  /// Stages s+1..S on a fused [C_s×H_s×W_s] map, then global average pool → [C_S].
  Var suffix_pooled(Tape& tape, const ParameterStore& params, const Var& fused_map, int stage) const;
  /// Linear projection of a pooled [C_S] vector with the branch's own weights → [d_g].
  Var project(Tape& tape, const ParameterStore& params, const Var& pooled, int branch) const;
  /// suffix_pooled followed by the projection of branch `stage`.
  Var continue_from_stage(Tape& tape, const ParameterStore& params, const Var& fused_map, int stage) const;

  /// Per-frame global average over the spatial axes: [L×C×H×W] → [L×C].
  static Var pool_frame_features(const Var& maps);

 private:
  void check_stage(int stage, int lo) const;

  BackboneConfig config_;
};

}  // namespace tfuse
