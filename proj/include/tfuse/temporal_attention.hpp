#pragma once

#include "tfuse/backbone.hpp"
#include "tfuse/ops.hpp"
#include "tfuse/parameters.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace tfuse {

enum class AttentionKind {
  kAvgPool,
  kIntra,
  kInterEuclid,
  kInterRn,
  kIntraInterEuclid,
  kIntraInterRn,
};

std::string_view to_string(AttentionKind kind);
AttentionKind parse_attention_kind(std::string_view name);
bool uses_intra(AttentionKind kind);
bool uses_relation_network(AttentionKind kind);
bool uses_euclidean(AttentionKind kind);

struct AttentionConfig {
  Index relation_dim = 32;
  Index relation_hidden = 64;
};

/// Importance regressor: linear d_f → 1 followed by a sigmoid.
struct IntraAttentionHead {
  std::string weight;  // [d_f×1]
  std::string bias;    // [1]

  static IntraAttentionHead for_branch(int branch);
};

/// MLP P: 2·d_f → hidden → d_r applied to every ordered frame pair, plus the
/// 1×1 relation head θ: d_r → 1.
struct RelationNetwork {
  std::string hidden_weight;  // [2·d_f × hidden]
  std::string hidden_bias;    // [hidden]
  std::string out_weight;     // [hidden × d_r]
  std::string out_bias;       // [d_r]
  std::string theta;          // [d_r × 1]

  static RelationNetwork for_branch(int branch);
};

/// Adds the intra head and relation network of one branch.
///
/// The relation MLP starts as a difference detector: its first layer is
/// [W; −W] and the later weights are non-negative, so θ·r_{i,j} begins as a
/// weighted L1 distance between projected frame features.
void init_attention_parameters(ParameterStore& params, int branch, Index feature_dim, const AttentionConfig& config,
                               Rng& rng);

/// w_i = sigmoid(A_s(f_i)) for f [L×d_f] → [L].
Var intra_attention(Tape& tape, const ParameterStore& params, const IntraAttentionHead& head, const Var& features);

/// v_i = (1/L) Σ_j ‖f_i − f_j‖₂ → [L]; needs L ≥ 2.
Var inter_attention_euclidean(const Var& features);

/// r_{i,j} = P([f_i, f_j]) + P([f_j, f_i]) → [L×L×d_r]; needs L ≥ 2.
Var relation_embed(Tape& tape, const ParameterStore& params, const RelationNetwork& rn, const Var& features);

struct RelationAttention {
  Var v;       // [L]
  Var matrix;  // [L×L], A_{i,j} = ReLU(θ·r_{i,j})
};

/// v_i = (1/(L−1)) Σ_{j≠i} ReLU(θ·r_{i,j}); needs L ≥ 2.
RelationAttention inter_attention_rn(Tape& tape, const ParameterStore& params, const RelationNetwork& rn,
                                     const Var& features);

/// a = (w + v)/2.
Var combine_attention(const Var& w, const Var& v);
/// â = a / Σa with a = (w + v)/2; a zero sum gives the uniform vector.
Var combine_and_normalize(const Var& w, const Var& v);

/// Σ_i â_i · map_i over [L×C×H×W] maps → [C×H×W].
Var temporal_fuse(const StageFeatureMap& maps, const Var& weights);

/// Values of one branch's frame attention, for inspection.
struct AttentionWeights {
  int stage = 0;
  std::optional<Tensor> w;
  std::optional<Tensor> v;
  std::optional<Tensor> a;
  Tensor normalized;
  std::optional<Tensor> relation;
};

struct FrameAttention {
  Var normalized;  // â, [L]
  AttentionWeights values;
};

/// Per-frame weights for one branch under the given attention kind. L = 1
/// (and kAvgPool) give the uniform vector without touching any head.
FrameAttention frame_attention(Tape& tape, const ParameterStore& params, AttentionKind kind, int branch,
                               const Var& features);

}  // namespace tfuse
