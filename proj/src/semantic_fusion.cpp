#include "tfuse/semantic_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tfuse {
namespace {

constexpr std::string_view kFusionNames[] = {"feature_average", "early_fusion", "late_fusion", "ms_average",
                                             "ms_semantic_attention"};

}  // namespace

std::string_view to_string(FusionKind kind) { return kFusionNames[static_cast<int>(kind)]; }

FusionKind parse_fusion_kind(std::string_view name) {
  for (int i = 0; i < 5; ++i) {
    if (kFusionNames[i] == name) return static_cast<FusionKind>(i);
  }
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "'");
}

std::string Variant::name() const { return std::string(to_string(fusion)) + "/" + std::string(to_string(attention)); }

Variant Variant::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return {parse_fusion_kind(text), AttentionKind::kAvgPool};
  return {parse_fusion_kind(text.substr(0, slash)), parse_attention_kind(text.substr(slash + 1))};
}

void ModelConfig::validate() const {
  backbone.validate();
  if (attention.relation_dim <= 0 || attention.relation_hidden <= 0) {
    throw std::invalid_argument("attention: relation sizes must be positive");
  }
  if (fusion.branch_stages.empty()) throw std::invalid_argument("fusion: branch_stages must not be empty");
  std::vector<int> sorted = fusion.branch_stages;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("fusion: duplicate branch stage");
  }
  for (int s : sorted) {
    if (s < 1 || s > backbone.num_stages) throw std::invalid_argument("fusion: branch stage out of range");
  }
  if (fusion.early_stage < 1 || fusion.early_stage > backbone.num_stages) {
    throw std::invalid_argument("fusion: early_stage out of range");
  }
  if (num_identities < 1) throw std::invalid_argument("model: num_identities must be >= 1");
  if (!(input_std > 0.0)) throw std::invalid_argument("model: input_std must be positive");
}

Var semantic_attention(Tape& tape, const ParameterStore& params, const SemanticClassifier& cls, const Var& branches) {
  if (branches.value().rank() != 2 || branches.dim(0) < 1) {
    throw std::invalid_argument("semantic_attention: branch features must be [K x d_g] with K >= 1");
  }
  const Tensor& w = params.get(cls.weight);
  if (w.rank() != 2 || w.dim(0) != branches.dim(1) || w.dim(1) != branches.dim(0)) {
    throw std::invalid_argument("semantic_attention: classifier " + shape_string(w.shape()) +
                                " does not fit branch features " + shape_string(branches.shape()));
  }
  Var probs = softmax(linear(branches, params.on(tape, cls.weight), params.on(tape, cls.bias)), 1);
  return mean(probs, 0);
}

Var semantic_fuse(const Var& branches, const Var& weights) {
  if (branches.value().rank() != 2 || weights.value().rank() != 1 || weights.dim(0) != branches.dim(0)) {
    throw std::invalid_argument("semantic_fuse: " + std::to_string(weights.value().size()) + " weights for " +
                                shape_string(branches.shape()) + " branch features");
  }
  Var fused = matmul(reshape(weights, Shape{1, weights.dim(0)}), branches);
  return reshape(fused, Shape{branches.dim(1)});
}

FusionModel::FusionModel(ModelConfig config) : config_(std::move(config)), backbone_(config_.backbone) {
  config_.validate();
}

Tensor FusionModel::preprocess(Tensor frames) const {
  frames.values().array() = (frames.values().array() - config_.input_mean) / config_.input_std;
  return frames;
}

void FusionModel::init_parameters(ParameterStore& params, Rng& rng) const {
  backbone_.init_parameters(params, rng);
  for (int s = 1; s <= backbone_.num_stages(); ++s) {
    init_attention_parameters(params, s, config_.backbone.stage_channels(s), config_.attention, rng);
  }
  const Index dg = config_.backbone.embed_dim;
  const auto k = static_cast<Index>(config_.fusion.branch_stages.size());
  SemanticClassifier cls;
  params.add(cls.weight, Tensor({dg, k}));
  params.add(cls.bias, Tensor({k}));
  params.add(id_head_weight(), random_normal({dg, config_.num_identities}, 1.0 / std::sqrt(static_cast<double>(dg)), rng));
  params.add(id_head_bias(), Tensor({config_.num_identities}));
}

ParameterStore FusionModel::initial_parameters(std::uint64_t seed) const {
  ParameterStore params;
  Rng rng(seed);
  init_parameters(params, rng);
  return params;
}

std::vector<int> FusionModel::branch_stages(FusionKind fusion) const {
  switch (fusion) {
    case FusionKind::kFeatureAverage:
    case FusionKind::kLateFusion:
      return {backbone_.num_stages()};
    case FusionKind::kEarlyFusion:
      return {config_.fusion.early_stage};
    case FusionKind::kMsAverage:
    case FusionKind::kMsSemanticAttention:
      return config_.fusion.branch_stages;
  }
  throw std::logic_error("unhandled fusion kind");
}

PipelineOutput FusionModel::forward_pipeline(Tape& tape, const ParameterStore& params, const Var& frames,
                                             const ForwardOptions& options) const {
  return ablation_forward(tape, params, frames, config_.fusion.variant, options);
}

PipelineOutput FusionModel::ablation_forward(Tape& tape, const ParameterStore& params, const Var& frames,
                                             const Variant& variant, const ForwardOptions& options) const {
  if (frames.value().rank() != 4 || frames.dim(0) < 1) {
    throw std::invalid_argument("forward: tracklet must be a non-empty LxCxHxW tensor");
  }
  const Index length = frames.dim(0);
  PipelineOutput out;

  if (variant.fusion == FusionKind::kFeatureAverage) {
    out.stages = {backbone_.num_stages()};
    out.g_fused = mean(frame_embeddings(tape, params, frames), 0);
    out.branch_features = reshape(out.g_fused, Shape{1, config_.backbone.embed_dim});
    out.semantic_weights = tape.constant(Tensor({1}, {1.0}));
    AttentionWeights uniform;
    uniform.stage = backbone_.num_stages();
    uniform.normalized = Tensor::constant({length}, 1.0 / static_cast<double>(length));
    out.attention.push_back(std::move(uniform));
    return out;
  }

  out.stages = branch_stages(variant.fusion);
  const int deepest = *std::max_element(out.stages.begin(), out.stages.end());
  const std::vector<StageFeatureMap> taps = backbone_.encode_all(tape, params, frames, deepest);

  std::vector<Var> rows;
  for (int stage : out.stages) {
    const StageFeatureMap& maps = taps[static_cast<std::size_t>(stage - 1)];
    const AttentionKind kind = options.uniform_frame_weights ? AttentionKind::kAvgPool : variant.attention;
    FrameAttention attn = frame_attention(tape, params, kind, stage, Backbone::pool_frame_features(maps.maps));
    Var fused_map = temporal_fuse(maps, attn.normalized);
    Var g = backbone_.continue_from_stage(tape, params, fused_map, stage);
    rows.push_back(reshape(g, Shape{1, config_.backbone.embed_dim}));
    out.attention.push_back(std::move(attn.values));
  }
  out.branch_features = concat(rows, 0);

  const auto k = static_cast<Index>(rows.size());
  if (variant.fusion == FusionKind::kMsSemanticAttention && !options.uniform_semantic_weights) {
    out.semantic_weights = semantic_attention(tape, params, SemanticClassifier{}, out.branch_features);
  } else {
    out.semantic_weights = tape.constant(Tensor::constant({k}, 1.0 / static_cast<double>(k)));
  }
  out.g_fused = semantic_fuse(out.branch_features, out.semantic_weights);
  return out;
}

Var FusionModel::frame_embeddings(Tape& tape, const ParameterStore& params, const Var& frames) const {
  const int top = backbone_.num_stages();
  const StageFeatureMap maps = backbone_.encode_to_stage(tape, params, frames, top);
  Var pooled = Backbone::pool_frame_features(maps.maps);
  return linear(pooled, params.on(tape, Backbone::projection_weight_path(top)),
                params.on(tape, Backbone::projection_bias_path(top)));
}

Var FusionModel::identity_logits(Tape& tape, const ParameterStore& params, const Var& embeddings) const {
  return linear(embeddings, params.on(tape, id_head_weight()), params.on(tape, id_head_bias()));
}

}  // namespace tfuse
