#include "tfuse/temporal_attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tfuse {
namespace {

constexpr std::string_view kAttentionNames[] = {"avg_pool",        "intra",           "inter_euclid",
                                                "inter_rn",        "intra_inter_euclid", "intra_inter_rn"};

void require_frames(const Var& features, Index min_frames, std::string_view op) {
  if (features.value().rank() != 2) throw std::invalid_argument(std::string(op) + ": features must be [L x d_f]");
  if (features.dim(0) < min_frames) {
    throw std::invalid_argument(std::string(op) + ": needs at least " + std::to_string(min_frames) + " frames, got " +
                                std::to_string(features.dim(0)));
  }
}

std::string branch_prefix(int branch) { return "branch" + std::to_string(branch); }

}  // namespace

std::string_view to_string(AttentionKind kind) { return kAttentionNames[static_cast<int>(kind)]; }

AttentionKind parse_attention_kind(std::string_view name) {
  for (int i = 0; i < 6; ++i) {
    if (kAttentionNames[i] == name) return static_cast<AttentionKind>(i);
  }
  throw std::invalid_argument("unknown attention kind '" + std::string(name) + "'");
}

bool uses_intra(AttentionKind kind) {
  return kind == AttentionKind::kIntra || kind == AttentionKind::kIntraInterEuclid ||
         kind == AttentionKind::kIntraInterRn;
}

bool uses_relation_network(AttentionKind kind) {
  return kind == AttentionKind::kInterRn || kind == AttentionKind::kIntraInterRn;
}

bool uses_euclidean(AttentionKind kind) {
  return kind == AttentionKind::kInterEuclid || kind == AttentionKind::kIntraInterEuclid;
}

IntraAttentionHead IntraAttentionHead::for_branch(int branch) {
  const std::string p = branch_prefix(branch) + ".intra.";
  return {p + "weight", p + "bias"};
}

RelationNetwork RelationNetwork::for_branch(int branch) {
  const std::string p = branch_prefix(branch) + ".relation.";
  return {p + "hidden.weight", p + "hidden.bias", p + "out.weight", p + "out.bias", p + "theta"};
}

void init_attention_parameters(ParameterStore& params, int branch, Index feature_dim, const AttentionConfig& config,
                               Rng& rng) {
  const IntraAttentionHead head = IntraAttentionHead::for_branch(branch);
  params.add(head.weight, random_normal({feature_dim, 1}, 0.01, rng));
  params.add(head.bias, Tensor({1}));

  const RelationNetwork rn = RelationNetwork::for_branch(branch);
  const Index hidden = config.relation_hidden;
  const Index out = config.relation_dim;
  Tensor half = random_normal({feature_dim, hidden}, std::sqrt(2.0 / static_cast<double>(feature_dim)), rng);
  Tensor first({2 * feature_dim, hidden});
  first.matrix(2 * feature_dim).topRows(feature_dim) = half.matrix();
  first.matrix(2 * feature_dim).bottomRows(feature_dim) = -half.matrix();
  params.add(rn.hidden_weight, std::move(first));
  params.add(rn.hidden_bias, Tensor({hidden}));
  Tensor second = random_uniform({hidden, out}, 0.0, 2.0 / static_cast<double>(hidden), rng);
  params.add(rn.out_weight, std::move(second));
  params.add(rn.out_bias, Tensor({out}));
  params.add(rn.theta, random_uniform({out, 1}, 0.0, 2.0 / static_cast<double>(out), rng));
}

Var intra_attention(Tape& tape, const ParameterStore& params, const IntraAttentionHead& head, const Var& features) {
  require_frames(features, 1, "intra_attention");
  const Index frames = features.dim(0);
  Var logits = linear(features, params.on(tape, head.weight), params.on(tape, head.bias));
  return reshape(sigmoid(logits), Shape{frames});
}

Var inter_attention_euclidean(const Var& features) {
  require_frames(features, 2, "inter_attention_euclidean");
  const Index frames = features.dim(0);
  Var d = pairwise_distances(features);
  // Summing each row in sorted order makes v independent of frame order bit for bit.
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(frames * frames));
  const Tensor& dv = d.value();
  for (Index i = 0; i < frames; ++i) {
    std::vector<Index> row(static_cast<std::size_t>(frames));
    std::iota(row.begin(), row.end(), i * frames);
    std::stable_sort(row.begin(), row.end(), [&](Index a, Index b) { return dv[a] < dv[b]; });
    order.insert(order.end(), row.begin(), row.end());
  }
  Var sorted = reshape(gather_rows(reshape(d, Shape{frames * frames, 1}), std::move(order)), Shape{frames, frames});
  return mean(sorted, 1);
}

Var relation_embed(Tape& tape, const ParameterStore& params, const RelationNetwork& rn, const Var& features) {
  require_frames(features, 2, "relation_embed");
  const Index frames = features.dim(0);
  std::vector<Index> first, second, swapped;
  for (Index i = 0; i < frames; ++i) {
    for (Index j = 0; j < frames; ++j) {
      first.push_back(i);
      second.push_back(j);
      swapped.push_back(j * frames + i);
    }
  }
  Var pairs = concat(gather_rows(features, std::move(first)), gather_rows(features, std::move(second)), 1);
  Var hidden = relu(linear(pairs, params.on(tape, rn.hidden_weight), params.on(tape, rn.hidden_bias)));
  Var directed = linear(hidden, params.on(tape, rn.out_weight), params.on(tape, rn.out_bias));
  Var both = add(directed, gather_rows(directed, std::move(swapped)));
  return reshape(both, Shape{frames, frames, both.dim(1)});
}

RelationAttention inter_attention_rn(Tape& tape, const ParameterStore& params, const RelationNetwork& rn,
                                     const Var& features) {
  const Var r = relation_embed(tape, params, rn, features);
  const Index frames = r.dim(0);
  const Index rel_dim = r.dim(2);
  Var scores = matmul(reshape(r, Shape{frames * frames, rel_dim}), params.on(tape, rn.theta));
  Var matrix = relu(reshape(scores, Shape{frames, frames}));
  Tensor off_diagonal = Tensor::ones({frames, frames});
  for (Index i = 0; i < frames; ++i) off_diagonal[i * frames + i] = 0.0;
  Var v = scale(sum(mul(matrix, tape.constant(std::move(off_diagonal))), 1), 1.0 / static_cast<double>(frames - 1));
  return {v, matrix};
}

Var combine_attention(const Var& w, const Var& v) {
  if (w.shape() != v.shape()) {
    throw std::invalid_argument("combine_and_normalize: length mismatch " + shape_string(w.shape()) + " vs " +
                                shape_string(v.shape()));
  }
  return scale(add(w, v), 0.5);
}

Var combine_and_normalize(const Var& w, const Var& v) { return normalize_sum(combine_attention(w, v)); }

Var temporal_fuse(const StageFeatureMap& maps, const Var& weights) {
  const Shape& s = maps.maps.shape();
  if (s.size() != 4) throw std::invalid_argument("temporal_fuse: maps must be LxCxHxW");
  if (weights.value().rank() != 1 || weights.dim(0) != s[0]) {
    throw std::invalid_argument("temporal_fuse: " + std::to_string(weights.value().size()) + " weights for " +
                                std::to_string(s[0]) + " frames");
  }
  Var flat = reshape(maps.maps, Shape{s[0], s[1] * s[2] * s[3]});
  Var fused = matmul(reshape(weights, Shape{1, s[0]}), flat);
  return reshape(fused, Shape{s[1], s[2], s[3]});
}

FrameAttention frame_attention(Tape& tape, const ParameterStore& params, AttentionKind kind, int branch,
                               const Var& features) {
  require_frames(features, 1, "frame_attention");
  const Index frames = features.dim(0);
  FrameAttention out;
  out.values.stage = branch;
  if (kind == AttentionKind::kAvgPool || frames == 1) {
    out.normalized = tape.constant(Tensor::constant({frames}, 1.0 / static_cast<double>(frames)));
    out.values.normalized = out.normalized.value();
    return out;
  }

  std::optional<Var> w, v;
  if (uses_intra(kind)) w = intra_attention(tape, params, IntraAttentionHead::for_branch(branch), features);
  if (uses_euclidean(kind)) v = inter_attention_euclidean(features);
  if (uses_relation_network(kind)) {
    RelationAttention rel = inter_attention_rn(tape, params, RelationNetwork::for_branch(branch), features);
    v = rel.v;
    out.values.relation = rel.matrix.value();
  }

  if (w && v) {
    Var a = combine_attention(*w, *v);
    out.normalized = normalize_sum(a);
    out.values.a = a.value();
  } else {
    const Var& only = w ? *w : *v;
    out.normalized = normalize_sum(only);
    out.values.a = only.value();
  }
  if (w) out.values.w = w->value();
  if (v) out.values.v = v->value();
  out.values.normalized = out.normalized.value();
  return out;
}

}  // namespace tfuse
