#include "tfuse/gradcheck_suite.hpp"

#include "tfuse/ops.hpp"
#include "tfuse/training.hpp"

#include <algorithm>
#include <cmath>

namespace tfuse {
namespace {

using Inputs = std::vector<Var>;

class Suite {
 public:
  Suite(std::uint64_t seed, const std::function<void(const GradCheckReport&)>& progress)
      : rng_(seed), seed_(seed), progress_(progress) {}

  Tensor normal(const Shape& s) { return random_normal(s, 1.0, rng_); }
  Tensor uniform(const Shape& s, double lo, double hi) { return random_uniform(s, lo, hi, rng_); }

  void op(const std::string& name, const std::vector<Tensor>& inputs, const OpFn& fn) {
    push(check_op(name, inputs, fn, seed_ + reports_.size()));
  }

  void store(const std::string& name, ParameterStore params, const LossFn& loss, Index samples = 0,
             double epsilon = 1e-5, bool fourth_order = false) {
    GradCheckOptions o;
    o.samples_per_tensor = samples;
    o.epsilon = epsilon;
    o.fourth_order = fourth_order;
    o.seed = seed_ + reports_.size();
    push(check_gradients(name, std::move(params), loss, o));
  }

  std::vector<GradCheckReport> take() { return std::move(reports_); }

 private:
  void push(GradCheckReport r) {
    if (progress_) progress_(r);
    reports_.push_back(std::move(r));
  }

  Rng rng_;
  std::uint64_t seed_;
  const std::function<void(const GradCheckReport&)>& progress_;
  std::vector<GradCheckReport> reports_;
};

// Initial parameters sit on relu kinks by construction (zero biases, the
// [W; -W] relation layer); move every tensor off them before probing.
void jitter(ParameterStore& p, Rng& rng) {
  for (const std::string& path : p.paths()) {
    Tensor& t = p.get_mutable(path);
    const double rms = t.size() ? std::sqrt(t.values().squaredNorm() / static_cast<double>(t.size())) : 0.0;
    t.values() += random_normal(t.shape(), rms > 0.0 ? 0.3 * rms : 0.1, rng).values();
  }
}

void primitive_ops(Suite& s) {
  s.op("matmul", {s.normal({3, 4}), s.normal({4, 2})}, [](Tape&, const Inputs& v) { return matmul(v[0], v[1]); });
  s.op("add_bias", {s.normal({3, 4}), s.normal({4})}, [](Tape&, const Inputs& v) { return add_bias(v[0], v[1]); });
  s.op("linear", {s.normal({3, 4}), s.normal({4, 2}), s.normal({2})},
       [](Tape&, const Inputs& v) { return linear(v[0], v[1], v[2]); });
  s.op("conv2d", {s.normal({2, 2, 5, 4}), s.normal({3, 2, 3, 3}), s.normal({3})},
       [](Tape&, const Inputs& v) { return conv2d(v[0], v[1], v[2]); });
  s.op("conv2d_stride2", {s.normal({2, 5, 6}), s.normal({2, 2, 3, 3})},
       [](Tape&, const Inputs& v) { return conv2d(v[0], v[1], 2, 0); });
  s.op("conv2d_1x1_map", {s.normal({1, 3, 1, 1}), s.normal({2, 3, 3, 3}), s.normal({2})},
       [](Tape&, const Inputs& v) { return conv2d(v[0], v[1], v[2]); });
  s.op("avg_pool2d", {s.normal({2, 3, 4, 6})}, [](Tape&, const Inputs& v) { return avg_pool2d(v[0], 2); });
  s.op("relu", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return relu(v[0]); });
  s.op("sigmoid", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return sigmoid(v[0]); });
  s.op("add", {s.normal({3, 4}), s.normal({3, 4})}, [](Tape&, const Inputs& v) { return add(v[0], v[1]); });
  s.op("sub", {s.normal({3, 4}), s.normal({3, 4})}, [](Tape&, const Inputs& v) { return sub(v[0], v[1]); });
  s.op("mul", {s.normal({3, 4}), s.normal({3, 4})}, [](Tape&, const Inputs& v) { return mul(v[0], v[1]); });
  s.op("scale", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return scale(v[0], -1.7); });
  s.op("offset", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return offset(v[0], 0.3); });
  for (int axis : {0, 1}) {
    const std::string a = std::to_string(axis);
    s.op("sum_axis" + a, {s.normal({3, 4})}, [axis](Tape&, const Inputs& v) { return sum(v[0], axis); });
    s.op("mean_axis" + a, {s.normal({3, 4})}, [axis](Tape&, const Inputs& v) { return mean(v[0], axis); });
    s.op("max_axis" + a, {s.normal({3, 4})}, [axis](Tape&, const Inputs& v) { return max(v[0], axis); });
    s.op("softmax_axis" + a, {s.normal({3, 4})}, [axis](Tape&, const Inputs& v) { return softmax(v[0], axis); });
    s.op("concat_axis" + a, {s.normal({3, 4}), s.normal({3, 4})},
         [axis](Tape&, const Inputs& v) { return concat(v[0], v[1], axis); });
  }
  s.op("sum_all", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return sum(v[0]); });
  s.op("mean_all", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return mean(v[0]); });
  s.op("reshape", {s.normal({3, 4})}, [](Tape&, const Inputs& v) { return reshape(v[0], Shape{2, 6}); });
  s.op("gather_rows", {s.normal({4, 3})}, [](Tape&, const Inputs& v) { return gather_rows(v[0], {2, 0, 2, 3}); });
  s.op("pairwise_distances", {s.normal({4, 3})}, [](Tape&, const Inputs& v) { return pairwise_distances(v[0]); });
  s.op("normalize_sum", {s.uniform({5}, 0.1, 1.0)}, [](Tape&, const Inputs& v) { return normalize_sum(v[0]); });
  const std::vector<int> labels{0, 2, 1, 2};
  s.op("softmax_cross_entropy", {s.normal({4, 3})},
       [labels](Tape&, const Inputs& v) { return softmax_cross_entropy(v[0], labels); });
}

void attention_modules(Suite& s) {
  const Index d = 6, frames = 4;
  AttentionConfig ac;
  ac.relation_dim = 5;
  ac.relation_hidden = 8;
  Rng rng(17);
  ParameterStore p;
  init_attention_parameters(p, 1, d, ac, rng);
  jitter(p, rng);
  p.add("features", s.normal({frames, d}));
  const IntraAttentionHead head = IntraAttentionHead::for_branch(1);
  const RelationNetwork rn = RelationNetwork::for_branch(1);
  Tensor w = s.normal({frames});
  Tensor wr = s.normal({frames, frames, ac.relation_dim});

  s.store("intra_attention", p, [&](Tape& t, const ParameterStore& q) {
    return sum(mul(intra_attention(t, q, head, q.on(t, "features")), t.constant(w)));
  });
  s.op("inter_attention_euclidean", {p.get("features")},
       [](Tape&, const Inputs& v) { return inter_attention_euclidean(v[0]); });
  s.store("relation_embed", p, [&](Tape& t, const ParameterStore& q) {
    return sum(mul(relation_embed(t, q, rn, q.on(t, "features")), t.constant(wr)));
  });
  s.store("inter_attention_rn", p, [&](Tape& t, const ParameterStore& q) {
    return sum(mul(inter_attention_rn(t, q, rn, q.on(t, "features")).v, t.constant(w)));
  });
  s.op("combine_and_normalize", {s.uniform({frames}, 0.1, 1.0), s.uniform({frames}, 0.1, 1.0)},
       [](Tape&, const Inputs& v) { return combine_and_normalize(v[0], v[1]); });
  s.op("temporal_fuse", {s.normal({frames, 2, 3, 2}), s.uniform({frames}, 0.0, 1.0)},
       [](Tape&, const Inputs& v) { return temporal_fuse({1, v[0]}, v[1]); });
  for (AttentionKind kind : {AttentionKind::kIntra, AttentionKind::kInterEuclid, AttentionKind::kInterRn,
                             AttentionKind::kIntraInterEuclid, AttentionKind::kIntraInterRn}) {
    s.store("frame_attention/" + std::string(to_string(kind)), p, [&, kind](Tape& t, const ParameterStore& q) {
      return sum(mul(frame_attention(t, q, kind, 1, q.on(t, "features")).normalized, t.constant(w)));
    });
  }

  const Index k = 3, dg = 5;
  ParameterStore sp;
  const SemanticClassifier cls;
  sp.add(cls.weight, s.normal({dg, k}));
  sp.add(cls.bias, s.normal({k}));
  sp.add("branches", s.normal({k, dg}));
  Tensor wk = s.normal({k});
  s.store("semantic_attention", sp, [&](Tape& t, const ParameterStore& q) {
    return sum(mul(semantic_attention(t, q, cls, q.on(t, "branches")), t.constant(wk)));
  });
  s.op("semantic_fuse", {s.normal({k, dg}), s.uniform({k}, 0.0, 1.0)},
       [](Tape&, const Inputs& v) { return semantic_fuse(v[0], v[1]); });
}

void losses(Suite& s, const ModelConfig& model_config) {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  s.op("batch_hard_triplet", {s.normal({6, 4})},
       [labels](Tape&, const Inputs& v) { return batch_hard_triplet(v[0], labels, 0.3); });

  ModelConfig mc = model_config;
  mc.num_identities = 3;
  const FusionModel model(mc);
  ParameterStore p;
  const Index dg = mc.backbone.embed_dim;
  Tensor head = s.normal({dg, 3});
  head.values() *= 0.1;
  p.add(FusionModel::id_head_weight(), std::move(head));
  p.add(FusionModel::id_head_bias(), s.normal({3}));
  p.add("embeddings", s.normal({6, dg}));
  TrainConfig cfg;
  s.store(
      "reid_loss",
      p,
      [&](Tape& t, const ParameterStore& q) { return reid_loss(t, q, model, q.on(t, "embeddings"), labels, cfg).total; },
      24);
}

void pipeline(Suite& s, const ModelConfig& model_config, const GradCheckSuiteOptions& o) {
  ModelConfig mc = model_config;
  mc.num_identities = 2;
  const FusionModel model(mc);
  ParameterStore p = model.initial_parameters(o.seed);
  Rng rng(o.seed);
  jitter(p, rng);
  Shape fs{o.pipeline_frames};
  for (Index d : mc.backbone.input) fs.push_back(d);
  const Tensor frames = model.preprocess(s.uniform(fs, 0.0, 1.0));
  const Tensor w = s.normal({mc.backbone.embed_dim});
  s.store(
      "forward_pipeline/" + mc.fusion.variant.name(),
      p,
      [&](Tape& t, const ParameterStore& q) {
        return sum(mul(model.forward_pipeline(t, q, t.constant(frames)).g_fused, t.constant(w)));
      },
      o.pipeline_samples, o.pipeline_epsilon, true);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const ModelConfig& model, const GradCheckSuiteOptions& options,
                                                 const std::function<void(const GradCheckReport&)>& progress) {
  model.validate();
  Suite s(options.seed, progress);
  primitive_ops(s);
  attention_modules(s);
  losses(s, model);
  pipeline(s, model, options);
  return s.take();
}

double max_relative_error(const std::vector<GradCheckReport>& reports) {
  double worst = 0.0;
  for (const GradCheckReport& r : reports) worst = std::max(worst, r.max_rel_error);
  return worst;
}

}  // namespace tfuse
