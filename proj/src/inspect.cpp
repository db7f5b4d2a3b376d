#include "tfuse/inspect.hpp"

#include <json.hpp>

namespace tfuse {
namespace {

using nlohmann::json;

json values(const Tensor& t) { return std::vector<double>(t.data(), t.data() + t.size()); }

json optional_values(const std::optional<Tensor>& t) { return t ? values(*t) : json(nullptr); }

json matrix(const Tensor& t) {
  json rows = json::array();
  for (Index i = 0; i < t.dim(0); ++i) rows.push_back(std::vector<double>(t.data() + i * t.dim(1), t.data() + (i + 1) * t.dim(1)));
  return rows;
}

}  // namespace

PipelineOutput inspect_tracklet(const FusionModel& model, const ParameterStore& params, const TrackletRecord& tracklet,
                                const Variant& variant) {
  Tape tape(false);
  return model.ablation_forward(tape, params, tape.constant(model.preprocess(tracklet.frames)), variant);
}

std::string attention_record(const TrackletRecord& tracklet, const Variant& variant, const PipelineOutput& out) {
  json flags = json::array();
  for (const FrameFlags& f : tracklet.flags) {
    flags.push_back({{"duplicate", f.duplicate}, {"occluded", f.occluded}, {"distinct_view", f.distinct_view}});
  }
  json branches = json::array();
  for (const AttentionWeights& a : out.attention) {
    branches.push_back({{"stage", a.stage},
                        {"w", optional_values(a.w)},
                        {"v", optional_values(a.v)},
                        {"a", optional_values(a.a)},
                        {"a_hat", values(a.normalized)},
                        {"relation", a.relation ? matrix(*a.relation) : json(nullptr)}});
  }
  json record{{"tracklet", tracklet.id},
              {"identity", tracklet.identity},
              {"camera", tracklet.camera},
              {"variant", variant.name()},
              {"frames", tracklet.length()},
              {"flags", flags},
              {"branches", branches},
              {"u", values(out.semantic_weights.value())}};
  return record.dump();
}

}  // namespace tfuse
