#pragma once

#include "tfuse/data.hpp"
#include "tfuse/semantic_fusion.hpp"

#include <string>

namespace tfuse {

/// Runs a variant over every frame of the tracklet, without gradients.
PipelineOutput inspect_tracklet(const FusionModel& model, const ParameterStore& params, const TrackletRecord& tracklet,
                                const Variant& variant);

/// One JSON object (no trailing newline): tracklet id, identity, camera,
/// per-frame flags, and for each branch its stage with w, v, a, â and the
/// relation matrix where the attention kind defines them, then u.
std::string attention_record(const TrackletRecord& tracklet, const Variant& variant, const PipelineOutput& out);

}  // namespace tfuse
