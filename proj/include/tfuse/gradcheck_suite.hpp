#pragma once

#include "tfuse/gradcheck.hpp"
#include "tfuse/semantic_fusion.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace tfuse {

struct GradCheckSuiteOptions {
  /// Frames in the tracklet pushed through the full pipeline.
  Index pipeline_frames = 3;
  /// Coordinates sampled per parameter tensor of the pipeline check.
  Index pipeline_samples = 4;
  /// Step of the five-point stencil used for the pipeline. The deep forward
  /// pass accumulates roundoff that a 1e-5 three-point step amplifies.
  double pipeline_epsilon = 1e-3;
  std::uint64_t seed = 1;
};

/// Finite-difference checks of every differentiable op, each attention and
/// fusion module, the training losses, and the parameters of the configured
/// model's full pipeline. `progress` sees each report as it completes.
std::vector<GradCheckReport> run_gradcheck_suite(const ModelConfig& model, const GradCheckSuiteOptions& options,
                                                 const std::function<void(const GradCheckReport&)>& progress = {});

double max_relative_error(const std::vector<GradCheckReport>& reports);

}  // namespace tfuse
