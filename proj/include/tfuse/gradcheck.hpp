#pragma once

#include "tfuse/parameters.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tfuse {

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  Index samples_per_tensor = 0;
  /// Denominator floor of the relative error, so exact zeros compare by absolute error.
  double floor = 1e-6;
  /// Five-point central stencil (error O(ε⁴)) instead of the three-point one.
  bool fourth_order = false;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index checked = 0;
  /// Coordinates whose ±ε probes straddled a relu/max kink.
  Index skipped = 0;
};

/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

using LossFn = std::function<Var(Tape&, const ParameterStore&)>;

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences for every tensor in `inputs`.
GradCheckReport check_gradients(const std::string& name, ParameterStore inputs, const LossFn& loss,
                                const GradCheckOptions& options = {});

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Checks an op of any output shape: the output is contracted with fixed
/// random weights (drawn from `seed`) into a scalar loss.
GradCheckReport check_op(const std::string& name, const std::vector<Tensor>& inputs, const OpFn& op,
                         std::uint64_t seed, GradCheckOptions options = {});

}  // namespace tfuse
