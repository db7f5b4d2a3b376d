#include "tfuse/gradcheck.hpp"

#include "tfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace tfuse {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const std::string& name, ParameterStore inputs, const LossFn& loss,
                                const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;

  Gradients grads = [&] {
    Tape tape;
    Var out = loss(tape, inputs);
    return tape.backward(out);
  }();

  auto probe = [&](std::uint64_t& signature) {
    Tape tape(false);
    const double v = loss(tape, inputs).value().item();
    signature = tape.piecewise_signature();
    return v;
  };

  Rng rng(options.seed);
  for (const std::string& path : inputs.paths()) {
    const Index n = inputs.get(path).size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.samples_per_tensor > 0 && n > options.samples_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
    }
    const Tensor analytic = grads.has_parameter(path) ? grads.of_parameter(path) : Tensor(inputs.get(path).shape());
    Index taken = 0;
    for (Index c : coords) {
      if (options.samples_per_tensor > 0 && taken >= options.samples_per_tensor) break;
      double& x = inputs.get_mutable(path)[c];
      const double saved = x;
      const double h = options.epsilon;
      auto at = [&](double offset, std::uint64_t& sig) {
        x = saved + offset;
        return probe(sig);
      };
      std::uint64_t sig_plus = 0, sig_minus = 0;
      const double f_plus = at(h, sig_plus);
      const double f_minus = at(-h, sig_minus);
      double numeric = (f_plus - f_minus) / (2.0 * h);
      bool straddles = sig_plus != sig_minus;
      if (options.fourth_order && !straddles) {
        std::uint64_t sig_plus2 = 0, sig_minus2 = 0;
        const double f_plus2 = at(2.0 * h, sig_plus2);
        const double f_minus2 = at(-2.0 * h, sig_minus2);
        straddles = sig_plus2 != sig_plus || sig_minus2 != sig_plus;
        numeric = (8.0 * (f_plus - f_minus) - (f_plus2 - f_minus2)) / (12.0 * h);
      }
      x = saved;
      if (straddles) {
        ++report.skipped;
        continue;
      }
      const double err = relative_error(analytic[c], numeric, options.floor);
      if (report.worst_coordinate.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_coordinate = path + "[" + std::to_string(c) + "]";
        report.worst_analytic = analytic[c];
        report.worst_numeric = numeric;
      }
      ++report.checked;
      ++taken;
    }
  }
  return report;
}

GradCheckReport check_op(const std::string& name, const std::vector<Tensor>& inputs, const OpFn& op,
                         std::uint64_t seed, GradCheckOptions options) {
  ParameterStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("in" + std::to_string(i), inputs[i]);
  std::optional<Tensor> weights;
  Rng rng(seed ^ 0x5eedULL);
  auto loss = [&](Tape& tape, const ParameterStore& s) {
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(s.on(tape, "in" + std::to_string(i)));
    Var out = op(tape, vars);
    if (!weights) weights = random_normal(out.shape(), 1.0, rng);
    return sum(mul(out, tape.constant(*weights)));
  };
  options.seed = seed;
  return check_gradients(name, std::move(store), loss, options);
}

}  // namespace tfuse
