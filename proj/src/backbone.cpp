#include "tfuse/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace tfuse {

void BackboneConfig::validate() const {
  if (num_stages < 2) throw std::invalid_argument("backbone: num_stages must be >= 2");
  if (static_cast<int>(channels.size()) != num_stages) {
    throw std::invalid_argument("backbone: expected " + std::to_string(num_stages) + " channel counts, got " +
                                std::to_string(channels.size()));
  }
  for (Index c : channels) {
    if (c <= 0) throw std::invalid_argument("backbone: channel counts must be positive");
  }
  if (input.size() != 3 || input[0] <= 0) throw std::invalid_argument("backbone: input must be CxHxW");
  if (embed_dim <= 0) throw std::invalid_argument("backbone: embed_dim must be positive");
  const Index shrink = Index{1} << num_stages;
  if (input[1] / shrink < 1 || input[2] / shrink < 1) {
    throw std::invalid_argument("backbone: input " + shape_string(input) + " collapses below 1x1 after " +
                                std::to_string(num_stages) + " stages");
  }
}

Shape BackboneConfig::stage_shape(int stage) const {
  if (stage < 0 || stage > num_stages) throw std::out_of_range("stage " + std::to_string(stage) + " out of range");
  if (stage == 0) return input;
  const Index shrink = Index{1} << stage;
  return Shape{channels[static_cast<std::size_t>(stage - 1)], input[1] / shrink, input[2] / shrink};
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) { config_.validate(); }

std::string Backbone::kernel_path(int stage, int conv) {
  return "backbone.stage" + std::to_string(stage) + ".conv" + std::to_string(conv) + ".kernel";
}

std::string Backbone::bias_path(int stage, int conv) {
  return "backbone.stage" + std::to_string(stage) + ".conv" + std::to_string(conv) + ".bias";
}

std::string Backbone::projection_weight_path(int branch) {
  return "branch" + std::to_string(branch) + ".projection.weight";
}

std::string Backbone::projection_bias_path(int branch) {
  return "branch" + std::to_string(branch) + ".projection.bias";
}

std::vector<std::string> Backbone::stage_parameter_paths(int from, int to) const {
  std::vector<std::string> out;
  for (int s = from + 1; s <= to; ++s) {
    for (int conv = 1; conv <= 2; ++conv) {
      out.push_back(kernel_path(s, conv));
      out.push_back(bias_path(s, conv));
    }
  }
  return out;
}

void Backbone::init_parameters(ParameterStore& params, Rng& rng) const {
  for (int s = 1; s <= config_.num_stages; ++s) {
    const Index in = config_.stage_channels(s - 1);
    const Index out = config_.stage_channels(s);
    params.add(kernel_path(s, 1), random_normal({out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(in * 9)), rng));
    params.add(bias_path(s, 1), Tensor({out}));
    params.add(kernel_path(s, 2), random_normal({out, out, 3, 3}, std::sqrt(2.0 / static_cast<double>(out * 9)), rng));
    params.add(bias_path(s, 2), Tensor({out}));
  }
  const Index top = config_.stage_channels(config_.num_stages);
  for (int b = 1; b <= config_.num_stages; ++b) {
    params.add(projection_weight_path(b),
               random_normal({top, config_.embed_dim}, 1.0 / std::sqrt(static_cast<double>(top)), rng));
    params.add(projection_bias_path(b), Tensor({config_.embed_dim}));
  }
}

void Backbone::check_stage(int stage, int lo) const {
  if (stage < lo || stage > config_.num_stages) {
    throw std::out_of_range("stage " + std::to_string(stage) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(config_.num_stages) + "]");
  }
}

Var Backbone::apply_stage(Tape& tape, const ParameterStore& params, const Var& x, int stage) const {
  check_stage(stage, 1);
  Var h = relu(conv2d(x, params.on(tape, kernel_path(stage, 1)), params.on(tape, bias_path(stage, 1))));
  h = relu(conv2d(h, params.on(tape, kernel_path(stage, 2)), params.on(tape, bias_path(stage, 2))));
  return avg_pool2d(h, 2);
}

StageFeatureMap Backbone::encode_to_stage(Tape& tape, const ParameterStore& params, const Var& frames,
                                          int stage) const {
  check_stage(stage, 1);
  return encode_all(tape, params, frames, stage).back();
}

std::vector<StageFeatureMap> Backbone::encode_all(Tape& tape, const ParameterStore& params, const Var& frames,
                                                  int up_to) const {
  check_stage(up_to, 1);
  const Shape& fs = frames.shape();
  const Shape expect = config_.stage_shape(0);
  if (fs.size() != 4 || fs[1] != expect[0] || fs[2] != expect[1] || fs[3] != expect[2]) {
    throw std::invalid_argument("backbone: frames " + shape_string(fs) + " do not match input " +
                                shape_string(expect));
  }
  std::vector<StageFeatureMap> taps;
  Var x = frames;
  for (int s = 1; s <= up_to; ++s) {
    x = apply_stage(tape, params, x, s);
    taps.push_back({s, x});
  }
  return taps;
}

Var Backbone::suffix_pooled(Tape& tape, const ParameterStore& params, const Var& fused_map, int stage) const {
  check_stage(stage, 1);
  const Shape expect = config_.stage_shape(stage);
  if (fused_map.shape() != expect) {
    throw std::invalid_argument("continue_from_stage: map " + shape_string(fused_map.shape()) +
                                " does not match stage " + std::to_string(stage) + " output " + shape_string(expect));
  }
  Var x = reshape(fused_map, Shape{1, expect[0], expect[1], expect[2]});
  for (int s = stage + 1; s <= config_.num_stages; ++s) x = apply_stage(tape, params, x, s);
  return reshape(pool_frame_features(x), Shape{config_.stage_channels(config_.num_stages)});
}

Var Backbone::project(Tape& tape, const ParameterStore& params, const Var& pooled, int branch) const {
  check_stage(branch, 1);
  const Index c = pooled.value().size();
  Var row = reshape(pooled, Shape{1, c});
  Var out = linear(row, params.on(tape, projection_weight_path(branch)), params.on(tape, projection_bias_path(branch)));
  return reshape(out, Shape{config_.embed_dim});
}

Var Backbone::continue_from_stage(Tape& tape, const ParameterStore& params, const Var& fused_map, int stage) const {
  return project(tape, params, suffix_pooled(tape, params, fused_map, stage), stage);
}

Var Backbone::pool_frame_features(const Var& maps) {
  const Shape& s = maps.shape();
  if (s.size() != 4) throw std::invalid_argument("pool_frame_features: expects LxCxHxW maps");
  return mean(reshape(maps, Shape{s[0], s[1], s[2] * s[3]}), 2);
}

}  // namespace tfuse
