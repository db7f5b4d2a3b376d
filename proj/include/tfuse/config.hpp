#pragma once

#include "tfuse/data.hpp"
#include "tfuse/eval.hpp"
#include "tfuse/semantic_fusion.hpp"
#include "tfuse/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tfuse {

struct DataSection {
  SyntheticConfig synthetic;
  double train_fraction = 0.5;
  /// Independent random splits averaged by the ablation sweep.
  int num_splits = 3;
};

struct EvalSection {
  DistanceMetric metric = DistanceMetric::kEuclidean;
  /// Evenly spaced frames per tracklet at test time.
  Index frames = 16;
};

/// Everything a command needs. Every field has a default, so `{}` is a
/// complete config. All randomness derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  DataSection data;
  EvalSection eval;

  void validate() const;

  /// Seeds for the independent random streams, derived from `seed`.
  std::uint64_t data_seed() const;
  std::uint64_t init_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t split_seed(int split_index) const;

  /// Model with the identity head sized for `identities` training classes.
  ModelConfig model_for(int identities) const;
  SyntheticConfig synthetic() const;
  TrainConfig training() const;
};

/// JSON with sections seed, backbone, attention, fusion, train, data, eval.
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument
/// naming the dotted path.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& file);
/// Fully resolved config; parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);

}  // namespace tfuse
