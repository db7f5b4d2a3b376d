#pragma once

#include "tfuse/data.hpp"
#include "tfuse/eval.hpp"
#include "tfuse/semantic_fusion.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tfuse {

struct TrainConfig {
  double base_lr = 0.02;
  double decay = 0.8;
  int decay_period = 20;
  /// End-to-end epochs after the warm-up.
  int epochs = 40;
  /// Frame-level epochs with fusion bypassed.
  int warmup_epochs = 10;
  /// 0: one pass over the training identities, ceil(identities / P).
  int steps_per_epoch = 0;
  int identities_per_batch = 4;    // P
  int tracklets_per_identity = 2;  // T
  int frames_per_tracklet = 8;     // L
  double lambda_ce = 1.0;
  double lambda_tri = 1.0;
  double margin = 0.3;
  double momentum = 0.9;
  /// Rescale gradients whose global L2 norm exceeds this (0: off).
  double grad_clip = 5.0;
  /// Save a checkpoint every this many epochs (0: final only).
  int checkpoint_every = 0;
  /// Run the eval hook every this many end-to-end epochs (0: never).
  int eval_every = 0;
  std::uint64_t seed = 1;

  void validate() const;
  bool triplet_enabled() const { return lambda_tri != 0.0; }
};

/// base · decay^⌊epoch / period⌋.
double learning_rate(const TrainConfig& cfg, int epoch);

/// Mean over anchors of relu(d(a, hardest positive) − d(a, hardest negative) + margin)
/// on euclidean distances. Anchors lacking a positive or a negative are skipped.
Var batch_hard_triplet(const Var& embeddings, std::span<const int> labels, double margin);

struct LossTerms {
  Var total;
  double ce = 0.0;
  double triplet = 0.0;
};

/// λ_ce · CE(identity head) + λ_tri · batch-hard triplet. Labels are class
/// indices of the identity head.
LossTerms reid_loss(Tape& tape, const ParameterStore& params, const FusionModel& model, const Var& embeddings,
                    std::span<const int> labels, const TrainConfig& cfg);

using Velocity = std::map<std::string, Tensor>;

/// Classic momentum: v ← μ·v + g, p ← p − lr·v. All gradients are checked
/// before any parameter changes; a non-finite entry throws std::domain_error
/// naming its path.
void sgd_step(ParameterStore& params, const std::map<std::string, Tensor>& grads, double lr, double momentum,
              Velocity& velocity);

struct StepRecord {
  std::string phase;  // "warmup" or "main"
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double triplet = 0.0;
  /// Global gradient norm before clipping.
  double grad_norm = 0.0;
};

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<RetrievalMetrics> metrics;
};

struct TrainHooks {
  /// Line-delimited JSON metrics log.
  std::ostream* log = nullptr;
  /// Checkpoints go here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<RetrievalMetrics(const ParameterStore&)> evaluate;
};

struct TrainResult {
  ParameterStore params;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> diagnostics;
};

/// Warm-up (frame-level, fusion bypassed) followed by end-to-end training of
/// the model's configured variant on the given training tracklets. The
/// feature_average variant keeps training at frame level in both phases.
TrainResult train(const Dataset& dataset, const std::vector<std::size_t>& train_indices, const FusionModel& model,
                  ParameterStore params, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Maps the identities of the given tracklets to contiguous class indices.
std::map<int, int> class_indices(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Worker cap from TRACKLET_FUSION_THREADS (default: hardware concurrency).
int worker_threads();

/// Tracklet embeddings g_fused for the given variant on `frames` evenly spaced frames.
EmbeddingSet<double> embed_tracklets(const FusionModel& model, const ParameterStore& params, const Dataset& dataset,
                                     const std::vector<std::size_t>& indices, Role role, const Variant& variant,
                                     Index frames, int threads = worker_threads());

/// Embeds query and gallery of a split and runs the retrieval protocol.
RetrievalMetrics evaluate_split(const FusionModel& model, const ParameterStore& params, const Dataset& dataset,
                                const Split& split, const Variant& variant, Index frames, DistanceMetric metric,
                                int threads = worker_threads());

}  // namespace tfuse
