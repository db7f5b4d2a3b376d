#include "tfuse/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

namespace tfuse {
namespace {

using nlohmann::json;

void log_line(std::ostream* os, const json& record) {
  if (os) *os << record.dump() << '\n' << std::flush;
}

constexpr double kMaskOffset = 1e6;

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: base_lr must be positive");
  if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("train: decay must lie in (0, 1)");
  if (decay_period < 1) throw std::invalid_argument("train: decay_period must be >= 1");
  if (epochs < 0 || warmup_epochs < 0 || steps_per_epoch < 0) {
    throw std::invalid_argument("train: epochs and steps must be non-negative");
  }
  if (identities_per_batch < 1 || tracklets_per_identity < 1 || frames_per_tracklet < 1) {
    throw std::invalid_argument("train: batch sizes must be >= 1");
  }
  if (triplet_enabled() && (identities_per_batch < 2 || tracklets_per_identity < 2)) {
    throw std::invalid_argument("train: triplet loss needs P >= 2 and T >= 2");
  }
  if (lambda_ce < 0 || lambda_tri < 0 || (lambda_ce == 0 && lambda_tri == 0)) {
    throw std::invalid_argument("train: loss weights must be non-negative and not both zero");
  }
  if (margin < 0) throw std::invalid_argument("train: margin must be non-negative");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum must lie in [0, 1)");
  if (!(grad_clip >= 0)) throw std::invalid_argument("train: grad_clip must be >= 0");
  if (checkpoint_every < 0 || eval_every < 0) throw std::invalid_argument("train: schedules must be non-negative");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("learning_rate: negative epoch");
  return cfg.base_lr * std::pow(cfg.decay, epoch / cfg.decay_period);
}

Var batch_hard_triplet(const Var& embeddings, std::span<const int> labels, double margin) {
  const Index n = embeddings.dim(0);
  if (embeddings.value().rank() != 2 || static_cast<Index>(labels.size()) != n) {
    throw std::invalid_argument("batch_hard_triplet: need [B x d] embeddings and B labels");
  }
  if (n < 2) throw std::invalid_argument("batch_hard_triplet: batch size must be >= 2");
  std::vector<Index> anchors;
  for (Index i = 0; i < n; ++i) {
    bool pos = false, neg = false;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)] ? pos : neg) = true;
    }
    if (pos && neg) anchors.push_back(i);
  }
  if (anchors.empty()) {
    const std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw std::invalid_argument("batch_hard_triplet: single-identity batch");
    throw std::invalid_argument("batch_hard_triplet: no identity has two samples in the batch");
  }

  Tape& tape = embeddings.tape();
  const auto k = static_cast<Index>(anchors.size());
  Tensor positive({k, n}), negative_offset({k, n});
  for (Index a = 0; a < k; ++a) {
    const Index i = anchors[static_cast<std::size_t>(a)];
    for (Index j = 0; j < n; ++j) {
      const bool same = labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
      positive[a * n + j] = (same && j != i) ? 1.0 : 0.0;
      negative_offset[a * n + j] = same ? -kMaskOffset : 0.0;
    }
  }
  Var dist = gather_rows(pairwise_distances(embeddings), anchors);
  Var hardest_pos = max(mul(dist, tape.constant(std::move(positive))), 1);
  // max(−d − offset) = −(closest negative)
  Var neg_hardest = max(add(scale(dist, -1.0), tape.constant(std::move(negative_offset))), 1);
  return mean(relu(offset(add(hardest_pos, neg_hardest), margin)));
}

LossTerms reid_loss(Tape& tape, const ParameterStore& params, const FusionModel& model, const Var& embeddings,
                    std::span<const int> labels, const TrainConfig& cfg) {
  if (embeddings.value().rank() != 2 || embeddings.dim(0) < 2) {
    throw std::invalid_argument("loss: batch size must be >= 2");
  }
  LossTerms out;
  std::optional<Var> total;
  if (cfg.lambda_ce != 0.0) {
    Var ce = softmax_cross_entropy(model.identity_logits(tape, params, embeddings), labels);
    out.ce = ce.value().item();
    total = scale(ce, cfg.lambda_ce);
  }
  if (cfg.triplet_enabled()) {
    Var tri = batch_hard_triplet(embeddings, labels, cfg.margin);
    out.triplet = tri.value().item();
    Var weighted = scale(tri, cfg.lambda_tri);
    total = total ? add(*total, weighted) : weighted;
  }
  out.total = *total;
  return out;
}

void sgd_step(ParameterStore& params, const std::map<std::string, Tensor>& grads, double lr, double momentum,
              Velocity& velocity) {
  for (const auto& [path, g] : grads) {
    if (!params.contains(path)) throw std::invalid_argument("sgd_step: unknown parameter " + path);
    if (g.shape() != params.get(path).shape()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + path);
    }
    if (!g.all_finite()) throw std::domain_error("sgd_step: non-finite gradient for " + path);
  }
  for (const auto& [path, g] : grads) {
    auto [it, fresh] = velocity.try_emplace(path, Tensor(g.shape()));
    Tensor& v = it->second;
    v.values() = momentum * v.values() + g.values();
    params.get_mutable(path).values() -= lr * v.values();
  }
}

std::map<int, int> class_indices(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  std::set<int> ids;
  for (std::size_t i : indices) ids.insert(dataset.at(i).identity);
  std::map<int, int> out;
  for (int id : ids) out.emplace(id, static_cast<int>(out.size()));
  return out;
}

TrainResult train(const Dataset& dataset, const std::vector<std::size_t>& train_indices, const FusionModel& model,
                  ParameterStore params, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_indices.empty()) throw std::invalid_argument("train: empty dataset");
  const std::map<int, int> classes = class_indices(dataset, train_indices);
  if (static_cast<int>(classes.size()) > model.config().num_identities) {
    throw std::invalid_argument("train: " + std::to_string(classes.size()) + " training identities exceed the " +
                                std::to_string(model.config().num_identities) + "-way identity head");
  }
  if (cfg.triplet_enabled() && classes.size() < 2) {
    throw std::invalid_argument("train: triplet loss needs at least 2 training identities");
  }
  std::vector<std::vector<std::size_t>> by_class(classes.size());
  for (std::size_t i : train_indices) {
    if (dataset[i].length() == 0) throw std::invalid_argument("train: empty tracklet " + dataset[i].id);
    by_class[static_cast<std::size_t>(classes.at(dataset[i].identity))].push_back(i);
  }

  const int per_batch = std::min<int>(cfg.identities_per_batch, static_cast<int>(classes.size()));
  const int steps =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (static_cast<int>(classes.size()) + per_batch - 1) / per_batch;
  const Variant variant = model.config().fusion.variant;
  const bool frame_level_main = variant.fusion == FusionKind::kFeatureAverage;

  TrainResult result;
  result.params = std::move(params);
  Rng rng(cfg.seed);
  std::vector<int> order(classes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  auto next_identities = [&] {
    std::vector<int> picked;
    while (static_cast<int>(picked.size()) < per_batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int c = order[cursor++];
      if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
    }
    return picked;
  };

  auto save = [&](const std::string& name) {
    if (!hooks.checkpoint_dir) return;
    std::filesystem::create_directories(*hooks.checkpoint_dir);
    result.params.save(*hooks.checkpoint_dir / name);
  };

  auto run_phase = [&](const std::string& phase, int epochs, bool frame_level, const TrainConfig& loss_cfg) {
    Velocity velocity;
    int step_index = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      const double lr = learning_rate(cfg, epoch);
      double epoch_loss = 0.0;
      for (int s = 0; s < steps; ++s, ++step_index) {
        std::vector<Tensor> chunks;
        std::vector<int> labels;
        for (int c : next_identities()) {
          std::vector<std::size_t> pool = by_class[static_cast<std::size_t>(c)];
          std::shuffle(pool.begin(), pool.end(), rng);
          for (int t = 0; t < cfg.tracklets_per_identity; ++t) {
            std::size_t pick = pool[static_cast<std::size_t>(t) % pool.size()];
            if (t >= static_cast<int>(pool.size())) {
              std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
              pick = pool[any(rng)];
            }
            chunks.push_back(model.preprocess(sample_chunk(dataset[pick], cfg.frames_per_tracklet, rng)));
            if (frame_level) {
              labels.insert(labels.end(), static_cast<std::size_t>(chunks.back().dim(0)), c);
            } else {
              labels.push_back(c);
            }
          }
        }

        Tape tape;
        Var embeddings;
        if (frame_level) {
          Index total = 0;
          for (const Tensor& t : chunks) total += t.dim(0);
          const Shape& fs = chunks.front().shape();
          Tensor frames(Shape{total, fs[1], fs[2], fs[3]});
          Index at = 0;
          for (const Tensor& t : chunks) {
            std::copy_n(t.data(), t.size(), frames.data() + at);
            at += t.size();
          }
          embeddings = model.frame_embeddings(tape, result.params, tape.constant(std::move(frames)));
        } else {
          std::vector<Var> rows;
          for (Tensor& t : chunks) {
            Var g = model.ablation_forward(tape, result.params, tape.constant(std::move(t)), variant).g_fused;
            rows.push_back(reshape(g, Shape{1, g.dim(0)}));
          }
          embeddings = concat(rows, 0);
        }
        LossTerms loss = reid_loss(tape, result.params, model, embeddings, labels, loss_cfg);
        Gradients grads = tape.backward(loss.total);
        std::map<std::string, Tensor> g = grads.parameters();
        double sq = 0.0;
        for (const auto& [path, t] : g) sq += t.values().squaredNorm();
        const double norm = std::sqrt(sq);
        if (cfg.grad_clip > 0.0 && std::isfinite(norm) && norm > cfg.grad_clip) {
          for (auto& [path, t] : g) t.values() *= cfg.grad_clip / norm;
        }
        sgd_step(result.params, g, lr, cfg.momentum, velocity);

        StepRecord rec{phase, epoch, step_index, lr, loss.total.value().item(), loss.ce, loss.triplet, norm};
        epoch_loss += rec.loss;
        log_line(hooks.log, {{"phase", rec.phase}, {"epoch", rec.epoch}, {"step", rec.step}, {"lr", rec.lr},
                             {"loss", rec.loss}, {"ce", rec.ce}, {"triplet", rec.triplet}, {"grad_norm", rec.grad_norm}});
        result.steps.push_back(std::move(rec));
      }

      EpochRecord er{phase, epoch, epoch_loss / steps, std::nullopt};
      json line{{"phase", phase}, {"epoch", epoch}, {"mean_loss", er.mean_loss}};
      if (phase == "main" && hooks.evaluate && cfg.eval_every && (epoch + 1) % cfg.eval_every == 0) {
        er.metrics = hooks.evaluate(result.params);
        line["map"] = er.metrics->map;
        line["rank1"] = er.metrics->rank1;
      }
      log_line(hooks.log, line);
      result.epochs.push_back(std::move(er));
      if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0) {
        save(phase + "_epoch" + std::to_string(epoch + 1) + ".ckpt");
      }
    }
  };

  // Warm-up is frame-level classification; the triplet term joins end to end.
  TrainConfig warm_cfg = cfg;
  if (cfg.lambda_ce > 0.0) warm_cfg.lambda_tri = 0.0;
  run_phase("warmup", cfg.warmup_epochs, true, warm_cfg);
  if (cfg.warmup_epochs > 0) {
    const auto first = result.epochs.begin();
    const auto last = result.epochs.end() - 1;
    const bool stalled = cfg.warmup_epochs >= 2 ? last->mean_loss >= first->mean_loss
                                                : result.steps.back().loss >= result.steps.front().loss;
    if (stalled) {
      const std::string msg = "warm-up loss did not decrease";
      result.diagnostics.push_back(msg);
      std::cerr << "diagnostic: " << msg << '\n';
      log_line(hooks.log, {{"diagnostic", msg}});
    }
  }
  run_phase("main", cfg.epochs, frame_level_main, cfg);
  save("final.ckpt");
  return result;
}

int worker_threads() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("TRACKLET_FUSION_THREADS");
  if (!env || !*env) return static_cast<int>(hw);
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) {
    throw std::invalid_argument(std::string("TRACKLET_FUSION_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(v);
}

EmbeddingSet<double> embed_tracklets(const FusionModel& model, const ParameterStore& params, const Dataset& dataset,
                                     const std::vector<std::size_t>& indices, Role role, const Variant& variant,
                                     Index frames, int threads) {
  EmbeddingSet<double> out;
  const Index n = static_cast<Index>(indices.size());
  out.embeddings.resize(n, model.config().backbone.embed_dim);
  for (std::size_t i : indices) {
    const TrackletRecord& t = dataset.at(i);
    out.ids.push_back(t.id);
    out.identities.push_back(t.identity);
    out.cameras.push_back(t.camera);
    out.roles.push_back(role);
  }
  std::atomic<Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (Index k = next++; k < n; k = next++) {
      try {
        Tape tape(false);
        const TrackletRecord& t = dataset[indices[static_cast<std::size_t>(k)]];
        Var g = model.ablation_forward(tape, params, tape.constant(model.preprocess(evenly_spaced(t, frames))), variant).g_fused;
        out.embeddings.row(k) = g.value().matrix();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

RetrievalMetrics evaluate_split(const FusionModel& model, const ParameterStore& params, const Dataset& dataset,
                                const Split& split, const Variant& variant, Index frames, DistanceMetric metric,
                                int threads) {
  if (split.query.empty() || split.gallery.empty()) throw std::runtime_error("empty test set");
  const EmbeddingSet<double> q =
      embed_tracklets(model, params, dataset, split.query, Role::kQuery, variant, frames, threads);
  const EmbeddingSet<double> g =
      embed_tracklets(model, params, dataset, split.gallery, Role::kGallery, variant, frames, threads);
  return evaluate(q, g, metric);
}

}  // namespace tfuse
