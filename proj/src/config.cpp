#include "tfuse/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tfuse {
namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw std::invalid_argument("config: " + label() + " must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: " + dotted(key) + " has the wrong type");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    static const json empty = json::object();
    return Section(it == node_.end() ? empty : *it, dotted(key));
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) throw std::invalid_argument("config: unknown key '" + dotted(item.key()) + "'");
    }
  }

 private:
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string label() const { return path_.empty() ? "top level" : "'" + path_ + "'"; }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return splitmix(splitmix(seed) ^ stream); }

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synthetic().validate();
  if (!(data.train_fraction >= 0.0 && data.train_fraction <= 1.0)) {
    throw std::invalid_argument("data: train_fraction must lie in [0, 1]");
  }
  if (data.num_splits < 1) throw std::invalid_argument("data: num_splits must be >= 1");
  if (eval.frames < 1) throw std::invalid_argument("eval: frames must be >= 1");
}

std::uint64_t RunConfig::data_seed() const { return derive(seed, 1); }
std::uint64_t RunConfig::init_seed() const { return derive(seed, 2); }
std::uint64_t RunConfig::train_seed() const { return derive(seed, 3); }
std::uint64_t RunConfig::split_seed(int split_index) const {
  return derive(seed, 0x100 + static_cast<std::uint64_t>(split_index));
}

ModelConfig RunConfig::model_for(int identities) const {
  ModelConfig m = model;
  m.num_identities = identities;
  return m;
}

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig s = data.synthetic;
  s.image = model.backbone.input;
  s.seed = data_seed();
  return s;
}

TrainConfig RunConfig::training() const {
  TrainConfig t = train;
  t.seed = train_seed();
  return t;
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.read("seed", c.seed);

  Section backbone = top.child("backbone");
  backbone.read("num_stages", c.model.backbone.num_stages);
  backbone.read("channels", c.model.backbone.channels);
  backbone.read("input", c.model.backbone.input);
  backbone.read("embed_dim", c.model.backbone.embed_dim);
  backbone.read("input_mean", c.model.input_mean);
  backbone.read("input_std", c.model.input_std);
  backbone.finish();

  Section attention = top.child("attention");
  attention.read("relation_dim", c.model.attention.relation_dim);
  attention.read("relation_hidden", c.model.attention.relation_hidden);
  attention.finish();

  Section fusion = top.child("fusion");
  std::string variant = c.model.fusion.variant.name();
  fusion.read("variant", variant);
  c.model.fusion.variant = Variant::parse(variant);
  fusion.read("branch_stages", c.model.fusion.branch_stages);
  fusion.read("early_stage", c.model.fusion.early_stage);
  fusion.finish();

  Section train = top.child("train");
  TrainConfig& t = c.train;
  train.read("base_lr", t.base_lr);
  train.read("decay", t.decay);
  train.read("decay_period", t.decay_period);
  train.read("epochs", t.epochs);
  train.read("warmup_epochs", t.warmup_epochs);
  train.read("steps_per_epoch", t.steps_per_epoch);
  train.read("identities_per_batch", t.identities_per_batch);
  train.read("tracklets_per_identity", t.tracklets_per_identity);
  train.read("frames_per_tracklet", t.frames_per_tracklet);
  train.read("lambda_ce", t.lambda_ce);
  train.read("lambda_tri", t.lambda_tri);
  train.read("margin", t.margin);
  train.read("momentum", t.momentum);
  train.read("grad_clip", t.grad_clip);
  train.read("checkpoint_every", t.checkpoint_every);
  train.read("eval_every", t.eval_every);
  train.finish();

  Section data = top.child("data");
  SyntheticConfig& s = c.data.synthetic;
  data.read("num_identities", s.num_identities);
  data.read("num_cameras", s.num_cameras);
  data.read("tracklets_per_camera", s.tracklets_per_camera);
  data.read("frames_per_tracklet", s.frames_per_tracklet);
  data.read("num_views", s.num_views);
  data.read("duplicate_prob", s.duplicate_prob);
  data.read("duplicate_run", s.duplicate_run);
  data.read("occlusion_prob", s.occlusion_prob);
  data.read("noise_sigma", s.noise_sigma);
  data.read("duplicate_sigma", s.duplicate_sigma);
  data.read("train_fraction", c.data.train_fraction);
  data.read("num_splits", c.data.num_splits);
  data.finish();

  Section eval = top.child("eval");
  std::string metric(to_string(c.eval.metric));
  eval.read("metric", metric);
  c.eval.metric = parse_distance_metric(metric);
  eval.read("frames", c.eval.frames);
  eval.finish();

  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("config: cannot open " + file.string());
  std::ostringstream text;
  text << is.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const SyntheticConfig& s = c.data.synthetic;
  json root{
      {"seed", c.seed},
      {"backbone",
       {{"num_stages", c.model.backbone.num_stages},
        {"channels", c.model.backbone.channels},
        {"input", c.model.backbone.input},
        {"embed_dim", c.model.backbone.embed_dim},
        {"input_mean", c.model.input_mean},
        {"input_std", c.model.input_std}}},
      {"attention",
       {{"relation_dim", c.model.attention.relation_dim}, {"relation_hidden", c.model.attention.relation_hidden}}},
      {"fusion",
       {{"variant", c.model.fusion.variant.name()},
        {"branch_stages", c.model.fusion.branch_stages},
        {"early_stage", c.model.fusion.early_stage}}},
      {"train",
       {{"base_lr", t.base_lr},
        {"decay", t.decay},
        {"decay_period", t.decay_period},
        {"epochs", t.epochs},
        {"warmup_epochs", t.warmup_epochs},
        {"steps_per_epoch", t.steps_per_epoch},
        {"identities_per_batch", t.identities_per_batch},
        {"tracklets_per_identity", t.tracklets_per_identity},
        {"frames_per_tracklet", t.frames_per_tracklet},
        {"lambda_ce", t.lambda_ce},
        {"lambda_tri", t.lambda_tri},
        {"margin", t.margin},
        {"momentum", t.momentum},
        {"grad_clip", t.grad_clip},
        {"checkpoint_every", t.checkpoint_every},
        {"eval_every", t.eval_every}}},
      {"data",
       {{"num_identities", s.num_identities},
        {"num_cameras", s.num_cameras},
        {"tracklets_per_camera", s.tracklets_per_camera},
        {"frames_per_tracklet", s.frames_per_tracklet},
        {"num_views", s.num_views},
        {"duplicate_prob", s.duplicate_prob},
        {"duplicate_run", s.duplicate_run},
        {"occlusion_prob", s.occlusion_prob},
        {"noise_sigma", s.noise_sigma},
        {"duplicate_sigma", s.duplicate_sigma},
        {"train_fraction", c.data.train_fraction},
        {"num_splits", c.data.num_splits}}},
      {"eval", {{"metric", std::string(to_string(c.eval.metric))}, {"frames", c.eval.frames}}},
  };
  return root.dump(2) + "\n";
}

}  // namespace tfuse
