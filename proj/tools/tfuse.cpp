// tfuse: command-line front end for generation, training, evaluation,
// ablation sweeps, attention inspection and gradient checks.

#include "tfuse/ablation.hpp"
#include "tfuse/config.hpp"
#include "tfuse/gradcheck_suite.hpp"
#include "tfuse/inspect.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace tfuse;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string data;
  std::string variant;
  std::string tracklet;
  bool control = false;
  bool reference = false;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.variant.empty()) c.model.fusion.variant = Variant::parse(o.variant);
  c.validate();
  return c;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void echo_config(const RunConfig& c, const fs::path& dir) {
  std::ofstream(dir / "config.json") << to_json(c);
}

Dataset load_data(const Options& o, const RunConfig& c) {
  if (o.data.empty()) return generate(c.synthetic());
  fs::path manifest = o.data;
  if (fs::is_directory(manifest)) manifest /= "manifest.tsv";
  return load_manifest(manifest, c.model.backbone.input);
}

Split test_split(const Dataset& data, const RunConfig& c) {
  Split sp = split(data, c.data.train_fraction, c.split_seed(0));
  for (const std::string& w : sp.warnings) std::cerr << "warning: " << w << '\n';
  return sp;
}

ParameterStore load_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  return ParameterStore::load(fs::path(o.checkpoint));
}

// The identity head's width is fixed by the checkpoint.
FusionModel model_for_checkpoint(const RunConfig& c, const ParameterStore& params) {
  return FusionModel(c.model_for(static_cast<int>(params.get(FusionModel::id_head_weight()).dim(1))));
}

int cmd_generate(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path out = require_out(o);
  const Dataset data = generate(c.synthetic());
  export_dataset(data, out);
  echo_config(c, out);
  std::cout << "wrote " << data.size() << " tracklets of " << c.data.synthetic.num_identities << " identities to "
            << (out / "manifest.tsv").string() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path out = require_out(o);
  echo_config(c, out);
  const Dataset data = load_data(o, c);
  const Split sp = test_split(data, c);
  const int classes = static_cast<int>(class_indices(data, sp.train).size());
  const FusionModel model(c.model_for(classes));

  std::ofstream log(out / "metrics.jsonl");
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_dir = out / "checkpoints";
  if (!sp.query.empty() && !sp.gallery.empty()) {
    hooks.evaluate = [&](const ParameterStore& p) {
      return evaluate_split(model, p, data, sp, c.model.fusion.variant, c.eval.frames, c.eval.metric);
    };
  }
  const TrainResult r = train(data, sp.train, model, model.initial_parameters(c.init_seed()), c.training(), hooks);
  r.params.save(out / "final.ckpt");
  std::cout << "trained " << c.model.fusion.variant.name() << " for " << r.steps.size() << " steps on " << classes
            << " identities";
  if (!r.epochs.empty()) std::cout << ", final epoch loss " << r.epochs.back().mean_loss;
  std::cout << "\ncheckpoint " << (out / "final.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve(o);
  const ParameterStore params = load_checkpoint(o);
  const FusionModel model = model_for_checkpoint(c, params);
  const Dataset data = load_data(o, c);
  const Split sp = test_split(data, c);
  if (sp.query.empty() || sp.gallery.empty()) throw std::runtime_error("empty test set");
  const Variant& variant = c.model.fusion.variant;
  EmbeddingSet<double> query = embed_tracklets(model, params, data, sp.query, Role::kQuery, variant, c.eval.frames);
  EmbeddingSet<double> gallery =
      embed_tracklets(model, params, data, sp.gallery, Role::kGallery, variant, c.eval.frames);
  const RetrievalMetrics m = evaluate(query, gallery, c.eval.metric);
  write_report(std::cout, m);
  if (!o.out.empty()) {
    const fs::path out = require_out(o);
    echo_config(c, out);
    std::ofstream dump(out / "embeddings.tsv");
    write_embeddings(dump, query);
    write_embeddings(dump, gallery);
    std::ofstream report(out / "report.txt");
    write_report(report, m);
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  RunConfig c = resolve(o);
  if (o.reference) {
    if (!o.config.empty()) throw std::invalid_argument("--reference and --config are exclusive");
    c = reference_benchmark();
    if (o.seed) c.seed = *o.seed;
  }
  const Dataset data = load_data(o, c);
  std::vector<Variant> variants = ablation_grid();
  if (!o.variant.empty()) variants = {c.model.fusion.variant};
  std::optional<std::ofstream> log;
  if (!o.out.empty()) {
    const fs::path out = require_out(o);
    echo_config(c, out);
    log.emplace(out / "ablation.jsonl");
  }
  AblationOptions ao;
  ao.frame_level_control = o.control;
  const AblationReport report = run_ablation(data, c, variants, log ? &*log : nullptr, ao);
  write_ablation_table(std::cout, report);
  std::cout << "seconds " << report.seconds << '\n';
  if (!o.out.empty()) {
    std::ofstream table(fs::path(o.out) / "ablation.txt");
    write_ablation_table(table, report);
  }
  return 0;
}

int cmd_inspect(const Options& o) {
  const RunConfig c = resolve(o);
  const ParameterStore params = load_checkpoint(o);
  const FusionModel model = model_for_checkpoint(c, params);
  const Dataset data = load_data(o, c);
  if (data.empty()) throw std::runtime_error("dataset is empty");
  const TrackletRecord* pick = &data.front();
  if (!o.tracklet.empty()) {
    pick = nullptr;
    for (const TrackletRecord& t : data) {
      if (t.id == o.tracklet) pick = &t;
    }
    if (!pick) throw std::invalid_argument("no tracklet '" + o.tracklet + "'");
  }
  const Variant& variant = c.model.fusion.variant;
  const std::string line = attention_record(*pick, variant, inspect_tracklet(model, params, *pick, variant));
  if (o.out.empty()) {
    std::cout << line << '\n';
  } else {
    std::ofstream(o.out, std::ios::app) << line << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig c = resolve(o);
  GradCheckSuiteOptions so;
  so.seed = c.seed;
  const auto start = std::chrono::steady_clock::now();
  const std::vector<GradCheckReport> reports = run_gradcheck_suite(c.model, so, [](const GradCheckReport& r) {
    std::printf("%-44s max_rel_err %.3e  checked %lld  skipped %lld  worst %s (analytic %.6e, numeric %.6e)\n",
                r.name.c_str(), r.max_rel_error, static_cast<long long>(r.checked), static_cast<long long>(r.skipped),
                r.worst_coordinate.c_str(), r.worst_analytic, r.worst_numeric);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double worst = max_relative_error(reports);
  std::printf("max_rel_error=%.6e\nseconds=%.2f\n", worst, seconds);
  if (!(worst < 1e-4)) {
    std::fprintf(stderr, "error: gradient check failed, max relative error %.3e\n", worst);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage tracklet fusion for video re-identification"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Run config (JSON); defaults apply to missing keys")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Override the config seed");
  };
  auto data = [&](CLI::App* cmd) {
    cmd->add_option("--data", o.data, "Dataset directory or manifest; synthesized from the config when omitted");
  };
  auto variant = [&](CLI::App* cmd) {
    cmd->add_option("--variant", o.variant, "<fusion>/<attention>, e.g. late_fusion/intra_inter_rn");
  };

  CLI::App* gen = app.add_subcommand("generate", "Write a synthetic dataset and manifest");
  common(gen);
  gen->add_option("--out", o.out, "Output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "Warm-up and end-to-end training on the train side of split 0");
  common(tr);
  data(tr);
  variant(tr);
  tr->add_option("--out", o.out, "Output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "Embed the test side of split 0 and report retrieval metrics");
  common(ev);
  data(ev);
  variant(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Parameter checkpoint")->required();
  ev->add_option("--out", o.out, "Write embeddings.tsv and report.txt here");

  CLI::App* ab = app.add_subcommand("ablate", "Train and compare the fusion and attention variants");
  common(ab);
  data(ab);
  variant(ab);
  ab->add_option("--out", o.out, "Write ablation.txt and ablation.jsonl here");
  ab->add_flag("--reference", o.reference, "Use the reference benchmark: 32 identities, 3 splits, 80 epochs");
  ab->add_flag("--control", o.control, "Add feature_average trained further at frame level as an unranked row");

  CLI::App* in = app.add_subcommand("inspect-attention", "Dump per-stage frame attention and stage weights as JSON");
  common(in);
  data(in);
  variant(in);
  in->add_option("--checkpoint", o.checkpoint, "Parameter checkpoint")->required();
  in->add_option("--tracklet", o.tracklet, "Tracklet id (default: the first)");
  in->add_option("--out", o.out, "Append the JSON line to this file instead of stdout");

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op, module and the pipeline");
  common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    worker_threads();
    if (gen->parsed()) return cmd_generate(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_eval(o);
    if (ab->parsed()) return cmd_ablate(o);
    if (in->parsed()) return cmd_inspect(o);
    if (gc->parsed()) return cmd_gradcheck(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
