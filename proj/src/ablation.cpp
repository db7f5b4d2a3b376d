#include "tfuse/ablation.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

namespace tfuse {
namespace {

using nlohmann::json;

constexpr double kNarrowGap = 1.0;
constexpr const char* kControlLabel = "feature_average/avg_pool +frame-level epochs";

Variant v(FusionKind f, AttentionKind a) { return {f, a}; }

}  // namespace

std::vector<Variant> fusion_table_variants() {
  const AttentionKind avg = AttentionKind::kAvgPool;
  return {v(FusionKind::kFeatureAverage, avg), v(FusionKind::kEarlyFusion, avg), v(FusionKind::kLateFusion, avg),
          v(FusionKind::kMsAverage, avg), v(FusionKind::kMsSemanticAttention, avg)};
}

std::vector<Variant> attention_table_variants() {
  std::vector<Variant> out;
  for (AttentionKind a : {AttentionKind::kAvgPool, AttentionKind::kIntra, AttentionKind::kInterEuclid,
                          AttentionKind::kInterRn, AttentionKind::kIntraInterEuclid, AttentionKind::kIntraInterRn}) {
    out.push_back(v(FusionKind::kLateFusion, a));
  }
  out.push_back(v(FusionKind::kMsSemanticAttention, AttentionKind::kIntraInterRn));
  return out;
}

std::vector<Variant> ablation_grid() {
  std::vector<Variant> out = fusion_table_variants();
  for (const Variant& x : attention_table_variants()) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

const AblationRow* AblationReport::find(const Variant& variant) const {
  for (const AblationRow& r : rows) {
    if (r.variant == variant) return &r;
  }
  return nullptr;
}

std::vector<OrderingCheck> ordering_checks(const std::vector<AblationRow>& rows) {
  auto find = [&](const Variant& x) -> const AblationRow* {
    for (const AblationRow& r : rows) {
      if (r.variant == x) return &r;
    }
    return nullptr;
  };
  const AttentionKind avg = AttentionKind::kAvgPool;
  const struct {
    Variant lhs, rhs;
    bool strict;
  } claims[] = {
      {v(FusionKind::kFeatureAverage, avg), v(FusionKind::kLateFusion, avg), true},
      {v(FusionKind::kLateFusion, avg), v(FusionKind::kMsAverage, avg), false},
      {v(FusionKind::kMsAverage, avg), v(FusionKind::kMsSemanticAttention, avg), false},
      {v(FusionKind::kLateFusion, avg), v(FusionKind::kLateFusion, AttentionKind::kIntraInterRn), true},
  };
  std::vector<OrderingCheck> out;
  for (const auto& c : claims) {
    const AblationRow* l = find(c.lhs);
    const AblationRow* r = find(c.rhs);
    if (!l || !r) continue;
    OrderingCheck check{c.lhs, c.rhs, c.strict};
    check.gap = 100.0 * (r->map - l->map);
    check.holds = c.strict ? check.gap > 0.0 : check.gap >= 0.0;
    check.narrow = check.holds && check.gap < kNarrowGap;
    out.push_back(check);
  }
  return out;
}

AblationReport run_ablation(const Dataset& dataset, const RunConfig& config, const std::vector<Variant>& variants,
                            std::ostream* log, const AblationOptions& options) {
  config.validate();
  if (variants.empty()) throw std::invalid_argument("ablate: no variants");
  const auto start = std::chrono::steady_clock::now();
  AblationReport report;
  for (const Variant& x : variants) report.rows.push_back({x, {}});
  if (options.frame_level_control) report.control = AblationRow{Variant::parse("feature_average/avg_pool"), {}};

  for (int s = 0; s < config.data.num_splits; ++s) {
    const Split sp = split(dataset, config.data.train_fraction, config.split_seed(s));
    if (sp.query.empty() || sp.gallery.empty()) throw std::runtime_error("empty test set");
    const int classes = static_cast<int>(class_indices(dataset, sp.train).size());

    TrainConfig warm = config.training();
    warm.epochs = 0;
    const FusionModel base(config.model_for(classes));
    TrainResult warmed = train(dataset, sp.train, base, base.initial_parameters(config.init_seed()), warm);

    auto record = [&](AblationRow& row, const char* label, const FusionModel& model, const TrainResult& trained) {
      RetrievalMetrics m =
          evaluate_split(model, trained.params, dataset, sp, row.variant, config.eval.frames, config.eval.metric);
      row.splits.push_back(m);
      if (log) {
        *log << json{{"split", s},
                     {"variant", label},
                     {"final_loss", trained.epochs.empty() ? 0.0 : trained.epochs.back().mean_loss},
                     {"map", m.map},
                     {"rank1", m.rank1},
                     {"rank5", m.rank5}}
                    .dump()
             << '\n'
             << std::flush;
      }
    };

    for (AblationRow& row : report.rows) {
      ModelConfig mc = config.model_for(classes);
      mc.fusion.variant = row.variant;
      const FusionModel model(mc);
      if (row.variant.fusion == FusionKind::kFeatureAverage) {
        record(row, row.variant.name().c_str(), model, warmed);
        continue;
      }
      TrainConfig cfg = config.training();
      cfg.warmup_epochs = 0;
      record(row, row.variant.name().c_str(), model, train(dataset, sp.train, model, warmed.params, cfg));
    }
    if (report.control) {
      ModelConfig mc = config.model_for(classes);
      mc.fusion.variant = report.control->variant;
      const FusionModel model(mc);
      TrainConfig cfg = config.training();
      cfg.warmup_epochs = 0;
      record(*report.control, kControlLabel, model, train(dataset, sp.train, model, warmed.params, cfg));
    }
  }

  auto average = [](AblationRow& row) {
    const double n = static_cast<double>(row.splits.size());
    for (const RetrievalMetrics& m : row.splits) {
      row.map += m.map / n;
      row.rank1 += m.rank1 / n;
      row.rank5 += m.rank5 / n;
    }
  };
  for (AblationRow& row : report.rows) average(row);
  if (report.control) average(*report.control);
  report.checks = ordering_checks(report.rows);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

RunConfig reference_benchmark() {
  RunConfig c;
  c.data.synthetic.num_identities = 32;
  c.data.num_splits = 3;
  c.train.epochs = 80;
  return c;
}

bool ordering_reproduced(const AblationReport& report) {
  if (report.checks.size() != 4) return false;
  for (const OrderingCheck& c : report.checks) {
    if (!c.holds || c.narrow) return false;
  }
  return true;
}

void write_ablation_table(std::ostream& os, const AblationReport& report) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-40s %7s %7s %7s\n", "variant", "mAP", "rank-1", "rank-5");
  os << line;
  for (const AblationRow& r : report.rows) {
    std::snprintf(line, sizeof(line), "%-40s %7.2f %7.2f %7.2f\n", r.variant.name().c_str(), 100.0 * r.map,
                  100.0 * r.rank1, 100.0 * r.rank5);
    os << line;
  }
  if (report.control) {
    const AblationRow& r = *report.control;
    std::snprintf(line, sizeof(line), "%-40s %7.2f %7.2f %7.2f  (control, not ranked)\n", kControlLabel, 100.0 * r.map,
                  100.0 * r.rank1, 100.0 * r.rank5);
    os << line;
  }
  for (const OrderingCheck& c : report.checks) {
    const char* verdict = !c.holds ? "REPRODUCTION FAILURE" : c.narrow ? "REPRODUCTION FAILURE, gap under 1 point" : "holds";
    std::snprintf(line, sizeof(line), "%s %s %s: gap %+.2f, %s\n", c.lhs.name().c_str(), c.strict ? "<" : "<=",
                  c.rhs.name().c_str(), c.gap, verdict);
    os << line;
  }
}

}  // namespace tfuse
