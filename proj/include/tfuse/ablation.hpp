#pragma once

#include "tfuse/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tfuse {

/// Fusion comparison: every fusion kind with plain temporal averaging.
std::vector<Variant> fusion_table_variants();
/// Attention comparison: every attention kind under late fusion, plus the
/// full multi-stage model with intra/inter RN attention.
std::vector<Variant> attention_table_variants();
/// Both tables, each variant once.
std::vector<Variant> ablation_grid();

struct AblationRow {
  Variant variant;
  std::vector<RetrievalMetrics> splits;
  double map = 0.0;  // means over splits
  double rank1 = 0.0;
  double rank5 = 0.0;
};

/// One ordinal claim "lhs < rhs" (strict) or "lhs ≤ rhs" on mean mAP.
struct OrderingCheck {
  Variant lhs, rhs;
  bool strict = true;
  /// rhs − lhs in mAP points.
  double gap = 0.0;
  bool holds = false;
  /// Holds, but by less than one point.
  bool narrow = false;
};

struct AblationOptions {
  /// Also train feature_average's backbone at frame level for train.epochs
  /// more and report it as a separate row outside the ordering checks.
  bool frame_level_control = false;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::optional<AblationRow> control;
  std::vector<OrderingCheck> checks;
  double seconds = 0.0;

  const AblationRow* find(const Variant& v) const;
};

/// Per split: one shared frame-level warm-up (train.warmup_epochs), then
/// train.epochs of each variant starting from it, then retrieval on the
/// split's test side. feature_average is the warm-up image model as is.
AblationReport run_ablation(const Dataset& dataset, const RunConfig& config, const std::vector<Variant>& variants,
                            std::ostream* log = nullptr, const AblationOptions& options = {});

/// 32 identities, 3 splits, 80 end-to-end epochs.
RunConfig reference_benchmark();

/// Every check holds by at least one point.
bool ordering_reproduced(const AblationReport& report);

/// The expected orderings among the variants present in the report.
std::vector<OrderingCheck> ordering_checks(const std::vector<AblationRow>& rows);

/// Rows in the order run, mAP / rank-1 / rank-5 as percentages, then the
/// ordering checks.
void write_ablation_table(std::ostream& os, const AblationReport& report);

}  // namespace tfuse
