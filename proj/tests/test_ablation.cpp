#include "tfuse/ablation.hpp"
#include "tfuse/gradcheck_suite.hpp"
#include "tfuse/inspect.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <set>
#include <sstream>

namespace tfuse {
namespace {

using nlohmann::json;

RunConfig tiny() {
  RunConfig c;
  c.data.synthetic.num_identities = 8;
  c.data.synthetic.frames_per_tracklet = 4;
  c.data.num_splits = 1;
  c.train.warmup_epochs = 1;
  c.train.epochs = 1;
  c.train.steps_per_epoch = 1;
  c.train.frames_per_tracklet = 4;
  c.eval.frames = 4;
  return c;
}

AblationRow row(const std::string& name, double map) {
  AblationRow r{Variant::parse(name), {}};
  r.map = map;
  return r;
}

TEST(AblationGrid, Contents) {
  EXPECT_EQ(fusion_table_variants().size(), 5u);
  EXPECT_EQ(attention_table_variants().size(), 7u);
  const std::vector<Variant> grid = ablation_grid();
  std::set<std::string> names;
  for (const Variant& v : grid) names.insert(v.name());
  EXPECT_EQ(grid.size(), 11u);
  EXPECT_EQ(names.size(), 11u);
  EXPECT_TRUE(names.count("ms_semantic_attention/intra_inter_rn"));
  for (const Variant& v : fusion_table_variants()) EXPECT_EQ(v.attention, AttentionKind::kAvgPool);
}

TEST(OrderingChecks, GapsAndVerdicts) {
  std::vector<AblationRow> rows{row("feature_average/avg_pool", 0.70), row("late_fusion/avg_pool", 0.75),
                                row("ms_average/avg_pool", 0.75), row("ms_semantic_attention/avg_pool", 0.755),
                                row("late_fusion/intra_inter_rn", 0.74)};
  const std::vector<OrderingCheck> c = ordering_checks(rows);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_NEAR(c[0].gap, 5.0, 1e-9);
  EXPECT_TRUE(c[0].holds && !c[0].narrow);
  // A tie satisfies the non-strict claim but is below one point.
  EXPECT_EQ(c[1].gap, 0.0);
  EXPECT_TRUE(c[1].holds && c[1].narrow);
  EXPECT_TRUE(c[2].holds && c[2].narrow);
  EXPECT_FALSE(c[3].holds);

  AblationReport report;
  report.rows = rows;
  report.checks = c;
  EXPECT_FALSE(ordering_reproduced(report));
  std::ostringstream os;
  write_ablation_table(os, report);
  const std::string text = os.str();
  EXPECT_NE(text.find("feature_average/avg_pool < late_fusion/avg_pool: gap +5.00, holds\n"), std::string::npos);
  EXPECT_NE(text.find("late_fusion/avg_pool <= ms_average/avg_pool: gap +0.00, REPRODUCTION FAILURE, gap under 1 point"),
            std::string::npos);
  EXPECT_NE(text.find("late_fusion/intra_inter_rn: gap -1.00, REPRODUCTION FAILURE\n"), std::string::npos);

  report.rows[1].map = 0.72;
  report.rows[2].map = 0.74;
  report.rows[3].map = 0.76;
  report.rows[4].map = 0.74;
  report.checks = ordering_checks(report.rows);
  EXPECT_TRUE(ordering_reproduced(report));
}

TEST(OrderingChecks, MissingVariantsSkipped) {
  EXPECT_TRUE(ordering_checks({row("late_fusion/avg_pool", 0.5)}).empty());
}

TEST(RunAblation, RowPerVariantAndLog) {
  const RunConfig c = tiny();
  const Dataset data = generate(c.synthetic());
  const std::vector<Variant> variants{Variant::parse("feature_average/avg_pool"), Variant::parse("late_fusion/intra")};
  std::ostringstream log;
  AblationOptions options;
  options.frame_level_control = true;
  const AblationReport r = run_ablation(data, c, variants, &log, options);
  ASSERT_EQ(r.rows.size(), 2u);
  ASSERT_TRUE(r.control.has_value());
  for (const AblationRow& row : r.rows) {
    ASSERT_EQ(row.splits.size(), 1u);
    EXPECT_EQ(row.map, row.splits[0].map);
    EXPECT_GT(row.map, 0.0);
    EXPECT_LE(row.map, 1.0);
  }
  EXPECT_TRUE(r.checks.empty());

  // feature_average is the warm-up model evaluated as is.
  const Split sp = split(data, c.data.train_fraction, c.split_seed(0));
  const int classes = static_cast<int>(class_indices(data, sp.train).size());
  ModelConfig mc = c.model_for(classes);
  mc.fusion.variant = variants[0];
  const FusionModel model(mc);
  TrainConfig warm = c.training();
  warm.epochs = 0;
  const TrainResult w = train(data, sp.train, model, model.initial_parameters(c.init_seed()), warm);
  const RetrievalMetrics m = evaluate_split(model, w.params, data, sp, variants[0], c.eval.frames, c.eval.metric);
  EXPECT_EQ(r.rows[0].map, m.map);

  std::istringstream lines(log.str());
  std::string line;
  std::vector<std::string> logged;
  while (std::getline(lines, line)) logged.push_back(json::parse(line).at("variant").get<std::string>());
  EXPECT_EQ(logged, (std::vector<std::string>{"feature_average/avg_pool", "late_fusion/intra",
                                              "feature_average/avg_pool +frame-level epochs"}));
}

TEST(RunAblation, Errors) {
  RunConfig c = tiny();
  const Dataset data = generate(c.synthetic());
  EXPECT_THROW(run_ablation(data, c, {}), std::invalid_argument);
  c.data.train_fraction = 1.0;
  try {
    run_ablation(data, c, {Variant::parse("late_fusion/avg_pool")});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_EQ(std::string(e.what()), "empty test set");
  }
}

TEST(ReferenceBenchmark, Shape) {
  const RunConfig c = reference_benchmark();
  EXPECT_EQ(c.data.synthetic.num_identities, 32);
  EXPECT_EQ(c.data.num_splits, 3);
  EXPECT_EQ(c.train.epochs, 80);
  EXPECT_NO_THROW(c.validate());
}

TEST(Inspect, RecordLayout) {
  const RunConfig c = tiny();
  const Dataset data = generate(c.synthetic());
  const FusionModel model(c.model_for(8));
  const ParameterStore p = model.initial_parameters(3);
  const TrackletRecord& t = data[1];

  const Variant full = Variant::parse("ms_semantic_attention/intra_inter_rn");
  const json j = json::parse(attention_record(t, full, inspect_tracklet(model, p, t, full)));
  EXPECT_EQ(j.at("tracklet"), t.id);
  EXPECT_EQ(j.at("identity"), t.identity);
  EXPECT_EQ(j.at("variant"), full.name());
  EXPECT_EQ(j.at("flags").size(), 4u);
  ASSERT_EQ(j.at("branches").size(), 4u);
  for (const json& b : j.at("branches")) {
    double total = 0.0;
    for (double x : b.at("a_hat")) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(b.at("w").size(), 4u);
    EXPECT_EQ(b.at("relation").size(), 4u);
  }
  double u = 0.0;
  for (double x : j.at("u")) u += x;
  EXPECT_NEAR(u, 1.0, 1e-12);

  const Variant euclid = Variant::parse("late_fusion/inter_euclid");
  const json k = json::parse(attention_record(t, euclid, inspect_tracklet(model, p, t, euclid)));
  ASSERT_EQ(k.at("branches").size(), 1u);
  EXPECT_TRUE(k.at("branches")[0].at("w").is_null());
  EXPECT_TRUE(k.at("branches")[0].at("relation").is_null());
  EXPECT_EQ(k.at("branches")[0].at("v").size(), 4u);
}

TEST(GradCheckSuite, EveryCheckPasses) {
  ModelConfig mc;
  mc.backbone.channels = {4, 4, 8, 8};
  mc.backbone.embed_dim = 16;
  mc.attention = {6, 8};
  std::vector<std::string> seen;
  const std::vector<GradCheckReport> reports =
      run_gradcheck_suite(mc, GradCheckSuiteOptions{}, [&](const GradCheckReport& r) { seen.push_back(r.name); });
  ASSERT_EQ(seen.size(), reports.size());
  EXPECT_EQ(reports.back().name, "forward_pipeline/ms_semantic_attention/intra_inter_rn");
  for (const GradCheckReport& r : reports) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " " << r.worst_coordinate;
    EXPECT_GT(r.checked, 0) << r.name;
  }
  EXPECT_EQ(max_relative_error(reports), std::max_element(reports.begin(), reports.end(), [](auto& a, auto& b) {
                                           return a.max_rel_error < b.max_rel_error;
                                         })->max_rel_error);
}

}  // namespace
}  // namespace tfuse
