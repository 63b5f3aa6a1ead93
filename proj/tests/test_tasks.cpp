#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "opembed/synth.hpp"
#include "opembed/tasks.hpp"

using namespace opembed;

namespace {

PlanNode leaf(double est, std::optional<double> actual, std::optional<double> latency) {
  PlanNode n;
  n.node_type = "SeqScan";
  n.plan_width = 8;
  n.plan_rows = est;
  n.total_cost = est;
  n.relation_name = "r";
  n.actual_rows = actual;
  n.actual_latency_ms = latency;
  return n;
}

Corpus flat(const std::vector<double> &latencies) {
  Corpus c;
  for (std::size_t i = 0; i < latencies.size(); ++i)
    c.records.push_back({"q" + std::to_string(i), "u" + std::to_string(i % 3), leaf(10, 10, latencies[i])});
  return c;
}

Corpus synth(std::size_t n) {
  SynthConfig cfg;
  cfg.n_queries = n;
  return generate(cfg);
}

} // namespace

TEST_CASE("admission threshold is the nearest-rank percentile") {
  std::vector<double> lat;
  for (int i = 1; i <= 100; ++i)
    lat.push_back(i);
  std::reverse(lat.begin(), lat.end());
  OperatorLabels l = label_admission(flat(lat), 95.0);
  CHECK(l.threshold == 95.0);
  CHECK(std::count(l.labels.begin(), l.labels.end(), 1) == 5);
  CHECK(l.classes == std::vector<std::string>{"normal", "slow"});
  CHECK(nearest_rank_percentile({3, 1, 2}, 50.0) == 2.0);
  CHECK(nearest_rank_percentile({3, 1, 2}, 0.0) == 1.0);

  OperatorLabels flat_l = label_admission(flat(std::vector<double>(40, 7.0)), 95.0);
  CHECK(std::count(flat_l.labels.begin(), flat_l.labels.end(), 1) == 0);
}

TEST_CASE("missing latency names the operator") {
  Corpus c = flat({1, 2, 3});
  c.records[1].root.actual_latency_ms.reset();
  try {
    label_admission(c, 95.0);
    FAIL("expected coverage error");
  } catch (const Error &e) {
    CHECK(e.code() == "coverage");
    CHECK(std::string(e.what()).find("q1") != std::string::npos);
  }
}

TEST_CASE("cardinality classes") {
  CHECK(classify_cardinality(100, 40, 2.0) == CardLabel::Over);
  CHECK(classify_cardinality(100, 90, 2.0) == CardLabel::Correct);
  CHECK(classify_cardinality(10, 25, 2.0) == CardLabel::Under);
  CHECK(classify_cardinality(100, 50, 2.0) == CardLabel::Over);
  CHECK(classify_cardinality(0, 0, 2.0) == CardLabel::Correct);
  CHECK(classify_cardinality(0, 1, 2.0) == CardLabel::Under);
  CHECK(classify_cardinality(3, 0, 2.0) == CardLabel::Over);
  Corpus c;
  c.records.push_back({"a", "u", leaf(100, 40, 1)});
  c.records.push_back({"b", "u", leaf(10, 25, 1)});
  OperatorLabels l = label_card(c, 2.0);
  CHECK(l.labels == std::vector<int>{2, 0});
}

TEST_CASE("user labels use a sorted vocabulary") {
  Corpus c = flat({1, 2, 3, 4});
  OperatorLabels l = label_user(c);
  CHECK(l.classes == std::vector<std::string>{"u0", "u1", "u2"});
  CHECK(l.labels == std::vector<int>{0, 1, 2, 0});
  c.records[2].user_label.reset();
  CHECK_THROWS_AS(label_user(c), Error);
}

TEST_CASE("fold invariants for every strategy") {
  SynthConfig sc;
  sc.n_queries = 100;
  sc.n_users = 6;
  Corpus c = generate(sc);
  for (auto strategy : {FoldStrategy::Random, FoldStrategy::Temporal, FoldStrategy::ByGroup}) {
    FoldPlan plan = make_folds(c, strategy, 3);
    CHECK(plan.folds.size() == 5);
    for (const auto &f : plan.folds) {
      std::set<std::size_t> tr(f.train.begin(), f.train.end()), te(f.test.begin(), f.test.end());
      CHECK(tr.size() == f.train.size());
      CHECK(te.size() == f.test.size());
      CHECK_FALSE(f.train.empty());
      CHECK_FALSE(f.test.empty());
      for (auto i : tr)
        CHECK(te.count(i) == 0);
      if (strategy == FoldStrategy::Temporal)
        CHECK(*std::min_element(f.test.begin(), f.test.end()) > *std::max_element(f.train.begin(), f.train.end()));
      if (strategy == FoldStrategy::ByGroup) {
        std::set<std::string> tu, su;
        for (auto i : f.train)
          tu.insert(*c.records[i].user_label);
        for (auto i : f.test)
          su.insert(*c.records[i].user_label);
        for (const auto &u : tu)
          CHECK(su.count(u) == 0);
      }
      if (strategy == FoldStrategy::Random) {
        CHECK(f.train.size() == 20);
        CHECK(f.test.size() == 80);
      }
    }
    FoldPlan again = make_folds(c, strategy, 3);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(again.folds[k].train == plan.folds[k].train);
      CHECK(again.folds[k].test == plan.folds[k].test);
    }
  }
  SynthConfig few;
  few.n_queries = 30;
  few.n_users = 2;
  CHECK_THROWS_AS(make_folds(generate(few), FoldStrategy::ByGroup, 1), Error);
}

TEST_CASE("random folds cover each record in exactly one train chunk") {
  FoldPlan plan = make_folds(synth(53), FoldStrategy::Random, 9);
  std::vector<int> seen(53, 0);
  for (const auto &f : plan.folds)
    for (auto i : f.train)
      seen[i]++;
  CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
}

TEST_CASE("featurization names parse and print") {
  for (std::string s : {"sparse", "neural-32", "pca-8", "fa-16"})
    CHECK(FeaturizationSpec::parse(s).name() == s);
  CHECK_THROWS_AS(FeaturizationSpec::parse("neural-x"), Error);
  CHECK_THROWS_AS(FeaturizationSpec::parse("lda-3"), Error);
}

TEST_CASE("majority baseline scores exactly the prior") {
  Corpus c = synth(80);
  EvalConfig cfg;
  cfg.task.task = TaskKind::CardBoost;
  cfg.featurizations = {"sparse", "pca-4"};
  cfg.models = {ModelKind::Majority, ModelKind::LogReg};
  EvalReport r = evaluate(c, cfg, make_folds(c, FoldStrategy::Random, 1));
  CHECK(r.folds.size() == 20);
  CHECK(r.cells.size() == 4);
  for (const auto &f : r.folds) {
    if (f.model == ModelKind::Majority)
      CHECK(f.accuracy == f.prior);
    CHECK(f.correct <= f.test_rows);
    CHECK(f.recall.size() == 3);
  }
  REQUIRE(r.cell("sparse", ModelKind::LogReg));
  CHECK(r.cell("sparse", ModelKind::LogReg)->median_accuracy >= r.cell("sparse", ModelKind::Majority)->median_accuracy);

  std::ostringstream a, b;
  write_report_csv(a, r);
  write_report_csv(b, evaluate(c, cfg, make_folds(c, FoldStrategy::Random, 1)));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("task,featurization,model,fold,", 0) == 0);
}

TEST_CASE("prior of a three-to-one split is 0.75") {
  // 4 test rows per fold: 3 "correct", 1 "over"
  Corpus c;
  for (int i = 0; i < 25; ++i)
    c.records.push_back({"q" + std::to_string(i), "u", leaf(100, i % 4 == 3 ? 10 : 100, 1)});
  FoldPlan plan;
  plan.folds.push_back({{0, 1, 2, 3, 4, 5, 6, 7}, {8, 9, 10, 11}});
  EvalConfig cfg;
  cfg.task.task = TaskKind::CardBoost;
  cfg.featurizations = {"sparse"};
  cfg.models = {ModelKind::Majority};
  EvalReport r = evaluate(c, cfg, plan);
  REQUIRE(r.folds.size() == 1);
  CHECK(r.folds[0].prior == 0.75);
  CHECK(r.folds[0].accuracy == 0.75);
}

TEST_CASE("admission verdicts flag a query when any operator is positive") {
  Corpus c = synth(5);
  auto schema = std::make_shared<const FeatureSchema>(build_schema(c));
  FeaturePipeline fp;
  fp.spec = FeaturizationSpec::parse("sparse");
  fp.schema = schema;
  Vector always(2), never(2);
  always << 0.0, 1.0;
  never << 1.0, 0.0;
  MajorityClass yes(always, schema->total_dim()), no(never, schema->total_dim());
  CHECK(flag_query(yes, fp, c.records[0]));
  CHECK_FALSE(flag_query(no, fp, c.records[0]));
}

TEST_CASE("admission evaluation reports query-level accuracy") {
  Corpus c = synth(100);
  EvalConfig cfg;
  cfg.task.task = TaskKind::Admission;
  cfg.featurizations = {"sparse"};
  cfg.models = {ModelKind::LogReg};
  EvalReport r = evaluate(c, cfg, make_folds(c, FoldStrategy::Temporal, 1));
  for (const auto &f : r.folds) {
    REQUIRE(f.query_accuracy.has_value());
    CHECK(*f.query_accuracy >= 0.0);
    CHECK(*f.query_accuracy <= 1.0);
  }
}
