#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opembed/classifiers.hpp"
#include "opembed/featurizer.hpp"
#include "opembed/hourglass.hpp"
#include "opembed/nn.hpp"
#include "opembed/plan.hpp"
#include "opembed/reducers.hpp"

namespace opembed {

enum class TaskKind { Admission, CardBoost, UserId };

std::string to_string(TaskKind t);
TaskKind task_kind_from_string(const std::string &s);

struct TaskSpec {
  TaskKind task = TaskKind::Admission;
  double admission_percentile = 95.0;
  double card_factor = 2.0;

  void validate() const;
};

/// Operator-level labels in `walk_operators` order.
struct OperatorLabels {
  std::vector<int> labels;
  std::vector<std::string> classes;
  double threshold = 0.0; // admission only
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double p);

/// Threshold from this corpus; label 1 ("slow") iff latency > threshold.
OperatorLabels label_admission(const Corpus &corpus, double percentile);
OperatorLabels label_admission_with_threshold(const Corpus &corpus, double threshold);

enum class CardLabel { Under = 0, Correct = 1, Over = 2 };
/// Over if est >= f * actual, under if actual >= f * est, else correct. When
/// either count is zero both sides are smoothed by +1 first.
CardLabel classify_cardinality(double estimated, double actual, double factor);
OperatorLabels label_card(const Corpus &corpus, double factor);

/// Classes are the distinct user labels in sorted order (pass `classes` to
/// fix the vocabulary from a larger corpus).
OperatorLabels label_user(const Corpus &corpus, const std::vector<std::string> *classes = nullptr);
std::vector<std::string> user_vocabulary(const Corpus &corpus);

enum class FoldStrategy { ByGroup, Temporal, Random };

std::string to_string(FoldStrategy s);
FoldStrategy fold_strategy_from_string(const std::string &s);

/// Record indices of one fold: train is about one fifth of the corpus.
struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  FoldStrategy strategy = FoldStrategy::Random;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

/// by_group: group key = user label, groups dealt to folds after a seeded
/// shuffle. temporal: fold k trains on the arrival window
/// [floor(k n / 25), +n/5) and tests on everything after it. random: seeded
/// permutation cut into five train chunks.
FoldPlan make_folds(const Corpus &corpus, FoldStrategy strategy, std::uint64_t seed, std::size_t n_folds = 5);

/// Description of one featurization: "sparse", "neural-<d>", "pca-<k>", "fa-<k>".
struct FeaturizationSpec {
  enum class Kind { Sparse, Neural, Pca, Fa } kind = Kind::Sparse;
  std::size_t dim = 0;

  std::string name() const;
  static FeaturizationSpec parse(const std::string &s);
};

/// Maps operators to task-model features: schema encoding followed by an
/// optional encoder or reducer.
struct FeaturePipeline {
  FeaturizationSpec spec;
  std::shared_ptr<const FeatureSchema> schema;
  std::shared_ptr<const Encoder> encoder;
  std::shared_ptr<const PcaModel> pca;
  std::shared_ptr<const FaModel> fa;

  std::size_t output_dim() const;
  Vector apply_sparse(const Vector &sparse) const;
  Vector apply(const PlanNode &node) const;
  /// Rows are operators in walk order.
  Matrix apply_corpus(const Corpus &corpus) const;
};

/// Admission verdict: flag iff any operator is predicted positive (class 1).
bool flag_query(const Classifier &clf, const FeaturePipeline &features, const QueryRecord &query);

struct ModelParams {
  LogRegParams logreg;
  KnnParams knn;
  ForestParams rf;
  SvmParams svm;
};

std::unique_ptr<Classifier> train_classifier(ModelKind kind, const LabeledSet &set, const ModelParams &params);

struct EvalConfig {
  TaskSpec task;
  std::vector<std::string> featurizations{"sparse", "neural-32", "pca-32", "fa-32"};
  std::vector<ModelKind> models{ModelKind::LogReg, ModelKind::Knn, ModelKind::RandomForest, ModelKind::LinearSvm};
  HourglassSpec hourglass;     // embedding_dim is overridden per neural featurization
  nn::SgdConfig embedding_sgd; // epochs default 100
  ModelParams params;
  bool embedding_from_full_log = false;
  std::size_t jobs = 1;
};

struct FoldResult {
  TaskKind task = TaskKind::Admission;
  std::string featurization;
  ModelKind model = ModelKind::LogReg;
  std::size_t fold = 0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double prior = 0.0;
  std::vector<double> recall; // per class; NaN when the class is absent from the test side
  double mean_latency_ms = 0.0;
  // admission only
  std::optional<double> query_accuracy;
  std::optional<double> query_prior;
};

struct CellSummary {
  TaskKind task = TaskKind::Admission;
  std::string featurization;
  ModelKind model = ModelKind::LogReg;
  double median_accuracy = 0.0;
  double median_prior = 0.0;
  double median_latency_ms = 0.0;
  std::optional<double> median_query_accuracy;
  std::optional<double> median_query_prior;
};

struct EvalReport {
  std::vector<std::string> classes;
  FoldStrategy strategy = FoldStrategy::Random;
  std::vector<FoldResult> folds;
  std::vector<CellSummary> cells;

  const CellSummary *cell(const std::string &featurization, ModelKind model) const;
};

/// Trains on each fold's train side and scores its test side. Schema stats,
/// label thresholds, reducers and encoders are fit on the train side only
/// (the encoder and schema use the whole corpus when
/// `embedding_from_full_log` is set).
EvalReport evaluate(const Corpus &corpus, const EvalConfig &config, const FoldPlan &plan);

/// Long-form per-fold CSV without timing columns (deterministic under a seed).
void write_report_csv(std::ostream &out, const EvalReport &report);
/// Per-cell medians, one row per (task, featurization, model).
void write_cells_csv(std::ostream &out, const EvalReport &report);
void write_timing_csv(std::ostream &out, const EvalReport &report);
void write_report_table(std::ostream &out, const EvalReport &report);

} // namespace opembed
