#include "opembed/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>

namespace opembed {

std::string to_string(TaskKind t) {
  switch (t) {
  case TaskKind::Admission:
    return "admission";
  case TaskKind::CardBoost:
    return "card";
  case TaskKind::UserId:
    return "user";
  }
  return "admission";
}

TaskKind task_kind_from_string(const std::string &s) {
  if (s == "admission")
    return TaskKind::Admission;
  if (s == "card" || s == "card_boost")
    return TaskKind::CardBoost;
  if (s == "user" || s == "user_id")
    return TaskKind::UserId;
  throw Error("usage", "unknown task '" + s + "' (expected admission, card or user)");
}

void TaskSpec::validate() const {
  if (!(admission_percentile > 0.0 && admission_percentile < 100.0))
    throw Error("config", "admission percentile must be in (0, 100)");
  if (!(card_factor > 1.0))
    throw Error("config", "cardinality factor must be > 1");
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty())
    throw Error("coverage", "percentile of an empty set");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

std::vector<double> latencies(const Corpus &corpus) {
  std::vector<double> out;
  for (const auto &op : walk_operators(corpus)) {
    if (!op.node->actual_latency_ms)
      throw Error("coverage", "admission task needs actual_latency_ms on every operator (missing in query '" +
                                  corpus.records[op.record_index].query_id + "', operator " +
                                  std::to_string(op.node_index) + ")");
    out.push_back(*op.node->actual_latency_ms);
  }
  return out;
}

} // namespace

OperatorLabels label_admission_with_threshold(const Corpus &corpus, double threshold) {
  OperatorLabels out;
  out.classes = {"normal", "slow"};
  out.threshold = threshold;
  for (double l : latencies(corpus))
    out.labels.push_back(l > threshold ? 1 : 0);
  return out;
}

OperatorLabels label_admission(const Corpus &corpus, double percentile) {
  return label_admission_with_threshold(corpus, nearest_rank_percentile(latencies(corpus), percentile));
}

CardLabel classify_cardinality(double est, double actual, double f) {
  if (est == 0.0 || actual == 0.0) {
    est += 1.0;
    actual += 1.0;
  }
  if (est >= f * actual)
    return CardLabel::Over;
  if (actual >= f * est)
    return CardLabel::Under;
  return CardLabel::Correct;
}

OperatorLabels label_card(const Corpus &corpus, double factor) {
  OperatorLabels out;
  out.classes = {"under", "correct", "over"};
  for (const auto &op : walk_operators(corpus)) {
    if (!op.node->actual_rows)
      throw Error("coverage", "cardinality task needs actual_rows on every operator (missing in query '" +
                                  corpus.records[op.record_index].query_id + "', operator " +
                                  std::to_string(op.node_index) + ")");
    out.labels.push_back(static_cast<int>(classify_cardinality(op.node->plan_rows, *op.node->actual_rows, factor)));
  }
  return out;
}

std::vector<std::string> user_vocabulary(const Corpus &corpus) {
  std::set<std::string> users;
  for (const auto &r : corpus.records) {
    if (!r.user_label)
      throw Error("coverage", "user task needs a user label on every query (missing on '" + r.query_id + "')");
    users.insert(*r.user_label);
  }
  return {users.begin(), users.end()};
}

OperatorLabels label_user(const Corpus &corpus, const std::vector<std::string> *classes) {
  OperatorLabels out;
  out.classes = classes ? *classes : user_vocabulary(corpus);
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < out.classes.size(); ++i)
    index[out.classes[i]] = static_cast<int>(i);
  for (const auto &op : walk_operators(corpus)) {
    const auto &rec = corpus.records[op.record_index];
    if (!rec.user_label)
      throw Error("coverage", "user task needs a user label on every query (missing on '" + rec.query_id + "')");
    auto it = index.find(*rec.user_label);
    if (it == index.end())
      throw Error("coverage", "user '" + *rec.user_label + "' is not in the class vocabulary");
    out.labels.push_back(it->second);
  }
  return out;
}

std::string to_string(FoldStrategy s) {
  switch (s) {
  case FoldStrategy::ByGroup:
    return "by_group";
  case FoldStrategy::Temporal:
    return "temporal";
  case FoldStrategy::Random:
    return "random";
  }
  return "random";
}

FoldStrategy fold_strategy_from_string(const std::string &s) {
  if (s == "by_group")
    return FoldStrategy::ByGroup;
  if (s == "temporal")
    return FoldStrategy::Temporal;
  if (s == "random")
    return FoldStrategy::Random;
  throw Error("usage", "unknown fold strategy '" + s + "' (expected by_group, temporal or random)");
}

FoldPlan make_folds(const Corpus &corpus, FoldStrategy strategy, std::uint64_t seed, std::size_t n_folds) {
  const std::size_t n = corpus.records.size();
  if (n_folds < 2)
    throw Error("config", "need at least two folds");
  if (n < n_folds)
    throw Error("config", "corpus has fewer queries than folds");
  FoldPlan plan;
  plan.strategy = strategy;
  plan.seed = seed;
  plan.folds.resize(n_folds);
  Rng rng(seed);

  switch (strategy) {
  case FoldStrategy::ByGroup: {
    auto groups = user_vocabulary(corpus);
    if (groups.size() < n_folds)
      throw Error("config", "by_group folds need at least " + std::to_string(n_folds) + " distinct groups, found " +
                                std::to_string(groups.size()));
    rng.shuffle(groups);
    std::map<std::string, std::size_t> fold_of;
    for (std::size_t g = 0; g < groups.size(); ++g)
      fold_of[groups[g]] = g % n_folds;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t f = fold_of.at(*corpus.records[i].user_label);
      for (std::size_t k = 0; k < n_folds; ++k)
        (k == f ? plan.folds[k].train : plan.folds[k].test).push_back(i);
    }
    break;
  }
  case FoldStrategy::Temporal: {
    const std::size_t window = std::max<std::size_t>(1, n / n_folds);
    for (std::size_t k = 0; k < n_folds; ++k) {
      std::size_t start = k * n / (n_folds * n_folds);
      std::size_t end = std::min(n, start + window);
      for (std::size_t i = start; i < end; ++i)
        plan.folds[k].train.push_back(i);
      for (std::size_t i = end; i < n; ++i)
        plan.folds[k].test.push_back(i);
    }
    break;
  }
  case FoldStrategy::Random: {
    std::vector<std::size_t> perm = iota_indices(n);
    rng.shuffle(perm);
    std::vector<std::size_t> fold_of(n);
    for (std::size_t j = 0; j < n; ++j)
      fold_of[perm[j]] = j * n_folds / n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n_folds; ++k)
        (k == fold_of[i] ? plan.folds[k].train : plan.folds[k].test).push_back(i);
    break;
  }
  }
  for (std::size_t k = 0; k < n_folds; ++k)
    if (plan.folds[k].train.empty() || plan.folds[k].test.empty())
      throw Error("config", "fold " + std::to_string(k) + " has an empty train or test side");
  return plan;
}

std::string FeaturizationSpec::name() const {
  switch (kind) {
  case Kind::Sparse:
    return "sparse";
  case Kind::Neural:
    return "neural-" + std::to_string(dim);
  case Kind::Pca:
    return "pca-" + std::to_string(dim);
  case Kind::Fa:
    return "fa-" + std::to_string(dim);
  }
  return "sparse";
}

FeaturizationSpec FeaturizationSpec::parse(const std::string &s) {
  FeaturizationSpec f;
  if (s == "sparse")
    return f;
  auto dash = s.find('-');
  std::string head = s.substr(0, dash);
  std::size_t dim = 32;
  if (dash != std::string::npos) {
    try {
      std::size_t used = 0;
      dim = std::stoul(s.substr(dash + 1), &used);
      if (used != s.size() - dash - 1 || dim == 0)
        throw std::invalid_argument("dim");
    } catch (const std::exception &) {
      throw Error("usage", "bad featurization '" + s + "'");
    }
  }
  if (head == "neural")
    f.kind = Kind::Neural;
  else if (head == "pca")
    f.kind = Kind::Pca;
  else if (head == "fa")
    f.kind = Kind::Fa;
  else
    throw Error("usage", "unknown featurization '" + s + "' (expected sparse, neural-<d>, pca-<k> or fa-<k>)");
  f.dim = dim;
  return f;
}

std::size_t FeaturePipeline::output_dim() const {
  if (encoder)
    return encoder->embedding_dim();
  if (pca)
    return pca->output_dim();
  if (fa)
    return fa->output_dim();
  return schema ? schema->total_dim() : 0;
}

Vector FeaturePipeline::apply_sparse(const Vector &sparse) const {
  if (encoder)
    return (*encoder)(sparse);
  if (pca)
    return transform(*pca, sparse);
  if (fa)
    return transform(*fa, sparse);
  return sparse;
}

Vector FeaturePipeline::apply(const PlanNode &node) const { return apply_sparse(encode(*schema, node)); }

Matrix FeaturePipeline::apply_corpus(const Corpus &corpus) const {
  Matrix sparse = encode_corpus(*schema, corpus);
  if (encoder)
    return Matrix((*encoder)(Matrix(sparse.transpose())).transpose());
  if (pca)
    return transform(*pca, sparse);
  if (fa)
    return transform(*fa, sparse);
  return sparse;
}

bool flag_query(const Classifier &clf, const FeaturePipeline &features, const QueryRecord &query) {
  Corpus one;
  one.records.push_back(query);
  for (const auto &op : walk_operators(one))
    if (clf.predict(features.apply(*op.node)) == 1)
      return true;
  return false;
}

std::unique_ptr<Classifier> train_classifier(ModelKind kind, const LabeledSet &set, const ModelParams &params) {
  switch (kind) {
  case ModelKind::LogReg:
    return train_logreg(set, params.logreg);
  case ModelKind::Knn:
    return train_knn(set, params.knn);
  case ModelKind::RandomForest:
    return train_rf(set, params.rf);
  case ModelKind::LinearSvm:
    return train_linsvm(set, params.svm);
  case ModelKind::Majority:
    return train_majority(set);
  }
  throw Error("usage", "unknown model kind");
}

const CellSummary *EvalReport::cell(const std::string &featurization, ModelKind model) const {
  for (const auto &c : cells)
    if (c.featurization == featurization && c.model == model)
      return &c;
  return nullptr;
}

namespace {

double majority_share(const std::vector<int> &labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (int l : labels)
    counts[static_cast<std::size_t>(l)]++;
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
         static_cast<double>(labels.size());
}

struct FoldData {
  std::shared_ptr<const FeatureSchema> schema;
  Corpus train, test;
  OperatorLabels train_labels, test_labels;
  Matrix train_sparse, test_sparse;
  std::vector<OperatorRef> test_ops;
};

OperatorLabels labels_for(const Corpus &c, const TaskSpec &task, const std::vector<std::string> &users,
                          double threshold) {
  switch (task.task) {
  case TaskKind::Admission:
    return label_admission_with_threshold(c, threshold);
  case TaskKind::CardBoost:
    return label_card(c, task.card_factor);
  case TaskKind::UserId:
    return label_user(c, &users);
  }
  throw Error("usage", "unknown task");
}

using EncoderCache = std::map<std::string, std::shared_ptr<const Encoder>>;

std::shared_ptr<const Encoder> fit_encoder(const EvalConfig &cfg, std::size_t dim, const FeatureSchema &schema,
                                           const Corpus &unlabeled) {
  HourglassSpec hs = cfg.hourglass;
  hs.embedding_dim = dim;
  EmbeddingNetwork net = build_hourglass(hs, schema);
  train_embedding(net, extract_triples(schema, unlabeled), cfg.embedding_sgd);
  return std::make_shared<const Encoder>(cut_off(net));
}

std::vector<FoldResult> run_fold(const Corpus &corpus, const EvalConfig &cfg, const Fold &fold, std::size_t fold_index,
                                 const std::vector<std::string> &users, std::shared_ptr<const FeatureSchema> full_schema,
                                 const EncoderCache &shared_encoders) {
  FoldData d;
  d.train = select_records(corpus, fold.train);
  d.test = select_records(corpus, fold.test);
  d.schema = cfg.embedding_from_full_log ? full_schema : std::make_shared<const FeatureSchema>(build_schema(d.train));
  double threshold = 0.0;
  if (cfg.task.task == TaskKind::Admission)
    threshold = label_admission(d.train, cfg.task.admission_percentile).threshold;
  d.train_labels = labels_for(d.train, cfg.task, users, threshold);
  d.test_labels = labels_for(d.test, cfg.task, users, threshold);
  d.train_sparse = encode_corpus(*d.schema, d.train);
  d.test_sparse = encode_corpus(*d.schema, d.test);
  d.test_ops = walk_operators(d.test);
  const std::size_t n_classes = d.train_labels.classes.size();

  std::vector<FoldResult> results;
  for (const auto &fname : cfg.featurizations) {
    FeaturizationSpec fs = FeaturizationSpec::parse(fname);
    FeaturePipeline pipe;
    pipe.spec = fs;
    pipe.schema = d.schema;
    switch (fs.kind) {
    case FeaturizationSpec::Kind::Sparse:
      break;
    case FeaturizationSpec::Kind::Neural: {
      auto it = shared_encoders.find(fs.name());
      pipe.encoder = it != shared_encoders.end() ? it->second : fit_encoder(cfg, fs.dim, *d.schema, d.train);
      break;
    }
    case FeaturizationSpec::Kind::Pca:
      pipe.pca = std::make_shared<const PcaModel>(fit_pca(d.train_sparse, std::min<std::size_t>(fs.dim, d.schema->total_dim())));
      break;
    case FeaturizationSpec::Kind::Fa:
      pipe.fa = std::make_shared<const FaModel>(fit_fa(d.train_sparse, std::min<std::size_t>(fs.dim, d.schema->total_dim())));
      break;
    }
    auto transform_rows = [&](const Matrix &sparse) -> Matrix {
      if (pipe.encoder)
        return Matrix((*pipe.encoder)(Matrix(sparse.transpose())).transpose());
      if (pipe.pca)
        return transform(*pipe.pca, sparse);
      if (pipe.fa)
        return transform(*pipe.fa, sparse);
      return sparse;
    };
    LabeledSet train_set{transform_rows(d.train_sparse), d.train_labels.labels, d.train_labels.classes};
    Matrix test_x = transform_rows(d.test_sparse);

    for (ModelKind mk : cfg.models) {
      auto clf = train_classifier(mk, train_set, cfg.params);
      FoldResult r;
      r.task = cfg.task.task;
      r.featurization = fs.name();
      r.model = mk;
      r.fold = fold_index;
      r.train_rows = train_set.size();
      r.test_rows = d.test_labels.labels.size();
      std::vector<int> predicted(r.test_rows);
      double total_ms = 0.0;
      for (std::size_t i = 0; i < r.test_rows; ++i) {
        Vector x = test_x.row(static_cast<Eigen::Index>(i)).transpose();
        auto t0 = std::chrono::steady_clock::now();
        predicted[i] = clf->predict(x);
        total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      r.mean_latency_ms = total_ms / static_cast<double>(r.test_rows);
      std::vector<std::size_t> per_class(n_classes, 0), hits(n_classes, 0);
      for (std::size_t i = 0; i < r.test_rows; ++i) {
        auto y = static_cast<std::size_t>(d.test_labels.labels[i]);
        per_class[y]++;
        if (predicted[i] == d.test_labels.labels[i]) {
          ++r.correct;
          hits[y]++;
        }
      }
      r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.test_rows);
      r.prior = majority_share(d.test_labels.labels, n_classes);
      for (std::size_t c = 0; c < n_classes; ++c)
        r.recall.push_back(per_class[c] ? static_cast<double>(hits[c]) / static_cast<double>(per_class[c])
                                        : std::numeric_limits<double>::quiet_NaN());
      if (cfg.task.task == TaskKind::Admission) {
        std::vector<bool> flagged(d.test.records.size(), false), actual(d.test.records.size(), false);
        for (std::size_t i = 0; i < r.test_rows; ++i) {
          std::size_t q = d.test_ops[i].record_index;
          flagged[q] = flagged[q] || predicted[i] == 1;
          actual[q] = actual[q] || d.test_labels.labels[i] == 1;
        }
        std::size_t agree = 0, positives = 0;
        for (std::size_t q = 0; q < flagged.size(); ++q) {
          agree += flagged[q] == actual[q];
          positives += actual[q];
        }
        const auto nq = static_cast<double>(flagged.size());
        r.query_accuracy = static_cast<double>(agree) / nq;
        r.query_prior = std::max(static_cast<double>(positives), nq - static_cast<double>(positives)) / nq;
      }
      results.push_back(std::move(r));
    }
  }
  return results;
}

} // namespace

EvalReport evaluate(const Corpus &corpus, const EvalConfig &cfg, const FoldPlan &plan) {
  cfg.task.validate();
  if (cfg.featurizations.empty() || cfg.models.empty())
    throw Error("config", "evaluation needs at least one featurization and one model");
  for (const auto &f : cfg.featurizations)
    FeaturizationSpec::parse(f);
  // fail fast on missing ground truth
  std::vector<std::string> users;
  switch (cfg.task.task) {
  case TaskKind::Admission:
    label_admission(corpus, cfg.task.admission_percentile);
    break;
  case TaskKind::CardBoost:
    label_card(corpus, cfg.task.card_factor);
    break;
  case TaskKind::UserId:
    users = user_vocabulary(corpus);
    break;
  }
  std::shared_ptr<const FeatureSchema> full_schema;
  EncoderCache shared_encoders;
  if (cfg.embedding_from_full_log) {
    // fold-independent, so fit once
    full_schema = std::make_shared<const FeatureSchema>(build_schema(corpus));
    for (const auto &f : cfg.featurizations) {
      FeaturizationSpec fs = FeaturizationSpec::parse(f);
      if (fs.kind == FeaturizationSpec::Kind::Neural && !shared_encoders.contains(fs.name()))
        shared_encoders[fs.name()] = fit_encoder(cfg, fs.dim, *full_schema, corpus);
    }
  }

  std::vector<std::vector<FoldResult>> per_fold(plan.folds.size());
  if (cfg.jobs > 1) {
    std::vector<std::future<std::vector<FoldResult>>> futures;
    std::size_t next = 0;
    while (next < plan.folds.size() || !futures.empty()) {
      while (futures.size() < cfg.jobs && next < plan.folds.size()) {
        std::size_t k = next++;
        futures.push_back(std::async(std::launch::async, [&, k] {
          return run_fold(corpus, cfg, plan.folds[k], k, users, full_schema, shared_encoders);
        }));
      }
      auto results = futures.front().get();
      std::size_t k = results.empty() ? 0 : results.front().fold;
      per_fold[k] = std::move(results);
      futures.erase(futures.begin());
    }
  } else {
    for (std::size_t k = 0; k < plan.folds.size(); ++k)
      per_fold[k] = run_fold(corpus, cfg, plan.folds[k], k, users, full_schema, shared_encoders);
  }

  EvalReport report;
  report.strategy = plan.strategy;
  switch (cfg.task.task) {
  case TaskKind::Admission:
    report.classes = {"normal", "slow"};
    break;
  case TaskKind::CardBoost:
    report.classes = {"under", "correct", "over"};
    break;
  case TaskKind::UserId:
    report.classes = users;
    break;
  }
  for (auto &f : per_fold)
    for (auto &r : f)
      report.folds.push_back(std::move(r));

  for (const auto &fname : cfg.featurizations)
    for (ModelKind mk : cfg.models) {
      CellSummary cell;
      cell.task = cfg.task.task;
      cell.featurization = FeaturizationSpec::parse(fname).name();
      cell.model = mk;
      std::vector<double> acc, prior, lat, qacc, qprior;
      for (const auto &r : report.folds)
        if (r.featurization == cell.featurization && r.model == mk) {
          acc.push_back(r.accuracy);
          prior.push_back(r.prior);
          lat.push_back(r.mean_latency_ms);
          if (r.query_accuracy) {
            qacc.push_back(*r.query_accuracy);
            qprior.push_back(*r.query_prior);
          }
        }
      cell.median_accuracy = median(acc);
      cell.median_prior = median(prior);
      cell.median_latency_ms = median(lat);
      if (!qacc.empty()) {
        cell.median_query_accuracy = median(qacc);
        cell.median_query_prior = median(qprior);
      }
      report.cells.push_back(cell);
    }
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v))
    return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

} // namespace

void write_report_csv(std::ostream &out, const EvalReport &report) {
  out << "task,featurization,model,fold,train_rows,test_rows,correct,accuracy,prior,query_accuracy,query_prior";
  for (const auto &c : report.classes)
    out << ",recall_" << c;
  out << '\n';
  for (const auto &r : report.folds) {
    out << to_string(r.task) << ',' << r.featurization << ',' << to_string(r.model) << ',' << r.fold << ','
        << r.train_rows << ',' << r.test_rows << ',' << r.correct << ',' << fmt(r.accuracy) << ',' << fmt(r.prior)
        << ',' << (r.query_accuracy ? fmt(*r.query_accuracy) : "") << ','
        << (r.query_prior ? fmt(*r.query_prior) : "");
    for (double rc : r.recall)
      out << ',' << fmt(rc);
    out << '\n';
  }
}

void write_cells_csv(std::ostream &out, const EvalReport &report) {
  out << "task,featurization,model,median_accuracy,median_prior,median_query_accuracy,median_query_prior\n";
  for (const auto &c : report.cells)
    out << to_string(c.task) << ',' << c.featurization << ',' << to_string(c.model) << ','
        << fmt(c.median_accuracy) << ',' << fmt(c.median_prior) << ','
        << (c.median_query_accuracy ? fmt(*c.median_query_accuracy) : "") << ','
        << (c.median_query_prior ? fmt(*c.median_query_prior) : "") << '\n';
}

void write_timing_csv(std::ostream &out, const EvalReport &report) {
  out << "task,featurization,model,fold,mean_latency_ms\n";
  char buf[32];
  for (const auto &r : report.folds) {
    std::snprintf(buf, sizeof buf, "%.6g", r.mean_latency_ms);
    out << to_string(r.task) << ',' << r.featurization << ',' << to_string(r.model) << ',' << r.fold << ',' << buf
        << '\n';
  }
}

void write_report_table(std::ostream &out, const EvalReport &report) {
  out << "folds: " << to_string(report.strategy) << ", median over " << (report.cells.empty() ? 0 : report.folds.size() / report.cells.size())
      << " folds\n";
  out << std::left << std::setw(10) << "task" << std::setw(14) << "features" << std::setw(10) << "model"
      << std::right << std::setw(10) << "accuracy" << std::setw(10) << "prior" << std::setw(12) << "query acc"
      << std::setw(14) << "latency ms" << '\n';
  for (const auto &c : report.cells) {
    out << std::left << std::setw(10) << to_string(c.task) << std::setw(14) << c.featurization << std::setw(10)
        << to_string(c.model) << std::right << std::fixed << std::setprecision(4) << std::setw(10)
        << c.median_accuracy << std::setw(10) << c.median_prior << std::setw(12)
        << (c.median_query_accuracy ? fmt(*c.median_query_accuracy).substr(0, 6) : "-") << std::setw(14)
        << std::setprecision(5) << c.median_latency_ms << '\n';
  }
  out.unsetf(std::ios::fixed);
}

} // namespace opembed
