#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "opembed/classifiers.hpp"
#include "opembed/featurizer.hpp"
#include "opembed/hourglass.hpp"
#include "opembed/plan.hpp"
#include "opembed/reducers.hpp"
#include "opembed/store.hpp"
#include "opembed/synth.hpp"
#include "opembed/tasks.hpp"

using namespace opembed;
using nlohmann::json;

namespace {

std::string read_all(const std::string &path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("io", "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string &path, const std::string &text) {
  if (path.empty() || path == "-")
    std::cout << text << std::flush;
  else
    write_file_atomic(path, text);
}

Corpus read_corpus(const std::string &path) {
  std::vector<std::string> warnings;
  Corpus c = parse_corpus_text(read_all(path), &warnings);
  for (const auto &w : warnings)
    std::cerr << "warning: " << w << '\n';
  return c;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Operator-keyed numeric table with a JSON sidecar naming its provenance.
struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::size_t>> keys; // query_id, op_index
  Matrix rows;
  json meta = json::object();
};

std::string meta_path(const std::string &csv) { return csv + ".meta.json"; }

std::string table_csv(const FeatureTable &t) {
  std::ostringstream out;
  out << "query_id,op_index";
  for (const auto &c : t.columns)
    out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < t.keys.size(); ++i) {
    out << t.keys[i].first << ',' << t.keys[i].second;
    for (Eigen::Index j = 0; j < t.rows.cols(); ++j)
      out << ',' << fmt17(t.rows(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
  return out.str();
}

void write_table(const std::string &path, const FeatureTable &t) {
  if (path.empty() || path == "-")
    throw Error("usage", "feature tables need a file path (the provenance sidecar is written next to it)");
  write_file_atomic(path, table_csv(t));
  write_file_atomic(meta_path(path), t.meta.dump(2) + "\n");
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep))
    out.push_back(cur);
  if (!line.empty() && line.back() == sep)
    out.emplace_back();
  return out;
}

FeatureTable read_table(const std::string &path) {
  std::istringstream in(read_all(path));
  FeatureTable t;
  std::string line;
  if (!std::getline(in, line))
    throw Error("parse", "'" + path + "' is empty");
  auto header = split(line, ',');
  if (header.size() < 3 || header[0] != "query_id" || header[1] != "op_index")
    throw Error("parse", "'" + path + "' line 1: expected header query_id,op_index,<features...>");
  t.columns.assign(header.begin() + 2, header.end());
  std::vector<std::vector<double>> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw Error("parse", "'" + path + "' line " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    std::vector<double> row;
    try {
      t.keys.emplace_back(cells[0], std::stoul(cells[1]));
      for (std::size_t j = 2; j < cells.size(); ++j)
        row.push_back(std::stod(cells[j]));
    } catch (const std::exception &) {
      throw Error("parse", "'" + path + "' line " + std::to_string(lineno) + ": non-numeric field");
    }
    values.push_back(std::move(row));
  }
  t.rows.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values[i].size(); ++j)
      t.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i][j];
  std::ifstream side(meta_path(path));
  if (!side)
    throw Error("provenance", "missing sidecar '" + meta_path(path) + "'");
  try {
    t.meta = json::parse(side);
  } catch (const json::exception &e) {
    throw Error("parse", "'" + meta_path(path) + "': " + e.what());
  }
  return t;
}

std::vector<std::pair<std::string, std::size_t>> operator_keys(const Corpus &c) {
  std::vector<std::pair<std::string, std::size_t>> keys;
  for (const auto &op : walk_operators(c))
    keys.emplace_back(c.records[op.record_index].query_id, op.node_index);
  return keys;
}

std::string file_hash(const std::string &path) { return content_hash(read_all(path)); }

std::vector<std::size_t> parse_dims(const std::string &s) {
  std::vector<std::size_t> out;
  for (const auto &part : split(s, ',')) {
    try {
      std::size_t used = 0;
      unsigned long v = std::stoul(part, &used);
      if (used != part.size() || v == 0)
        throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception &) {
      throw Error("usage", "bad dimension list '" + s + "'");
    }
  }
  if (out.empty())
    throw Error("usage", "empty dimension list");
  return out;
}

// Loaded featurization matching a classifier or CSV provenance.
struct LoadedFeatures {
  FeaturePipeline pipeline;
  std::string source_hash;
};

LoadedFeatures load_features(const FeatureSchema &schema, const std::string &encoder_path,
                             const std::string &reducer_path) {
  LoadedFeatures f;
  f.pipeline.schema = std::make_shared<const FeatureSchema>(schema);
  if (!encoder_path.empty() && !reducer_path.empty())
    throw Error("usage", "pass at most one of --encoder and --reducer");
  if (!encoder_path.empty()) {
    auto path = resolve_store_path(encoder_path);
    Encoder e = encoder_from_bundle(load_bundle(path, BundleKind::Encoder));
    require_schema_hash(e.schema_hash, schema.hash(), "encoder '" + path.string() + "'");
    f.pipeline.spec = {FeaturizationSpec::Kind::Neural, e.embedding_dim()};
    f.pipeline.encoder = std::make_shared<const Encoder>(std::move(e));
    f.source_hash = file_hash(path.string());
  } else if (!reducer_path.empty()) {
    auto path = resolve_store_path(reducer_path);
    Bundle b = load_bundle(path);
    require_schema_hash(b.schema_hash, schema.hash(), "reducer '" + path.string() + "'");
    if (b.kind == BundleKind::Pca) {
      auto m = pca_from_bundle(b);
      f.pipeline.spec = {FeaturizationSpec::Kind::Pca, m.output_dim()};
      f.pipeline.pca = std::make_shared<const PcaModel>(std::move(m));
    } else if (b.kind == BundleKind::Fa) {
      auto m = fa_from_bundle(b);
      f.pipeline.spec = {FeaturizationSpec::Kind::Fa, m.output_dim()};
      f.pipeline.fa = std::make_shared<const FaModel>(std::move(m));
    } else {
      throw Error("bundle", "'" + path.string() + "' is a " + to_string(b.kind) + " bundle, expected pca or fa");
    }
    f.source_hash = file_hash(path.string());
  } else {
    f.pipeline.spec = {FeaturizationSpec::Kind::Sparse, schema.total_dim()};
  }
  return f;
}

FeatureSchema load_schema(const std::string &path) {
  return schema_from_bundle(load_bundle(resolve_store_path(path), BundleKind::Schema));
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  std::uint64_t seed = 7;
  std::size_t queries = 400;
  std::string out = "-";
  std::string config;
  std::string manifest;
};

void cmd_synth(const SynthArgs &a) {
  SynthConfig cfg;
  if (!a.config.empty()) {
    try {
      cfg = SynthConfig::from_json(json::parse(read_all(a.config)));
    } catch (const json::exception &e) {
      throw Error("parse", "synth config '" + a.config + "': " + e.what());
    }
  }
  cfg.seed = a.seed;
  cfg.n_queries = a.queries;
  Corpus c = generate(cfg);
  std::string text = corpus_to_json(c).dump(1) + "\n";
  write_output(a.out, text);
  std::string manifest = a.manifest;
  if (manifest.empty() && a.out != "-")
    manifest = a.out + ".manifest.json";
  if (!manifest.empty()) {
    GroundTruth gt = ground_truth(cfg);
    json m{{"generator", "opembed-synth"},
           {"config", cfg.to_json()},
           {"corpus_hash", content_hash(text)},
           {"queries", gt.queries},
           {"operators", gt.operators},
           {"operators_by_type", gt.operators_by_type},
           {"merge_joins", gt.merge_joins},
           {"merge_joins_with_two_sorts", gt.merge_joins_with_two_sorts},
           {"hash_joins", gt.hash_joins},
           {"hash_joins_with_hash", gt.hash_joins_with_hash},
           {"description", describe(cfg)}};
    write_file_atomic(manifest, m.dump(2) + "\n");
  }
}

struct TrainEmbeddingArgs {
  std::string corpus = "-";
  std::string encoder_out = "encoder.bundle";
  std::string schema_out = "schema.bundle";
  std::size_t embedding_dim = 32;
  std::string hidden = "256,256,128,128,64,64";
  std::size_t epochs = 100;
  double lr = 0.01;
  std::size_t batch = 64;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  bool masked = false;
  bool pre_activation = false;
  std::string loss_trace;
};

void cmd_train_embedding(const TrainEmbeddingArgs &a) {
  Corpus c = read_corpus(a.corpus);
  FeatureSchema schema = build_schema(c);
  HourglassSpec spec;
  spec.hidden_dims = parse_dims(a.hidden);
  spec.embedding_dim = a.embedding_dim;
  spec.seed = a.seed;
  EmbeddingNetwork net = build_hourglass(spec, schema);
  nn::SgdConfig sgd;
  sgd.learning_rate = a.lr;
  sgd.batch_size = a.batch;
  sgd.epochs = a.epochs;
  sgd.seed = a.seed;
  sgd.momentum = a.momentum;
  HeadLossOptions opts;
  opts.missing_child = a.masked ? MissingChildMode::Masked : MissingChildMode::ZeroTarget;
  auto result = train_embedding(net, extract_triples(schema, c), sgd, opts);
  Encoder enc = cut_off(net, a.pre_activation ? EmbeddingOutput::PreActivation : EmbeddingOutput::PostActivation);

  json echo{{"seed", a.seed},
            {"embedding_dim", a.embedding_dim},
            {"hidden", spec.hidden_dims},
            {"epochs", a.epochs},
            {"learning_rate", a.lr},
            {"batch_size", a.batch},
            {"momentum", a.momentum},
            {"missing_child", a.masked ? "masked" : "zero_target"},
            {"corpus_hash", content_hash(corpus_to_json(c).dump())},
            {"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()}};
  save_bundle(resolve_store_path(a.schema_out), make_schema_bundle(schema, json{{"corpus_hash", echo["corpus_hash"]}}));
  save_bundle(resolve_store_path(a.encoder_out), make_encoder_bundle(enc, echo));
  if (!a.loss_trace.empty()) {
    std::ostringstream out;
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
      out << e + 1 << ',' << fmt17(result.loss_trace[e]) << '\n';
    write_output(a.loss_trace, out.str());
  }
  std::cerr << "schema " << schema.hash() << " (" << schema.total_dim() << " slots), final loss "
            << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << '\n';
}

struct EncodeArgs {
  std::string corpus = "-";
  std::string schema;
  std::string encoder;
  std::string out;
};

// `encode` writes the sparse table, `embed` the encoder output.
void cmd_featurize(const EncodeArgs &a, bool neural) {
  Corpus c = read_corpus(a.corpus);
  FeatureSchema schema = load_schema(a.schema);
  LoadedFeatures f = load_features(schema, neural ? a.encoder : "", "");
  EncodeStats stats;
  Matrix sparse = encode_corpus(schema, c, &stats);
  if (stats.unknown_categoricals)
    std::cerr << "warning: " << stats.unknown_categoricals << " categorical values outside the schema vocabulary\n";
  FeatureTable t;
  t.keys = operator_keys(c);
  if (neural) {
    t.rows = Matrix((*f.pipeline.encoder)(Matrix(sparse.transpose())).transpose());
    for (std::size_t j = 0; j < f.pipeline.output_dim(); ++j)
      t.columns.push_back("e" + std::to_string(j));
  } else {
    t.rows = sparse;
    t.columns = schema.slot_names();
  }
  t.meta = json{{"featurization", f.pipeline.spec.name()},
                {"schema_hash", schema.hash()},
                {"feature_source", f.source_hash},
                {"columns", t.columns.size()}};
  write_table(a.out, t);
}

struct ReduceArgs {
  std::string input;
  std::string method;
  std::size_t dim = 32;
  std::string model;
  std::string model_out;
  std::string out;
};

void cmd_reduce(const ReduceArgs &a) {
  FeatureTable in = read_table(a.input);
  if (in.meta.value("featurization", "") != "sparse")
    throw Error("provenance", "reduce expects a sparse table, '" + a.input + "' holds " +
                                  in.meta.value("featurization", std::string("unknown")));
  std::string schema_hash = in.meta.value("schema_hash", "");
  Bundle bundle;
  if (!a.model.empty()) {
    auto path = resolve_store_path(a.model);
    bundle = load_bundle(path);
    require_schema_hash(bundle.schema_hash, schema_hash, "reducer '" + path.string() + "'");
  } else {
    if (a.method != "pca" && a.method != "fa")
      throw Error("usage", "--method must be pca or fa when fitting");
    json echo{{"dim", a.dim}, {"input_hash", file_hash(a.input)}};
    bundle = a.method == "pca" ? make_reducer_bundle(fit_pca(in.rows, a.dim), schema_hash, echo)
                               : make_reducer_bundle(fit_fa(in.rows, a.dim), schema_hash, echo);
    if (a.model_out.empty())
      throw Error("usage", "--model-out is required when fitting a reducer");
    save_bundle(resolve_store_path(a.model_out), bundle);
  }
  FeatureTable out;
  out.keys = in.keys;
  std::string prefix;
  if (bundle.kind == BundleKind::Pca) {
    auto m = pca_from_bundle(bundle);
    if (m.input_dim() != static_cast<std::size_t>(in.rows.cols()))
      throw Error("dimension", "reducer expects " + std::to_string(m.input_dim()) + " columns, table has " +
                                   std::to_string(in.rows.cols()));
    out.rows = transform(m, in.rows);
    prefix = "pc";
    out.meta["featurization"] = "pca-" + std::to_string(m.output_dim());
  } else if (bundle.kind == BundleKind::Fa) {
    auto m = fa_from_bundle(bundle);
    if (m.input_dim != static_cast<std::size_t>(in.rows.cols()))
      throw Error("dimension", "reducer expects " + std::to_string(m.input_dim) + " columns, table has " +
                                   std::to_string(in.rows.cols()));
    out.rows = transform(m, in.rows);
    prefix = "fa";
    out.meta["featurization"] = "fa-" + std::to_string(m.output_dim());
  } else {
    throw Error("bundle", "expected a pca or fa bundle, got " + to_string(bundle.kind));
  }
  for (Eigen::Index j = 0; j < out.rows.cols(); ++j)
    out.columns.push_back(prefix + std::to_string(j));
  out.meta["schema_hash"] = schema_hash;
  out.meta["feature_source"] = content_hash(serialize_bundle(bundle));
  out.meta["columns"] = out.columns.size();
  write_table(a.out, out);
}

struct TrainTaskArgs {
  std::string features;
  std::string corpus;
  std::string task = "admission";
  std::string model = "logreg";
  std::string out = "classifier.bundle";
  double percentile = 95.0;
  double card_factor = 2.0;
  std::uint64_t seed = 0;
};

void cmd_train_task(const TrainTaskArgs &a) {
  FeatureTable t = read_table(a.features);
  Corpus c = read_corpus(a.corpus);
  auto keys = operator_keys(c);
  if (keys != t.keys)
    throw Error("alignment", "feature rows of '" + a.features + "' do not match the operators of '" + a.corpus + "'");
  TaskSpec task;
  task.task = task_kind_from_string(a.task);
  task.admission_percentile = a.percentile;
  task.card_factor = a.card_factor;
  task.validate();
  OperatorLabels labels = task.task == TaskKind::Admission   ? label_admission(c, task.admission_percentile)
                          : task.task == TaskKind::CardBoost ? label_card(c, task.card_factor)
                                                             : label_user(c);
  LabeledSet set{t.rows, labels.labels, labels.classes};
  ModelParams params;
  params.logreg.seed = a.seed;
  params.rf.seed = a.seed;
  params.svm.seed = a.seed;
  TaskModel m;
  m.task = task.task;
  m.model = model_kind_from_string(a.model);
  m.featurization = t.meta.value("featurization", "");
  m.schema_hash = t.meta.value("schema_hash", "");
  m.feature_source = t.meta.value("feature_source", "");
  m.classes = labels.classes;
  m.threshold = labels.threshold;
  m.classifier = train_classifier(m.model, set, params);
  json echo{{"seed", a.seed},
            {"features_hash", file_hash(a.features)},
            {"percentile", a.percentile},
            {"card_factor", a.card_factor},
            {"train_rows", set.size()}};
  save_bundle(resolve_store_path(a.out), make_classifier_bundle(m, echo));
}

struct PredictArgs {
  std::string plans = "-";
  std::string schema;
  std::string encoder;
  std::string reducer;
  std::string classifier;
  std::string out = "-";
  std::string verdicts;
  bool no_timing = false;
};

void cmd_predict(const PredictArgs &a) {
  auto cpath = resolve_store_path(a.classifier);
  TaskModel m = task_model_from_bundle(load_bundle(cpath, BundleKind::Classifier));
  FeatureSchema schema = load_schema(a.schema);
  require_schema_hash(m.schema_hash, schema.hash(), "classifier '" + cpath.string() + "'");
  LoadedFeatures f = load_features(schema, a.encoder, a.reducer);
  if (f.pipeline.spec.name() != m.featurization)
    throw Error("provenance", "classifier was trained on " + m.featurization + " features, got " +
                                  f.pipeline.spec.name());
  if (f.source_hash != m.feature_source)
    throw Error("provenance", "classifier expects feature source " + (m.feature_source.empty() ? "<none>" : m.feature_source) +
                                  " but got " + (f.source_hash.empty() ? "<none>" : f.source_hash));
  Corpus c = read_corpus(a.plans);
  std::ostringstream out;
  out << "query_id,op_index,node_type,prediction,class";
  if (!a.no_timing)
    out << ",latency_ms";
  out << '\n';
  std::map<std::size_t, bool> flagged;
  for (const auto &op : walk_operators(c)) {
    auto t0 = std::chrono::steady_clock::now();
    Vector x = f.pipeline.apply(*op.node);
    int y = m.classifier->predict(x);
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    flagged[op.record_index] = flagged[op.record_index] || y == 1;
    out << c.records[op.record_index].query_id << ',' << op.node_index << ',' << op.node->node_type << ',' << y << ','
        << m.classes[static_cast<std::size_t>(y)];
    if (!a.no_timing) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", ms);
      out << ',' << buf;
    }
    out << '\n';
  }
  write_output(a.out, out.str());
  if (m.task == TaskKind::Admission) {
    std::ostringstream v;
    v << "query_id,verdict\n";
    for (std::size_t i = 0; i < c.records.size(); ++i)
      v << c.records[i].query_id << ',' << (flagged[i] ? "flag" : "admit") << '\n';
    if (a.verdicts.empty())
      std::cerr << v.str();
    else
      write_output(a.verdicts, v.str());
  }
}

struct EvaluateArgs {
  std::string corpus = "-";
  std::string config;
  std::string task = "admission";
  std::string folds = "random";
  std::uint64_t seed = 0;
  std::vector<std::string> featurizations;
  std::vector<std::string> models;
  std::string embedding_dims;
  std::string hidden = "256,256,128,128,64,64";
  std::size_t epochs = 100;
  double lr = 0.01;
  std::size_t batch = 64;
  double percentile = 95.0;
  double card_factor = 2.0;
  bool full_log = false;
  std::size_t jobs = 1;
  std::string out = "report.csv";
  std::string cells_out;
  std::string timing_out;
};

void apply_eval_config(EvaluateArgs &a, const json &j) {
  auto get = [&j](const char *key, auto &field) {
    if (j.contains(key))
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("task", a.task);
  get("folds", a.folds);
  get("seed", a.seed);
  get("featurizations", a.featurizations);
  get("models", a.models);
  get("embedding_dims", a.embedding_dims);
  get("hidden", a.hidden);
  get("epochs", a.epochs);
  get("lr", a.lr);
  get("batch", a.batch);
  get("percentile", a.percentile);
  get("card_factor", a.card_factor);
  get("embedding_from_full_log", a.full_log);
  get("jobs", a.jobs);
}

void cmd_evaluate(EvaluateArgs a, const CLI::App &sub) {
  if (!a.config.empty()) {
    EvaluateArgs from_file = a;
    try {
      apply_eval_config(from_file, json::parse(read_all(a.config)));
    } catch (const json::exception &e) {
      throw Error("parse", "evaluate config '" + a.config + "': " + e.what());
    }
    // explicit flags win over the config file
    auto keep = [&sub](const char *flag) { return sub.count(flag) > 0; };
    if (!keep("--task")) a.task = from_file.task;
    if (!keep("--folds")) a.folds = from_file.folds;
    if (!keep("--seed")) a.seed = from_file.seed;
    if (!keep("--featurizations")) a.featurizations = from_file.featurizations;
    if (!keep("--models")) a.models = from_file.models;
    if (!keep("--embedding-dims")) a.embedding_dims = from_file.embedding_dims;
    if (!keep("--hidden")) a.hidden = from_file.hidden;
    if (!keep("--epochs")) a.epochs = from_file.epochs;
    if (!keep("--lr")) a.lr = from_file.lr;
    if (!keep("--batch")) a.batch = from_file.batch;
    if (!keep("--percentile")) a.percentile = from_file.percentile;
    if (!keep("--card-factor")) a.card_factor = from_file.card_factor;
    if (!keep("--embedding-from-full-log")) a.full_log = from_file.full_log;
    if (!keep("--jobs")) a.jobs = from_file.jobs;
  }
  Corpus c = read_corpus(a.corpus);
  EvalConfig cfg;
  cfg.task.task = task_kind_from_string(a.task);
  cfg.task.admission_percentile = a.percentile;
  cfg.task.card_factor = a.card_factor;
  if (!a.featurizations.empty())
    cfg.featurizations = a.featurizations;
  if (!a.embedding_dims.empty())
    for (std::size_t d : parse_dims(a.embedding_dims))
      cfg.featurizations.push_back("neural-" + std::to_string(d));
  if (!a.models.empty()) {
    cfg.models.clear();
    for (const auto &m : a.models)
      cfg.models.push_back(model_kind_from_string(m));
  }
  cfg.hourglass.hidden_dims = parse_dims(a.hidden);
  cfg.hourglass.seed = a.seed;
  cfg.embedding_sgd.epochs = a.epochs;
  cfg.embedding_sgd.learning_rate = a.lr;
  cfg.embedding_sgd.batch_size = a.batch;
  cfg.embedding_sgd.seed = a.seed;
  cfg.params.logreg.seed = a.seed;
  cfg.params.rf.seed = a.seed;
  cfg.params.svm.seed = a.seed;
  cfg.embedding_from_full_log = a.full_log;
  cfg.jobs = std::max<std::size_t>(1, a.jobs);
  FoldPlan plan = make_folds(c, fold_strategy_from_string(a.folds), a.seed);
  EvalReport report = evaluate(c, cfg, plan);

  std::ostringstream csv;
  write_report_csv(csv, report);
  write_output(a.out, csv.str());
  if (!a.cells_out.empty()) {
    std::ostringstream cells;
    write_cells_csv(cells, report);
    write_output(a.cells_out, cells.str());
  }
  if (!a.timing_out.empty()) {
    std::ostringstream timing;
    write_timing_csv(timing, report);
    write_output(a.timing_out, timing.str());
  }
  write_report_table(a.out == "-" ? std::cerr : std::cout, report);
}

struct Project2dArgs {
  std::string input;
  std::string out = "-";
};

void cmd_project2d(const Project2dArgs &a) {
  FeatureTable t = read_table(a.input);
  Matrix xy = project_2d(t.rows);
  std::ostringstream out;
  out << "query_id,op_index,x,y\n";
  for (std::size_t i = 0; i < t.keys.size(); ++i)
    out << t.keys[i].first << ',' << t.keys[i].second << ',' << fmt17(xy(static_cast<Eigen::Index>(i), 0)) << ','
        << fmt17(xy(static_cast<Eigen::Index>(i), 1)) << '\n';
  write_output(a.out, out.str());
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Operator embeddings for query plans"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto *s = app.add_subcommand("synth", "generate a synthetic plan corpus");
  s->add_option("--seed", synth.seed);
  s->add_option("--queries", synth.queries);
  s->add_option("--out", synth.out, "corpus file ('-' for stdout)");
  s->add_option("--config", synth.config, "generator config JSON");
  s->add_option("--manifest", synth.manifest, "manifest path (default <out>.manifest.json)");

  TrainEmbeddingArgs te;
  auto *t = app.add_subcommand("train-embedding", "train the hourglass network and save schema + encoder");
  t->add_option("--corpus", te.corpus, "corpus file ('-' for stdin)");
  t->add_option("--out,--encoder-out", te.encoder_out);
  t->add_option("--schema-out", te.schema_out);
  t->add_option("--embedding-dim", te.embedding_dim);
  t->add_option("--hidden", te.hidden);
  t->add_option("--epochs", te.epochs);
  t->add_option("--lr", te.lr);
  t->add_option("--batch", te.batch);
  t->add_option("--momentum", te.momentum);
  t->add_option("--seed", te.seed);
  t->add_flag("--masked-missing", te.masked, "skip absent children instead of zero targets");
  t->add_flag("--pre-activation", te.pre_activation, "publish the embedding before its ReLU");
  t->add_option("--loss-trace", te.loss_trace, "per-epoch loss CSV");

  EncodeArgs enc;
  auto *e = app.add_subcommand("embed", "embed every operator of a corpus");
  e->add_option("--corpus", enc.corpus);
  e->add_option("--schema", enc.schema)->required();
  e->add_option("--encoder", enc.encoder)->required();
  e->add_option("--out", enc.out)->required();

  EncodeArgs sparse;
  auto *en = app.add_subcommand("encode", "write the sparse one-hot encoding of a corpus");
  en->add_option("--corpus", sparse.corpus);
  en->add_option("--schema", sparse.schema)->required();
  en->add_option("--out", sparse.out)->required();

  ReduceArgs red;
  auto *r = app.add_subcommand("reduce", "fit or apply a pca/fa reducer to a sparse table");
  r->add_option("--input", red.input)->required();
  r->add_option("--method", red.method)->check(CLI::IsMember({"pca", "fa"}));
  r->add_option("--dim", red.dim);
  r->add_option("--model", red.model, "apply an existing reducer bundle");
  r->add_option("--model-out", red.model_out);
  r->add_option("--out", red.out)->required();

  TrainTaskArgs tt;
  auto *tk = app.add_subcommand("train-task", "train a task classifier on a feature table");
  tk->add_option("--features", tt.features)->required();
  tk->add_option("--corpus", tt.corpus)->required();
  tk->add_option("--task", tt.task)->check(CLI::IsMember({"admission", "card", "user"}));
  tk->add_option("--model", tt.model)->check(CLI::IsMember({"logreg", "knn", "rf", "svm", "majority"}));
  tk->add_option("--out", tt.out);
  tk->add_option("--percentile", tt.percentile);
  tk->add_option("--card-factor", tt.card_factor);
  tk->add_option("--seed", tt.seed);

  PredictArgs pr;
  auto *p = app.add_subcommand("predict", "per-operator predictions and admission verdicts");
  p->add_option("--plans", pr.plans);
  p->add_option("--schema", pr.schema)->required();
  p->add_option("--encoder", pr.encoder);
  p->add_option("--reducer", pr.reducer);
  p->add_option("--classifier", pr.classifier)->required();
  p->add_option("--out", pr.out);
  p->add_option("--verdicts", pr.verdicts);
  p->add_flag("--no-timing", pr.no_timing);

  EvaluateArgs ev;
  auto *v = app.add_subcommand("evaluate", "cross-validated grid of featurizations and models");
  v->add_option("--corpus", ev.corpus);
  v->add_option("--config", ev.config, "JSON file with the same keys as the flags");
  v->add_option("--task", ev.task)->check(CLI::IsMember({"admission", "card", "user"}));
  v->add_option("--folds", ev.folds)->check(CLI::IsMember({"by_group", "temporal", "random"}));
  v->add_option("--seed", ev.seed);
  v->add_option("--featurizations", ev.featurizations)->delimiter(',');
  v->add_option("--models", ev.models)->delimiter(',');
  v->add_option("--embedding-dims", ev.embedding_dims, "extra neural sizes, e.g. 64,32,16,8");
  v->add_option("--hidden", ev.hidden);
  v->add_option("--epochs", ev.epochs);
  v->add_option("--lr", ev.lr);
  v->add_option("--batch", ev.batch);
  v->add_option("--percentile", ev.percentile);
  v->add_option("--card-factor", ev.card_factor);
  v->add_flag("--embedding-from-full-log", ev.full_log);
  v->add_option("--jobs", ev.jobs);
  v->add_option("--out", ev.out);
  v->add_option("--cells-out", ev.cells_out);
  v->add_option("--timing-out", ev.timing_out);

  Project2dArgs pj;
  auto *pd = app.add_subcommand("project2d", "two principal coordinates of a feature table");
  pd->add_option("--input", pj.input)->required();
  pd->add_option("--out", pj.out);

  std::string summary_corpus = "-";
  auto *sm = app.add_subcommand("summary", "describe a corpus");
  sm->add_option("--corpus", summary_corpus);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp &ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError &ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    if (*s)
      cmd_synth(synth);
    else if (*t)
      cmd_train_embedding(te);
    else if (*e)
      cmd_featurize(enc, true);
    else if (*en)
      cmd_featurize(sparse, false);
    else if (*r)
      cmd_reduce(red);
    else if (*tk)
      cmd_train_task(tt);
    else if (*p)
      cmd_predict(pr);
    else if (*v)
      cmd_evaluate(ev, *v);
    else if (*pd)
      cmd_project2d(pj);
    else if (*sm)
      std::cout << format_summary(summarize(read_corpus(summary_corpus)));
  } catch (const Error &ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << ex.code() << ": " << msg << '\n';
    return 1;
  } catch (const std::exception &ex) {
    std::cerr << "error: internal: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
