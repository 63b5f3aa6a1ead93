// End-to-end checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "opembed/store.hpp"
#include "opembed/synth.hpp"
#include "opembed/tasks.hpp"

using namespace opembed;

namespace {

int failures = 0;

void report(int id, const std::string &name, bool ok, const std::string &detail) {
  std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

void run(int id, const std::string &name, const std::function<std::pair<bool, std::string>()> &body) {
  auto t0 = std::chrono::steady_clock::now();
  try {
    auto [ok, detail] = body();
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, " (%.1fs)", s);
    report(id, name, ok, detail + buf);
  } catch (const std::exception &e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Matrix gaussian(Eigen::Index n, Eigen::Index d, Rng &rng) {
  Matrix m(n, d);
  for (auto &v : m.reshaped())
    v = rng.normal();
  return m;
}

// Shared by criteria 2 and 3.
struct Trained {
  Corpus corpus;
  FeatureSchema schema;
  std::vector<TrainingTriple> triples;
  EmbeddingNetwork net;
};

Trained &trained() {
  static Trained t = [] {
    Trained r;
    SynthConfig cfg;
    cfg.n_queries = 400;
    r.corpus = generate(cfg);
    r.schema = build_schema(r.corpus);
    r.triples = extract_triples(r.schema, r.corpus);
    HourglassSpec hs;
    hs.seed = 7;
    r.net = build_hourglass(hs, r.schema);
    nn::SgdConfig sgd;
    sgd.seed = 7;
    train_embedding(r.net, r.triples, sgd);
    return r;
  }();
  return t;
}

std::pair<bool, std::string> gradients() {
  Rng rng(101);
  std::size_t nets = 0, params = 0, bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t in = 2 + rng.below(11);
    // random mixed loss layout over `in` output slots
    nn::LossSpec spec;
    for (std::size_t off = 0; off < in;) {
      auto kind = static_cast<nn::LossKind>(rng.below(3));
      std::size_t w = kind == nn::LossKind::SoftmaxCrossEntropy ? 2 + rng.below(3) : 1;
      w = std::min(w, in - off);
      if (w < 2 && kind == nn::LossKind::SoftmaxCrossEntropy)
        kind = nn::LossKind::MeanSquared;
      spec.segments.push_back({kind, off, w, 0.5 + rng.uniform()});
      off += w;
    }
    EmbeddingNetwork net;
    std::vector<std::size_t> dims{in, 3 + rng.below(6), 3 + rng.below(4), 2};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      net.trunk.layers.push_back(nn::make_layer(dims[i], dims[i + 1], true, true, rng));
    net.head1.layers.push_back(nn::make_layer(2, in, false, false, rng));
    net.head2.layers.push_back(nn::make_layer(2, in, false, false, rng));
    net.head_loss = spec;
    for (auto *l : {&net.trunk.layers[0], &net.trunk.layers[1]}) {
      for (auto &v : l->ln_gain)
        v = rng.uniform(0.5, 1.5);
      for (auto &v : l->ln_bias)
        v = rng.uniform(-0.3, 0.3);
    }
    auto target = [&] {
      Vector t = Vector::Zero(static_cast<Eigen::Index>(in));
      for (const auto &s : spec.segments) {
        auto o = static_cast<Eigen::Index>(s.offset);
        if (s.kind == nn::LossKind::MeanSquared)
          t(o) = rng.normal();
        else if (s.kind == nn::LossKind::BinaryCrossEntropy)
          t(o) = static_cast<double>(rng.below(2));
        else
          t(o + static_cast<Eigen::Index>(rng.below(s.width))) = 1.0;
      }
      return t;
    };
    TrainingTriple t;
    t.x = Vector(static_cast<Eigen::Index>(in));
    for (auto &v : t.x)
      v = rng.normal();
    t.has_c1 = true;
    t.has_c2 = rng.bernoulli(0.7);
    t.c1 = target();
    t.c2 = t.has_c2 ? target() : Vector::Zero(static_cast<Eigen::Index>(in));
    HeadLossOptions opts;
    opts.missing_child = trial % 2 ? MissingChildMode::Masked : MissingChildMode::ZeroTarget;
    auto r = grad_check(net, t, opts, 1e-5, 1e-4);
    ++nets;
    params += r.parameters;
    bad += r.failures;
    worst = std::max(worst, r.max_relative_error);
  }
  return {bad == 0 && nets >= 20,
          fmt("%.0f nets, %.0f parameters, %.0f failures, max relative error %.2e", double(nets), double(params),
              double(bad), worst)};
}

std::pair<bool, std::string> cutoff() {
  Trained &t = trained();
  Encoder enc = cut_off(t.net);
  Rng rng(202);
  std::size_t same = 0;
  for (int i = 0; i < 1000; ++i) {
    Vector x(static_cast<Eigen::Index>(t.schema.total_dim()));
    for (auto &v : x)
      v = rng.normal();
    nn::ForwardPass pass = nn::forward(t.net.trunk, x);
    Vector trunk_act = pass.output().col(0);
    Vector e = enc(x);
    same += e.size() == trunk_act.size() &&
            std::equal(e.begin(), e.end(), trunk_act.begin(),
                       [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; });
  }
  return {same == 1000, fmt("%.0f / 1000 inputs bit-identical", double(same))};
}

std::pair<bool, std::string> context() {
  Trained &t = trained();
  const Segment *type = t.schema.find("node_type");
  auto sort_it = std::find(type->vocabulary.begin(), type->vocabulary.end(), "Sort");
  if (sort_it == type->vocabulary.end())
    return {false, "no Sort in vocabulary"};
  const auto sort_slot = static_cast<Eigen::Index>(sort_it - type->vocabulary.begin());
  auto ops = walk_operators(t.corpus);
  std::size_t inputs = 0, hits = 0, mj = 0;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].node->node_type != "MergeJoin")
      continue;
    ++mj;
    ChildPrediction p = predict_children(t.net, t.triples[i].x);
    for (const Vector *head : {&p.child1, &p.child2}) {
      Vector g = head->segment(static_cast<Eigen::Index>(type->offset), static_cast<Eigen::Index>(type->width));
      Eigen::Index arg = 0;
      g.maxCoeff(&arg);
      ++inputs;
      hits += arg == sort_slot;
    }
  }
  double frac = static_cast<double>(hits) / static_cast<double>(inputs);
  return {ops.size() >= 2000 && frac >= 0.95,
          fmt("%.0f operators, %.0f MergeJoins, Sort argmax on %.4f of inputs", double(ops.size()), double(mj), frac)};
}

struct CardRun {
  EvalReport report;
  double neural32 = 0, neural8 = 0, pca32 = 0, prior = 0;
};

CardRun &card_run() {
  static CardRun r = [] {
    CardRun c;
    SynthConfig sc;
    sc.n_queries = 400;
    Corpus corpus = generate(sc);
    EvalConfig cfg;
    cfg.task.task = TaskKind::CardBoost;
    cfg.featurizations = {"neural-32", "neural-8", "pca-32"};
    cfg.models = {ModelKind::LogReg, ModelKind::Majority};
    cfg.embedding_from_full_log = true;
    cfg.hourglass.seed = 7;
    cfg.embedding_sgd.seed = 7;
    cfg.params.logreg.seed = 7;
    c.report = evaluate(corpus, cfg, make_folds(corpus, FoldStrategy::Random, 7));
    c.neural32 = c.report.cell("neural-32", ModelKind::LogReg)->median_accuracy;
    c.neural8 = c.report.cell("neural-8", ModelKind::LogReg)->median_accuracy;
    c.pca32 = c.report.cell("pca-32", ModelKind::LogReg)->median_accuracy;
    c.prior = c.report.cell("neural-32", ModelKind::LogReg)->median_prior;
    return c;
  }();
  return r;
}

std::pair<bool, std::string> separation() {
  CardRun &c = card_run();
  bool ok = c.neural32 >= c.prior + 0.10 && c.neural32 >= c.pca32 + 0.05;
  return {ok, fmt("neural-32 %.4f, prior %.4f, pca-32 %.4f", c.neural32, c.prior, c.pca32)};
}

std::pair<bool, std::string> monotonic() {
  CardRun &c = card_run();
  return {c.neural32 >= c.neural8, fmt("neural-32 %.4f, neural-8 %.4f", c.neural32, c.neural8)};
}

std::pair<bool, std::string> oracles() {
  Rng rng(606);
  double pca_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto d = static_cast<Eigen::Index>(2 + rng.below(7));
    Matrix m = gaussian(50 + static_cast<Eigen::Index>(rng.below(100)), d, rng);
    for (Eigen::Index j = 0; j < d; ++j)
      m.col(j) *= 1.0 + static_cast<double>(j) * 0.7;
    PcaModel p = fit_pca(m, static_cast<std::size_t>(d));
    Matrix centred = m.rowwise() - m.colwise().mean();
    Matrix cov = centred.transpose() * centred / static_cast<double>(m.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    for (Eigen::Index k = 0; k < d; ++k) {
      Vector ref = es.eigenvectors().col(d - 1 - k);
      Vector got = p.components.row(k).transpose();
      double sign = ref.dot(got) < 0 ? -1.0 : 1.0;
      pca_err = std::max(pca_err, (sign * got - ref).cwiseAbs().maxCoeff());
      pca_err = std::max(pca_err, std::abs(p.explained_variance[static_cast<std::size_t>(k)] -
                                           es.eigenvalues()(d - 1 - k)));
    }
  }

  LabeledSet set;
  set.features = gaussian(400, 5, rng);
  set.classes = {"a", "b", "c"};
  for (int i = 0; i < 400; ++i)
    set.labels.push_back(static_cast<int>(rng.below(3)));
  auto knn = train_knn(set);
  std::size_t knn_agree = 0;
  for (int q = 0; q < 500; ++q) {
    Vector x(5);
    for (auto &v : x)
      v = rng.normal();
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < set.size(); ++i)
      all.push_back({(set.row(i) - x).squaredNorm(), i});
    std::sort(all.begin(), all.end());
    Vector votes = Vector::Zero(3);
    for (std::size_t j = 0; j < 6; ++j)
      votes(set.labels[all[j].second]) += 1.0 / (std::sqrt(all[j].first) + 1e-9);
    knn_agree += knn->predict(x) == argmax_smallest(votes);
  }

  std::size_t fa_agree = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Matrix m = gaussian(30, 10, rng);
    m.col(7) += m.col(3);
    m.col(9) -= 0.5 * m.col(1);
    std::size_t k = 2 + rng.below(5);
    std::vector<std::vector<std::size_t>> cl;
    for (std::size_t i = 0; i < 10; ++i)
      cl.push_back({i});
    while (cl.size() > k) {
      auto mean_col = [&](const std::vector<std::size_t> &c) {
        Vector v = Vector::Zero(m.rows());
        for (auto s : c)
          v += m.col(static_cast<Eigen::Index>(s));
        return Vector(v / static_cast<double>(c.size()));
      };
      double best = -1;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < cl.size(); ++i)
        for (std::size_t j = i + 1; j < cl.size(); ++j)
          if (double r = std::abs(pearson(mean_col(cl[i]), mean_col(cl[j]))); r > best) {
            best = r;
            bi = i;
            bj = j;
          }
      cl[bi].insert(cl[bi].end(), cl[bj].begin(), cl[bj].end());
      std::sort(cl[bi].begin(), cl[bi].end());
      cl.erase(cl.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    fa_agree += fit_fa(m, k).clusters == cl;
  }
  bool ok = pca_err < 1e-6 && knn_agree == 500 && fa_agree == 5;
  return {ok, fmt("pca max error %.2e, knn %.0f/500 exact, fa %.0f/5 partitions", pca_err, double(knn_agree),
                  double(fa_agree))};
}

std::pair<bool, std::string> losses() {
  double worst = 0.0;
  for (std::size_t c = 2; c <= 12; ++c) {
    nn::LossSpec spec{{{nn::LossKind::SoftmaxCrossEntropy, 0, c, 1.0}}};
    Vector t = Vector::Zero(static_cast<Eigen::Index>(c));
    t(0) = 1.0;
    for (double logit : {-3.0, 0.0, 2.5})
      worst = std::max(worst, std::abs(nn::loss(spec, Vector::Constant(static_cast<Eigen::Index>(c), logit), t) -
                                       std::log(static_cast<double>(c))));
  }
  Rng rng(707);
  double mse_at_target = 0.0;
  for (int i = 0; i < 100; ++i) {
    Vector p(6);
    for (auto &v : p)
      v = rng.normal() * 10.0;
    mse_at_target = std::max(mse_at_target, nn::loss(nn::LossSpec{{{nn::LossKind::MeanSquared, 0, 6, 1.0}}}, p, p));
  }
  return {worst < 1e-9 && mse_at_target == 0.0,
          fmt("max |CE(uniform) - ln c| %.2e, max MSE at target %.1e", worst, mse_at_target)};
}

std::pair<bool, std::string> protocol() {
  Rng rng(808);
  std::size_t plans = 0, leaks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SynthConfig sc;
    sc.n_queries = 40 + rng.below(80);
    sc.n_users = 5 + rng.below(4);
    sc.n_templates = sc.n_users * 2;
    sc.slow_template = 0;
    sc.seed = rng.next_u64();
    Corpus c = generate(sc);
    for (auto strategy : {FoldStrategy::ByGroup, FoldStrategy::Temporal}) {
      FoldPlan plan = make_folds(c, strategy, rng.next_u64());
      ++plans;
      for (const auto &f : plan.folds) {
        if (strategy == FoldStrategy::ByGroup) {
          std::set<std::string> train_users;
          for (auto i : f.train)
            train_users.insert(*c.records[i].user_label);
          for (auto i : f.test)
            leaks += train_users.count(*c.records[i].user_label);
        } else {
          std::size_t last_train = *std::max_element(f.train.begin(), f.train.end());
          for (auto i : f.test)
            leaks += i <= last_train;
        }
      }
    }
  }

  SynthConfig sc;
  sc.n_queries = 150;
  Corpus c = generate(sc);
  EvalConfig cfg;
  cfg.task.task = TaskKind::CardBoost;
  cfg.featurizations = {"sparse"};
  cfg.models = {ModelKind::Majority, ModelKind::LogReg};
  EvalReport r = evaluate(c, cfg, make_folds(c, FoldStrategy::Random, 8));
  std::size_t majority_mismatch = 0, median_mismatch = 0;
  for (const auto &f : r.folds)
    if (f.model == ModelKind::Majority && f.accuracy != f.prior)
      ++majority_mismatch;
  for (const auto &cell : r.cells) {
    std::vector<double> acc;
    for (const auto &f : r.folds)
      if (f.featurization == cell.featurization && f.model == cell.model)
        acc.push_back(f.accuracy);
    std::sort(acc.begin(), acc.end());
    if (acc.size() != 5 || cell.median_accuracy != acc[2])
      ++median_mismatch;
  }
  bool ok = leaks == 0 && majority_mismatch == 0 && median_mismatch == 0;
  return {ok, fmt("%.0f fold plans, %.0f leaks; majority != prior in %.0f folds; %.0f cells off the 5-fold median",
                  double(plans), double(leaks), double(majority_mismatch), double(median_mismatch))};
}

std::pair<bool, std::string> latency() {
  Trained &t = trained();
  Matrix sparse = encode_corpus(t.schema, t.corpus);
  Encoder enc = cut_off(t.net);
  Matrix dense = enc(Matrix(sparse.transpose())).transpose();
  LabeledSet set;
  set.classes = {"under", "correct", "over"};
  set.labels = label_card(t.corpus, 2.0).labels;
  set.features = sparse;
  auto knn_sparse = train_knn(set);
  set.features = dense;
  auto knn_dense = train_knn(set);
  double ms_sparse = measure_inference(*knn_sparse, sparse.topRows(1000)).median_ms;
  double ms_dense = measure_inference(*knn_dense, dense.topRows(1000)).median_ms;

  // logreg latency against training-set size, interleaved to spread drift
  Rng rng(909);
  std::vector<std::size_t> sizes{1000, 2000, 4000};
  std::vector<std::unique_ptr<Classifier>> models;
  Matrix probe = gaussian(2000, 32, rng);
  for (auto n : sizes) {
    LabeledSet s;
    s.classes = {"a", "b", "c"};
    s.features = gaussian(static_cast<Eigen::Index>(n), 32, rng);
    for (std::size_t i = 0; i < n; ++i)
      s.labels.push_back(static_cast<int>(rng.below(3)));
    LogRegParams p;
    p.epochs = 20;
    models.push_back(train_logreg(s, p));
  }
  std::vector<double> xs, ys;
  for (int rep = 0; rep < 8; ++rep)
    for (std::size_t m = 0; m < models.size(); ++m) {
      xs.push_back(static_cast<double>(sizes[m]));
      ys.push_back(measure_inference(*models[m], probe).median_ms);
    }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  double slope = sxy / sxx, sse = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double e = ys[i] - my - slope * (xs[i] - mx);
    sse += e * e;
  }
  double se = std::sqrt(sse / (n - 2) / sxx);
  double p_value = 1.0;
  if (se > 0) {
    boost::math::students_t dist(n - 2);
    p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(slope / se)));
  } else if (slope != 0) {
    p_value = 0.0;
  }
  bool ok = ms_sparse > ms_dense && p_value > 0.01;
  return {ok, fmt("knn sparse %.5f ms > knn embedded %.5f ms; logreg slope %.3e ms/row, p = %.3f", ms_sparse,
                  ms_dense, slope, p_value)};
}

// One full pass over every stage; returns the bytes it produced.
std::map<std::string, std::string> pipeline_bytes() {
  std::map<std::string, std::string> out;
  SynthConfig sc;
  sc.n_queries = 120;
  Corpus corpus = generate(sc);
  out["corpus"] = corpus_to_json(corpus).dump();
  FeatureSchema schema = build_schema(corpus);
  out["schema"] = serialize_bundle(make_schema_bundle(schema));
  std::ostringstream enc_csv;
  write_encoded_csv(enc_csv, schema, corpus);
  out["sparse.csv"] = enc_csv.str();

  HourglassSpec hs;
  hs.seed = 3;
  EmbeddingNetwork net = build_hourglass(hs, schema);
  nn::SgdConfig sgd;
  sgd.epochs = 5;
  sgd.seed = 3;
  train_embedding(net, extract_triples(schema, corpus), sgd);
  Encoder enc = cut_off(net);
  out["encoder"] = serialize_bundle(make_encoder_bundle(enc));

  Matrix sparse = encode_corpus(schema, corpus);
  out["pca"] = serialize_bundle(make_reducer_bundle(fit_pca(sparse, 8), schema.hash()));
  out["fa"] = serialize_bundle(make_reducer_bundle(fit_fa(sparse, 8), schema.hash()));

  LabeledSet set;
  set.features = enc(Matrix(sparse.transpose())).transpose();
  OperatorLabels labels = label_card(corpus, 2.0);
  set.labels = labels.labels;
  set.classes = labels.classes;
  ModelParams params;
  params.rf.trees = 10;
  for (auto kind : {ModelKind::LogReg, ModelKind::Knn, ModelKind::RandomForest, ModelKind::LinearSvm,
                    ModelKind::Majority}) {
    TaskModel tm;
    tm.task = TaskKind::CardBoost;
    tm.model = kind;
    tm.featurization = "neural-32";
    tm.schema_hash = schema.hash();
    tm.classes = set.classes;
    tm.classifier = train_classifier(kind, set, params);
    out["classifier-" + to_string(kind)] = serialize_bundle(make_classifier_bundle(tm));
  }

  EvalConfig cfg;
  cfg.task.task = TaskKind::CardBoost;
  cfg.featurizations = {"sparse", "neural-8", "pca-8", "fa-8"};
  cfg.models = {ModelKind::LogReg, ModelKind::RandomForest};
  cfg.params.rf.trees = 10;
  cfg.embedding_sgd.epochs = 3;
  cfg.jobs = 2;
  std::ostringstream csv;
  write_report_csv(csv, evaluate(corpus, cfg, make_folds(corpus, FoldStrategy::Random, 3)));
  out["report.csv"] = csv.str();
  return out;
}

std::pair<bool, std::string> determinism() {
  auto a = pipeline_bytes();
  auto b = pipeline_bytes();
  std::string differing;
  for (const auto &[name, bytes] : a)
    if (b[name] != bytes)
      differing += " " + name;
  return {differing.empty() && a.size() == b.size(),
          differing.empty() ? fmt("%.0f artifacts byte-identical across two runs", double(a.size()))
                            : "differing:" + differing};
}

} // namespace

int main() {
  run(1, "gradient correctness", gradients);
  run(2, "encoder cut-off exactness", cutoff);
  run(3, "context recovery", context);
  run(4, "planted-task separation", separation);
  run(5, "embedding-size monotonicity", monotonic);
  run(6, "baseline oracles", oracles);
  run(7, "loss identities", losses);
  run(8, "protocol invariants", protocol);
  run(9, "inference-latency ordering", latency);
  run(10, "determinism", determinism);
  return failures == 0 ? 0 : 1;
}
