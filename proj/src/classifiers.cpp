#include "opembed/classifiers.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <span>
#include <cmath>
#include <numeric>

#include "opembed/nn.hpp"

namespace opembed {

using nlohmann::json;

void LabeledSet::validate(bool require_two_classes) const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error("dataset", "feature rows and labels differ in count");
  if (labels.empty())
    throw Error("dataset", "labeled set is empty");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes.size())
      throw Error("dataset", "label " + std::to_string(l) + " outside the class vocabulary");
  if (require_two_classes && classes.size() < 2)
    throw Error("dataset", "training needs at least two classes");
  if (!features.allFinite())
    throw Error("dataset", "non-finite feature value");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
  case ModelKind::LogReg:
    return "logreg";
  case ModelKind::Knn:
    return "knn";
  case ModelKind::RandomForest:
    return "rf";
  case ModelKind::LinearSvm:
    return "svm";
  case ModelKind::Majority:
    return "majority";
  }
  return "logreg";
}

ModelKind model_kind_from_string(const std::string &s) {
  if (s == "logreg")
    return ModelKind::LogReg;
  if (s == "knn")
    return ModelKind::Knn;
  if (s == "rf")
    return ModelKind::RandomForest;
  if (s == "svm" || s == "linsvm")
    return ModelKind::LinearSvm;
  if (s == "majority")
    return ModelKind::Majority;
  throw Error("usage", "unknown model '" + s + "' (expected logreg, knn, rf, svm or majority)");
}

void Classifier::check_input(const Vector &x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim_)
    throw Error("dimension", "classifier expects feature dimension " + std::to_string(input_dim_) + ", got " +
                                 std::to_string(x.size()));
}

int argmax_smallest(const Vector &scores) {
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best])
      best = static_cast<int>(i);
  return best;
}

namespace {

Vector softmax(const Vector &z) {
  Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

Matrix gather_rows(const Matrix &m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// logistic regression

LogisticRegression::LogisticRegression(Matrix weight, Vector bias)
    : Classifier(static_cast<std::size_t>(weight.cols()), static_cast<std::size_t>(weight.rows())),
      weight_(std::move(weight)), bias_(std::move(bias)) {}

Vector LogisticRegression::predict_proba(const Vector &x) const {
  check_input(x);
  return softmax(weight_ * x + bias_);
}

int LogisticRegression::predict(const Vector &x) const {
  check_input(x);
  return argmax_smallest(weight_ * x + bias_);
}

Payload LogisticRegression::to_payload() const {
  Payload p;
  p.meta["weight"] = p.put(weight_);
  p.meta["bias"] = p.put(bias_);
  return p;
}

std::unique_ptr<LogisticRegression> train_logreg(const LabeledSet &set, const LogRegParams &params) {
  set.validate();
  const auto c = static_cast<Eigen::Index>(set.num_classes());
  const auto d = static_cast<Eigen::Index>(set.dim());
  Matrix w = Matrix::Zero(c, d);
  Vector b = Vector::Zero(c);
  nn::SgdConfig cfg;
  cfg.learning_rate = params.learning_rate;
  cfg.batch_size = params.batch_size;
  cfg.epochs = params.epochs;
  cfg.seed = params.seed;
  nn::run_epochs(cfg, set.size(), [&](std::span<const std::size_t> idx) {
    Matrix x = gather_rows(set.features, idx); // B x D
    Matrix logits = (x * w.transpose()).rowwise() + b.transpose();
    Matrix grad(logits.rows(), c);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Vector z = logits.row(i).transpose();
      double mx = z.maxCoeff();
      double lse = mx + std::log((z.array() - mx).exp().sum());
      int y = set.labels[idx[static_cast<std::size_t>(i)]];
      total += lse - z[y];
      Vector p = (z.array() - lse).exp();
      p[y] -= 1.0;
      grad.row(i) = p.transpose();
    }
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    Matrix gw = inv_b * grad.transpose() * x + params.l2 * w;
    Vector gb = inv_b * grad.colwise().sum().transpose();
    w -= params.learning_rate * gw;
    b -= params.learning_rate * gb;
    return total;
  });
  return std::make_unique<LogisticRegression>(std::move(w), std::move(b));
}

// ---------------------------------------------------------------------------
// k nearest neighbours

KNearestNeighbors::KNearestNeighbors(Matrix rows, std::vector<int> labels, std::size_t num_classes,
                                     KnnParams params)
    : Classifier(static_cast<std::size_t>(rows.cols()), num_classes), rows_(std::move(rows)),
      labels_(std::move(labels)), params_(params) {}

Vector KNearestNeighbors::votes(const Vector &x) const {
  check_input(x);
  const std::size_t n = labels_.size();
  const std::size_t k = std::min(params_.k, n);
  // (squared distance, index); keep the k smallest with index as tie-break
  std::vector<std::pair<double, std::size_t>> best;
  best.reserve(k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = (rows_.row(static_cast<Eigen::Index>(i)).transpose() - x).squaredNorm();
    std::pair<double, std::size_t> cand{d2, i};
    if (best.size() < k) {
      best.push_back(cand);
      std::push_heap(best.begin(), best.end());
    } else if (cand < best.front()) {
      std::pop_heap(best.begin(), best.end());
      best.back() = cand;
      std::push_heap(best.begin(), best.end());
    }
  }
  Vector v = Vector::Zero(static_cast<Eigen::Index>(num_classes_));
  for (const auto &[d2, i] : best)
    v[labels_[i]] += 1.0 / (std::sqrt(d2) + params_.epsilon);
  return v;
}

int KNearestNeighbors::predict(const Vector &x) const { return argmax_smallest(votes(x)); }

Vector KNearestNeighbors::predict_proba(const Vector &x) const {
  Vector v = votes(x);
  return v / v.sum();
}

Payload KNearestNeighbors::to_payload() const {
  Payload p;
  p.meta["rows"] = p.put(rows_);
  p.meta["labels"] = labels_;
  p.meta["num_classes"] = num_classes_;
  p.meta["k"] = params_.k;
  p.meta["epsilon"] = params_.epsilon;
  return p;
}

std::unique_ptr<KNearestNeighbors> train_knn(const LabeledSet &set, const KnnParams &params) {
  set.validate();
  if (params.k == 0)
    throw Error("config", "k must be positive");
  return std::make_unique<KNearestNeighbors>(set.features, set.labels, set.num_classes(), params);
}

// ---------------------------------------------------------------------------
// random forest

int DecisionTree::predict(const Vector &x) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto &n = nodes[static_cast<std::size_t>(i)];
    i = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].leaf_class;
}

namespace {

double gini(const std::vector<double> &counts, double total) {
  if (total <= 0)
    return 0.0;
  double s = 0.0;
  for (double c : counts)
    s += (c / total) * (c / total);
  return 1.0 - s;
}

int majority_of(const std::vector<double> &counts) {
  int best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[static_cast<std::size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;
};

class TreeBuilder {
public:
  TreeBuilder(const LabeledSet &set, const ForestParams &params, Rng &rng)
      : set_(set), params_(params), rng_(rng), classes_(set.num_classes()) {
    max_features_ = params.max_features > 0
                        ? std::min(params.max_features, set.dim())
                        : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(set.dim()))));
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    tree.nodes.emplace_back();
    struct Work {
      int node;
      std::vector<std::size_t> samples;
    };
    std::vector<Work> stack;
    stack.push_back({0, std::move(samples)});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      std::vector<double> counts(classes_, 0.0);
      for (auto s : w.samples)
        counts[static_cast<std::size_t>(set_.labels[s])] += 1.0;
      tree.nodes[static_cast<std::size_t>(w.node)].leaf_class = majority_of(counts);
      bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
      if (pure || w.samples.size() < params_.min_samples_split)
        continue;
      SplitChoice split = best_split(w.samples);
      if (split.feature < 0)
        continue;
      std::vector<std::size_t> left, right;
      for (auto s : w.samples)
        (set_.features(static_cast<Eigen::Index>(s), split.feature) <= split.threshold ? left : right).push_back(s);
      int li = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      int ri = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      auto &node = tree.nodes[static_cast<std::size_t>(w.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = li;
      node.right = ri;
      stack.push_back({ri, std::move(right)});
      stack.push_back({li, std::move(left)});
    }
    return tree;
  }

private:
  SplitChoice best_split(const std::vector<std::size_t> &samples) {
    std::vector<std::size_t> features = iota_indices(set_.dim());
    // partial Fisher-Yates: the first max_features entries are the candidates,
    // the rest are a fallback when every candidate is constant here
    for (std::size_t i = 0; i < features.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng_.below(features.size() - i));
      std::swap(features[i], features[j]);
    }
    SplitChoice best;
    best.impurity = std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(samples.size());
    std::vector<std::pair<double, int>> values(samples.size());
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
      if (fi >= max_features_ && best.feature >= 0)
        break;
      const auto f = static_cast<Eigen::Index>(features[fi]);
      for (std::size_t i = 0; i < samples.size(); ++i)
        values[i] = {set_.features(static_cast<Eigen::Index>(samples[i]), f), set_.labels[samples[i]]};
      std::sort(values.begin(), values.end());
      std::vector<double> left(classes_, 0.0), right(classes_, 0.0);
      for (const auto &v : values)
        right[static_cast<std::size_t>(v.second)] += 1.0;
      for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        left[static_cast<std::size_t>(values[i].second)] += 1.0;
        right[static_cast<std::size_t>(values[i].second)] -= 1.0;
        if (values[i].first == values[i + 1].first)
          continue;
        double nl = static_cast<double>(i + 1), nr = n - nl;
        double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
        if (imp < best.impurity) {
          best.impurity = imp;
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (values[i].first + values[i + 1].first);
          // midpoint can round onto the upper value for adjacent doubles
          if (!(best.threshold < values[i + 1].first))
            best.threshold = values[i].first;
        }
      }
    }
    return best;
  }

  const LabeledSet &set_;
  const ForestParams &params_;
  Rng &rng_;
  std::size_t classes_;
  std::size_t max_features_;
};

} // namespace

RandomForest::RandomForest(std::vector<DecisionTree> trees, std::size_t input_dim, std::size_t num_classes)
    : Classifier(input_dim, num_classes), trees_(std::move(trees)) {}

Vector RandomForest::predict_proba(const Vector &x) const {
  check_input(x);
  Vector v = Vector::Zero(static_cast<Eigen::Index>(num_classes_));
  for (const auto &t : trees_)
    v[t.predict(x)] += 1.0;
  return v / static_cast<double>(trees_.size());
}

int RandomForest::predict(const Vector &x) const { return argmax_smallest(predict_proba(x)); }

Payload RandomForest::to_payload() const {
  Payload p;
  json trees = json::array();
  for (const auto &t : trees_) {
    std::vector<int> feature, left, right, leaf;
    Vector thresholds(static_cast<Eigen::Index>(t.nodes.size()));
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto &n = t.nodes[i];
      feature.push_back(n.feature);
      left.push_back(n.left);
      right.push_back(n.right);
      leaf.push_back(n.leaf_class);
      thresholds[static_cast<Eigen::Index>(i)] = n.threshold;
    }
    trees.push_back(json{{"feature", feature},
                         {"left", left},
                         {"right", right},
                         {"leaf_class", leaf},
                         {"threshold", p.put(thresholds)}});
  }
  p.meta["trees"] = std::move(trees);
  p.meta["input_dim"] = input_dim_;
  p.meta["num_classes"] = num_classes_;
  return p;
}

std::unique_ptr<RandomForest> train_rf(const LabeledSet &set, const ForestParams &params) {
  set.validate();
  if (params.trees == 0)
    throw Error("config", "a forest needs at least one tree");
  std::vector<DecisionTree> trees;
  for (std::size_t t = 0; t < params.trees; ++t) {
    Rng rng(Rng::derive(params.seed, t));
    std::vector<std::size_t> samples;
    if (params.bootstrap) {
      samples.resize(set.size());
      for (auto &s : samples)
        s = static_cast<std::size_t>(rng.below(set.size()));
    } else {
      samples = iota_indices(set.size());
    }
    TreeBuilder builder(set, params, rng);
    trees.push_back(builder.build(std::move(samples)));
  }
  return std::make_unique<RandomForest>(std::move(trees), set.dim(), set.num_classes());
}

// ---------------------------------------------------------------------------
// linear SVM

LinearSvm::LinearSvm(Matrix weight, Vector bias)
    : Classifier(static_cast<std::size_t>(weight.cols()), static_cast<std::size_t>(weight.rows())),
      weight_(std::move(weight)), bias_(std::move(bias)) {}

Vector LinearSvm::decision_function(const Vector &x) const {
  check_input(x);
  return weight_ * x + bias_;
}

int LinearSvm::predict(const Vector &x) const { return argmax_smallest(decision_function(x)); }

Payload LinearSvm::to_payload() const {
  Payload p;
  p.meta["weight"] = p.put(weight_);
  p.meta["bias"] = p.put(bias_);
  return p;
}

std::unique_ptr<LinearSvm> train_linsvm(const LabeledSet &set, const SvmParams &params) {
  set.validate();
  if (params.c < 0)
    throw Error("config", "SVM regularization constant must be non-negative");
  const auto c = static_cast<Eigen::Index>(set.num_classes());
  const auto d = static_cast<Eigen::Index>(set.dim());
  const double n = static_cast<double>(set.size());
  Matrix w = Matrix::Zero(c, d);
  Vector b = Vector::Zero(c);
  nn::SgdConfig cfg;
  cfg.learning_rate = params.learning_rate;
  cfg.batch_size = params.batch_size;
  cfg.epochs = params.epochs;
  cfg.seed = params.seed;
  // per class: minimize |w|^2 / (2n) + (C/n) * sum_i hinge(y_i (w.x_i + b))
  nn::run_epochs(cfg, set.size(), [&](std::span<const std::size_t> idx) {
    Matrix x = gather_rows(set.features, idx);
    Matrix scores = (x * w.transpose()).rowwise() + b.transpose();
    Matrix coef = Matrix::Zero(scores.rows(), c);
    double total = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      int y = set.labels[idx[static_cast<std::size_t>(i)]];
      for (Eigen::Index k = 0; k < c; ++k) {
        double sign = k == y ? 1.0 : -1.0;
        double margin = sign * scores(i, k);
        if (margin < 1.0) {
          total += params.c * (1.0 - margin);
          coef(i, k) = -sign;
        }
      }
    }
    const double scale = params.c / static_cast<double>(idx.size());
    Matrix gw = scale * coef.transpose() * x + w / n;
    Vector gb = scale * coef.colwise().sum().transpose();
    w -= params.learning_rate * gw;
    b -= params.learning_rate * gb;
    return total;
  });
  return std::make_unique<LinearSvm>(std::move(w), std::move(b));
}

// ---------------------------------------------------------------------------
// majority class

MajorityClass::MajorityClass(Vector frequencies, std::size_t input_dim)
    : Classifier(input_dim, static_cast<std::size_t>(frequencies.size())), frequencies_(std::move(frequencies)) {}

int MajorityClass::predict(const Vector &x) const {
  check_input(x);
  return argmax_smallest(frequencies_);
}

Vector MajorityClass::predict_proba(const Vector &x) const {
  check_input(x);
  return frequencies_;
}

Payload MajorityClass::to_payload() const {
  Payload p;
  p.meta["frequencies"] = p.put(frequencies_);
  p.meta["input_dim"] = input_dim_;
  return p;
}

std::unique_ptr<MajorityClass> train_majority(const LabeledSet &set) {
  set.validate(false);
  Vector f = Vector::Zero(static_cast<Eigen::Index>(set.num_classes()));
  for (int l : set.labels)
    f[l] += 1.0;
  return std::make_unique<MajorityClass>(f / f.sum(), set.dim());
}

// ---------------------------------------------------------------------------

std::unique_ptr<Classifier> classifier_from_payload(ModelKind kind, const Payload &p) {
  try {
    switch (kind) {
    case ModelKind::LogReg:
      return std::make_unique<LogisticRegression>(p.get_matrix(p.meta.at("weight")), p.get_vector(p.meta.at("bias")));
    case ModelKind::LinearSvm:
      return std::make_unique<LinearSvm>(p.get_matrix(p.meta.at("weight")), p.get_vector(p.meta.at("bias")));
    case ModelKind::Knn: {
      KnnParams kp{p.meta.at("k").get<std::size_t>(), p.meta.at("epsilon").get<double>()};
      return std::make_unique<KNearestNeighbors>(p.get_matrix(p.meta.at("rows")),
                                                 p.meta.at("labels").get<std::vector<int>>(),
                                                 p.meta.at("num_classes").get<std::size_t>(), kp);
    }
    case ModelKind::RandomForest: {
      std::vector<DecisionTree> trees;
      for (const auto &tj : p.meta.at("trees")) {
        auto feature = tj.at("feature").get<std::vector<int>>();
        auto left = tj.at("left").get<std::vector<int>>();
        auto right = tj.at("right").get<std::vector<int>>();
        auto leaf = tj.at("leaf_class").get<std::vector<int>>();
        Vector thr = p.get_vector(tj.at("threshold"));
        DecisionTree t;
        for (std::size_t i = 0; i < feature.size(); ++i)
          t.nodes.push_back({feature[i], thr[static_cast<Eigen::Index>(i)], left[i], right[i], leaf[i]});
        trees.push_back(std::move(t));
      }
      return std::make_unique<RandomForest>(std::move(trees), p.meta.at("input_dim").get<std::size_t>(),
                                            p.meta.at("num_classes").get<std::size_t>());
    }
    case ModelKind::Majority:
      return std::make_unique<MajorityClass>(p.get_vector(p.meta.at("frequencies")),
                                             p.meta.at("input_dim").get<std::size_t>());
    }
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("malformed classifier payload: ") + e.what());
  }
  throw Error("bundle", "unknown classifier kind");
}

InferenceStats measure_inference(const Classifier &clf, const Matrix &rows) {
  using clock = std::chrono::steady_clock;
  InferenceStats s;
  s.items = static_cast<std::size_t>(rows.rows());
  if (s.items == 0)
    return s;
  std::vector<double> per_item;
  per_item.reserve(s.items);
  volatile int sink = 0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Vector x = rows.row(r).transpose();
    auto t0 = clock::now();
    sink = sink + clf.predict(x);
    auto t1 = clock::now();
    per_item.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  s.total_ms = std::accumulate(per_item.begin(), per_item.end(), 0.0);
  s.mean_ms = s.total_ms / static_cast<double>(s.items);
  s.median_ms = median(per_item);
  std::sort(per_item.begin(), per_item.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(per_item.size())));
  s.p95_ms = per_item[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

} // namespace opembed
