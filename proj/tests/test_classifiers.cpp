#include <doctest.h>

#include <cmath>

#include "opembed/classifiers.hpp"

using namespace opembed;

namespace {

LabeledSet blobs(std::size_t per_class, std::size_t classes, double spread, std::uint64_t seed) {
  Rng rng(seed);
  LabeledSet s;
  s.features.resize(static_cast<Eigen::Index>(per_class * classes), 2);
  for (std::size_t c = 0; c < classes; ++c) {
    s.classes.push_back("c" + std::to_string(c));
    double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      auto r = static_cast<Eigen::Index>(c * per_class + i);
      s.features(r, 0) = 5.0 * std::cos(angle) + spread * rng.normal();
      s.features(r, 1) = 5.0 * std::sin(angle) + spread * rng.normal();
      s.labels.push_back(static_cast<int>(c));
    }
  }
  return s;
}

double accuracy(const Classifier &clf, const LabeledSet &s) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    ok += clf.predict(s.row(i)) == s.labels[i];
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

} // namespace

TEST_CASE("every model separates well-separated blobs") {
  LabeledSet s = blobs(40, 3, 0.5, 1);
  CHECK(accuracy(*train_logreg(s), s) == 1.0);
  CHECK(accuracy(*train_knn(s), s) == 1.0);
  CHECK(accuracy(*train_rf(s), s) == 1.0);
  CHECK(accuracy(*train_linsvm(s), s) == 1.0);
}

TEST_CASE("zero-weight logistic regression is uniform") {
  LogisticRegression lr(Matrix::Zero(4, 3), Vector::Zero(4));
  Vector p = lr.predict_proba(Vector::Ones(3));
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(p(i) == doctest::Approx(0.25));
  CHECK(lr.predict(Vector::Ones(3)) == 0);
}

TEST_CASE("knn: a training point queries to its own label; k=1 matches a scan") {
  LabeledSet s = blobs(30, 3, 2.5, 2);
  auto knn = train_knn(s);
  for (std::size_t i = 0; i < 10; ++i) {
    Vector p = knn->predict_proba(s.row(i));
    CHECK(knn->predict(s.row(i)) == s.labels[i]);
    CHECK(p(s.labels[i]) > 0.99);
  }
  KnnParams one;
  one.k = 1;
  auto nn1 = train_knn(s, one);
  Rng rng(3);
  for (int q = 0; q < 50; ++q) {
    Vector x(2);
    x << rng.uniform(-8, 8), rng.uniform(-8, 8);
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
      if ((s.row(i) - x).squaredNorm() < (s.row(best) - x).squaredNorm())
        best = i;
    CHECK(nn1->predict(x) == s.labels[best]);
  }
}

TEST_CASE("forest learns a single-threshold concept") {
  Rng rng(4);
  LabeledSet s;
  s.classes = {"lo", "hi"};
  s.features.resize(300, 4);
  for (Eigen::Index i = 0; i < 300; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j)
      s.features(i, j) = rng.uniform();
    s.labels.push_back(s.features(i, 2) > 0.6 ? 1 : 0);
  }
  auto rf = train_rf(s);
  LabeledSet test = s;
  for (Eigen::Index i = 0; i < 300; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j)
      test.features(i, j) = rng.uniform();
    test.labels[static_cast<std::size_t>(i)] = test.features(i, 2) > 0.6 ? 1 : 0;
  }
  CHECK(accuracy(*rf, test) >= 0.95);
}

TEST_CASE("a single unbootstrapped tree splits at the best gini midpoint") {
  // x: 1..8, labels 0 0 0 1 1 1 1 1 -> one split at 3.5 makes both sides pure
  LabeledSet s;
  s.classes = {"a", "b"};
  s.features.resize(8, 1);
  for (int i = 0; i < 8; ++i) {
    s.features(i, 0) = i + 1;
    s.labels.push_back(i < 3 ? 0 : 1);
  }
  ForestParams p;
  p.trees = 1;
  p.bootstrap = false;
  auto rf = train_rf(s, p);
  const auto &nodes = rf->trees()[0].nodes;
  REQUIRE(nodes.size() == 3);
  CHECK(nodes[0].feature == 0);
  CHECK(nodes[0].threshold == 3.5);
  CHECK(nodes[nodes[0].left].leaf_class == 0);
  CHECK(nodes[nodes[0].right].leaf_class == 1);
}

TEST_CASE("svm orientation follows the data; c = 0 leaves the zero model") {
  LabeledSet s = blobs(30, 2, 0.3, 5);
  SvmParams none;
  none.c = 0.0;
  auto zero = train_linsvm(s, none);
  CHECK(zero->decision_function(s.row(40)).isZero());
  CHECK(zero->predict(s.row(40)) == 0);
  auto svm = train_linsvm(s);
  Vector far = s.row(0) * 3.0;
  CHECK(svm->predict(far) == 0);
  LabeledSet mirrored = s;
  mirrored.features = -s.features;
  auto svm2 = train_linsvm(mirrored);
  CHECK(svm2->predict(-far) == 0);
  CHECK(svm2->predict(far) == 1);
  CHECK_FALSE(svm->has_proba());
  CHECK(svm->decision_function(far).size() == 2);
}

TEST_CASE("majority predicts the most frequent class, ties to the smallest id") {
  LabeledSet s;
  s.classes = {"a", "b", "c"};
  s.features = Matrix::Zero(5, 1);
  s.labels = {2, 1, 2, 1, 0};
  auto m = train_majority(s);
  CHECK(m->predict(Vector::Zero(1)) == 1);
  CHECK(m->predict_proba(Vector::Zero(1))(2) == doctest::Approx(0.4));
}

TEST_CASE("probabilities sum to one and dimensions are enforced") {
  LabeledSet s = blobs(20, 3, 1.5, 6);
  std::vector<std::unique_ptr<Classifier>> models;
  models.push_back(train_logreg(s));
  models.push_back(train_knn(s));
  models.push_back(train_rf(s));
  models.push_back(train_majority(s));
  for (const auto &m : models) {
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(std::abs(m->predict_proba(s.row(i)).sum() - 1.0) < 1e-9);
    CHECK_THROWS_AS(m->predict(Vector::Zero(3)), Error);
    auto back = classifier_from_payload(m->kind(), m->to_payload());
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(back->predict(s.row(i)) == m->predict(s.row(i)));
  }
}

TEST_CASE("inference timing bookkeeping") {
  LabeledSet s = blobs(20, 2, 1.0, 7);
  auto m = train_logreg(s);
  InferenceStats st = measure_inference(*m, s.features);
  CHECK(st.items == s.size());
  CHECK(st.mean_ms == doctest::Approx(st.total_ms / static_cast<double>(st.items)));
  CHECK(st.p95_ms >= st.median_ms);
}

TEST_CASE("knn latency grows with the training set") {
  auto time_for = [](std::size_t per_class) {
    LabeledSet s = blobs(per_class, 2, 1.0, 8);
    auto m = train_knn(s);
    return measure_inference(*m, s.features.topRows(200)).median_ms;
  };
  CHECK(time_for(4000) > time_for(200));
}
