#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "opembed/common.hpp"
#include "opembed/payload.hpp"

namespace opembed {

/// Training rows (one per matrix row) with integer class ids indexing `classes`.
struct LabeledSet {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> classes;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t num_classes() const { return classes.size(); }
  /// Throws unless rows and labels agree and every label indexes `classes`.
  void validate(bool require_two_classes = true) const;
  Vector row(std::size_t i) const { return features.row(static_cast<Eigen::Index>(i)).transpose(); }
};

enum class ModelKind { LogReg, Knn, RandomForest, LinearSvm, Majority };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string &s);

class Classifier {
public:
  virtual ~Classifier() = default;

  virtual ModelKind kind() const = 0;
  virtual int predict(const Vector &x) const = 0;
  /// Class distribution; empty for models without one (linear SVM).
  virtual Vector predict_proba(const Vector &x) const = 0;
  virtual bool has_proba() const { return true; }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return num_classes_; }

  virtual Payload to_payload() const = 0;

protected:
  Classifier(std::size_t input_dim, std::size_t num_classes) : input_dim_(input_dim), num_classes_(num_classes) {}
  void check_input(const Vector &x) const;

  std::size_t input_dim_;
  std::size_t num_classes_;
};

std::unique_ptr<Classifier> classifier_from_payload(ModelKind kind, const Payload &p);

/// Index of the largest entry; ties go to the smallest index.
int argmax_smallest(const Vector &scores);

struct LogRegParams {
  double l2 = 1e-4;
  double learning_rate = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

class LogisticRegression final : public Classifier {
public:
  LogisticRegression(Matrix weight, Vector bias);
  ModelKind kind() const override { return ModelKind::LogReg; }
  int predict(const Vector &x) const override;
  Vector predict_proba(const Vector &x) const override;
  Payload to_payload() const override;

  const Matrix &weight() const { return weight_; } // classes x dim
  const Vector &bias() const { return bias_; }

private:
  Matrix weight_;
  Vector bias_;
};

std::unique_ptr<LogisticRegression> train_logreg(const LabeledSet &set, const LogRegParams &params = {});

struct KnnParams {
  std::size_t k = 6;
  double epsilon = 1e-9;
};

/// Inverse-distance weighted vote over the k nearest Euclidean neighbours.
class KNearestNeighbors final : public Classifier {
public:
  KNearestNeighbors(Matrix rows, std::vector<int> labels, std::size_t num_classes, KnnParams params);
  ModelKind kind() const override { return ModelKind::Knn; }
  int predict(const Vector &x) const override;
  Vector predict_proba(const Vector &x) const override;
  Payload to_payload() const override;

  std::size_t training_size() const { return labels_.size(); }

private:
  Vector votes(const Vector &x) const;

  Matrix rows_;
  std::vector<int> labels_;
  KnnParams params_;
};

std::unique_ptr<KNearestNeighbors> train_knn(const LabeledSet &set, const KnnParams &params = {});

struct ForestParams {
  std::size_t trees = 100;
  std::uint64_t seed = 0;
  bool bootstrap = true;
  std::size_t max_features = 0; // 0 = floor(sqrt(dim))
  std::size_t min_samples_split = 2;
};

struct TreeNode {
  int feature = -1; // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;  // x[feature] <= threshold
  int right = -1;
  int leaf_class = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes; // root at 0
  int predict(const Vector &x) const;
};

/// Gini trees grown until pure or too small to split; majority vote.
class RandomForest final : public Classifier {
public:
  RandomForest(std::vector<DecisionTree> trees, std::size_t input_dim, std::size_t num_classes);
  ModelKind kind() const override { return ModelKind::RandomForest; }
  int predict(const Vector &x) const override;
  Vector predict_proba(const Vector &x) const override;
  Payload to_payload() const override;

  const std::vector<DecisionTree> &trees() const { return trees_; }

private:
  std::vector<DecisionTree> trees_;
};

std::unique_ptr<RandomForest> train_rf(const LabeledSet &set, const ForestParams &params = {});

struct SvmParams {
  double c = 1.0;
  double learning_rate = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// One-vs-rest linear SVM (hinge loss + L2) fit by mini-batch subgradient descent.
class LinearSvm final : public Classifier {
public:
  LinearSvm(Matrix weight, Vector bias);
  ModelKind kind() const override { return ModelKind::LinearSvm; }
  int predict(const Vector &x) const override;
  Vector predict_proba(const Vector &) const override { return {}; }
  bool has_proba() const override { return false; }
  Vector decision_function(const Vector &x) const;
  Payload to_payload() const override;

private:
  Matrix weight_;
  Vector bias_;
};

std::unique_ptr<LinearSvm> train_linsvm(const LabeledSet &set, const SvmParams &params = {});

/// Always predicts the most frequent training class (ties: smallest id).
class MajorityClass final : public Classifier {
public:
  MajorityClass(Vector frequencies, std::size_t input_dim);
  ModelKind kind() const override { return ModelKind::Majority; }
  int predict(const Vector &x) const override;
  Vector predict_proba(const Vector &x) const override;
  Payload to_payload() const override;

private:
  Vector frequencies_;
};

std::unique_ptr<MajorityClass> train_majority(const LabeledSet &set);

struct InferenceStats {
  std::size_t items = 0;
  double total_ms = 0.0;
  double mean_ms = 0.0; // total / items
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Times `predict` on each row of `rows` individually.
InferenceStats measure_inference(const Classifier &clf, const Matrix &rows);

} // namespace opembed
