#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opembed/common.hpp"
#include "opembed/featurizer.hpp"
#include "opembed/nn.hpp"

namespace opembed {

struct HourglassSpec {
  std::vector<std::size_t> hidden_dims{256, 256, 128, 128, 64, 64};
  std::size_t embedding_dim = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// How an absent child contributes to the loss.
enum class MissingChildMode {
  ZeroTarget, // train the head towards the all-zero vector
  Masked,     // skip that head for the sample
};

struct HeadLossOptions {
  MissingChildMode missing_child = MissingChildMode::ZeroTarget;
  double head1_weight = 1.0;
  double head2_weight = 1.0;
};

/// Loss layout mirroring the schema: MSE on numeric slots, BCE on boolean
/// slots, softmax-CE on each categorical group.
nn::LossSpec head_loss_spec(const FeatureSchema &schema);

/// Encoder trunk (every layer, including the embedding layer, carries
/// LN + ReLU) plus two single-layer prediction heads without activation.
struct EmbeddingNetwork {
  nn::Network trunk;
  nn::Network head1;
  nn::Network head2;
  nn::LossSpec head_loss;
  std::string schema_hash;

  std::size_t input_dim() const { return trunk.in_dim(); }
  std::size_t embedding_dim() const { return trunk.out_dim(); }

  bool operator==(const EmbeddingNetwork &) const = default;
};

EmbeddingNetwork build_hourglass(const HourglassSpec &spec, const FeatureSchema &schema);

/// Per-sample loss of both heads for one triple.
double triple_loss(const EmbeddingNetwork &net, const TrainingTriple &t, const HeadLossOptions &opts = {});

struct EmbeddingTrainResult {
  std::vector<double> loss_trace;
};

EmbeddingTrainResult train_embedding(EmbeddingNetwork &net, const std::vector<TrainingTriple> &triples,
                                     const nn::SgdConfig &cfg, const HeadLossOptions &opts = {});

/// Analytic vs central-difference gradient check over every trunk and head
/// parameter for a single triple.
nn::GradCheckReport grad_check(EmbeddingNetwork &net, const TrainingTriple &t, const HeadLossOptions &opts,
                               double h = 1e-5, double tol = 1e-4);

/// Which value of the embedding layer is published: after its ReLU, or the
/// layer-normalized value just before it.
enum class EmbeddingOutput { PostActivation, PreActivation };

/// Input -> embedding mapping left after the prediction heads are cut off.
struct Encoder {
  nn::Network trunk;
  std::string schema_hash;
  EmbeddingOutput output = EmbeddingOutput::PostActivation;

  std::size_t input_dim() const { return trunk.in_dim(); }
  std::size_t embedding_dim() const { return trunk.out_dim(); }

  Vector operator()(const Vector &x) const;
  Matrix operator()(const Matrix &batch) const; // one sample per column

  bool operator==(const Encoder &) const = default;
};

Encoder cut_off(const EmbeddingNetwork &net, EmbeddingOutput output = EmbeddingOutput::PostActivation);

/// Decoded child predictions (softmax per categorical group) of both heads.
struct ChildPrediction {
  Vector child1;
  Vector child2;
};
ChildPrediction predict_children(const EmbeddingNetwork &net, const Vector &x);

Vector embed(const Encoder &encoder, const Vector &sparse);
/// Refuses a schema whose hash differs from the one the encoder was trained on.
Vector embed(const Encoder &encoder, const FeatureSchema &schema, const PlanNode &node);

struct EmbeddedRow {
  Vector embedding;
  std::optional<int> label;
  std::size_t record_index = 0;
  std::size_t node_index = 0;
};

struct EmbeddedDataset {
  std::size_t dim = 0;
  std::vector<EmbeddedRow> rows;
};

using OperatorLabeler = std::function<std::optional<int>(const OperatorRef &)>;

EmbeddedDataset embed_corpus(const Encoder &encoder, const FeatureSchema &schema, const Corpus &corpus,
                             const OperatorLabeler &labeler = {});

/// Two leading principal coordinates of each row.
Matrix project_2d(const EmbeddedDataset &dataset);
Matrix project_2d(const Matrix &rows);

} // namespace opembed
