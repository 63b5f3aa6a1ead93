#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "opembed/common.hpp"

namespace opembed::nn {

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Affine transform, optionally followed by layer normalization (with a
/// learnable per-unit gain and bias) and a ReLU.
struct DenseLayer {
  Matrix weight; // out_dim x in_dim
  Vector bias;
  bool layer_norm = false;
  bool relu = false;
  Vector ln_gain;
  Vector ln_bias;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t parameter_count() const;

  bool operator==(const DenseLayer &o) const;
};

/// He-initialized layer (N(0, 2/in_dim) weights, zero bias, unit LN gain).
DenseLayer make_layer(std::size_t in_dim, std::size_t out_dim, bool layer_norm, bool relu, Rng &rng);

struct Network {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const;
  /// Throws if consecutive layer dimensions disagree or any entry is non-finite.
  void validate() const;

  bool operator==(const Network &) const = default;
};

/// Intermediate values of one layer over a batch (one column per sample).
struct LayerCache {
  Matrix pre;        // W x + b
  Matrix normalized; // (pre - mean) / sqrt(var + eps), LN layers only
  Vector inv_std;    // per column, LN layers only
  Matrix affine;     // gain * normalized + bias, LN layers only
};

/// `outputs[0]` is the input batch, `outputs[i + 1]` the post-activation
/// output of layer i.
struct ForwardPass {
  std::vector<Matrix> outputs;
  std::vector<LayerCache> caches;
  const Matrix &output() const { return outputs.back(); }
};

ForwardPass forward(const Network &net, const Matrix &batch);
ForwardPass forward(const Network &net, const Vector &x);
/// Forward pass without keeping intermediate activations.
Vector predict(const Network &net, const Vector &x);
Matrix predict(const Network &net, const Matrix &batch);
/// Applies one layer to a batch.
Matrix apply_layer(const DenseLayer &layer, const Matrix &input, LayerCache *cache = nullptr);

enum class LossKind { MeanSquared, BinaryCrossEntropy, SoftmaxCrossEntropy };

/// MSE segments compare raw outputs; BCE segments treat each output as a
/// logit; softmax-CE segments treat the whole segment as one logit group.
struct LossSegment {
  LossKind kind = LossKind::MeanSquared;
  std::size_t offset = 0;
  std::size_t width = 1;
  double weight = 1.0;

  bool operator==(const LossSegment &) const = default;
};

struct LossSpec {
  std::vector<LossSegment> segments;

  std::size_t dim() const;
  /// Segments must tile [0, dim) in order.
  void validate() const;

  bool operator==(const LossSpec &) const = default;
};

double loss(const LossSpec &spec, const Vector &prediction, const Vector &target);
/// Per-sample loss gradient w.r.t. the prediction.
Vector loss_gradient(const LossSpec &spec, const Vector &prediction, const Vector &target);
/// Sum of per-column losses. Columns with zero weight are skipped.
double batch_loss(const LossSpec &spec, const Matrix &prediction, const Matrix &target,
                  const Vector *column_weights = nullptr);
/// Gradient of `batch_loss` w.r.t. the prediction matrix, multiplied by `scale`.
Matrix batch_loss_gradient(const LossSpec &spec, const Matrix &prediction, const Matrix &target,
                           double scale, const Vector *column_weights = nullptr);

/// Softmax for softmax-CE segments and sigmoid for BCE segments; MSE
/// segments pass through unchanged.
Vector decode_output(const LossSpec &spec, const Vector &prediction);

struct LayerGradient {
  Matrix weight;
  Vector bias;
  Vector ln_gain;
  Vector ln_bias;
};

struct Gradients {
  std::vector<LayerGradient> layers;
  Matrix input; // gradient w.r.t. the network input batch

  static Gradients zeros_like(const Network &net);
  void add(const Gradients &other);
  void scale(double factor);
};

/// Backpropagates `output_grad` (dLoss/dOutput, one column per sample)
/// through a pass recorded by `forward`. Parameter gradients are summed over
/// the batch.
Gradients backprop(const Network &net, const ForwardPass &pass, const Matrix &output_grad);

/// Exact gradient of `loss(spec, forward(net, x), target)`.
Gradients backward(const Network &net, const LossSpec &spec, const ForwardPass &pass, const Vector &target);

/// Parameters in a fixed order: per layer W (column-major), b, LN gain, LN bias.
std::vector<double *> parameter_pointers(Network &net);
std::vector<double> flatten(const Gradients &grads, const Network &net);

struct SgdConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double momentum = 0.0;

  void validate() const;
};

/// w <- w - lr * grad for every parameter.
void sgd_step(Network &net, const Gradients &grads, double learning_rate);

/// SGD with optional classical momentum. Each network trained by one
/// optimizer uses its own `slot` so velocities do not mix.
class Optimizer {
public:
  Optimizer(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  void step(Network &net, const Gradients &grads, std::size_t slot = 0);

private:
  double lr_;
  double momentum_;
  std::vector<Gradients> velocity_;
};

/// Runs the shuffled mini-batch loop. `step_batch` receives the sample
/// indices of one batch, updates the model and returns the summed sample loss.
/// Returns the mean per-sample loss of each epoch; throws on a non-finite loss.
std::vector<double> run_epochs(const SgdConfig &cfg, std::size_t n_samples,
                               const std::function<double(std::span<const std::size_t>)> &step_batch);

struct TrainResult {
  std::vector<double> loss_trace;
};

/// Mini-batch SGD on columns of `inputs` / `targets`.
TrainResult train(Network &net, const LossSpec &spec, const SgdConfig &cfg, const Matrix &inputs,
                  const Matrix &targets);

struct GradCheckReport {
  std::size_t parameters = 0;
  std::size_t failures = 0;
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  bool passed() const { return failures == 0; }
};

/// Central-difference check: |analytic - numeric| / max(1, |analytic|) < tol.
GradCheckReport check_gradients(const std::vector<double *> &params, const std::vector<double> &analytic,
                                const std::function<double()> &loss_fn, double h, double tol);

GradCheckReport grad_check(Network &net, const LossSpec &spec, const Vector &x, const Vector &target,
                           double h = 1e-5, double tol = 1e-4);

} // namespace opembed::nn
