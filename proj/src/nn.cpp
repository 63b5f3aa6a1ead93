#include "opembed/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace opembed::nn {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0)
    return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

std::size_t DenseLayer::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(weight.size() + bias.size());
  if (layer_norm)
    n += static_cast<std::size_t>(ln_gain.size() + ln_bias.size());
  return n;
}

bool DenseLayer::operator==(const DenseLayer &o) const {
  auto same = [](const auto &a, const auto &b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return layer_norm == o.layer_norm && relu == o.relu && same(weight, o.weight) && same(bias, o.bias) &&
         same(ln_gain, o.ln_gain) && same(ln_bias, o.ln_bias);
}

DenseLayer make_layer(std::size_t in_dim, std::size_t out_dim, bool layer_norm, bool relu, Rng &rng) {
  DenseLayer l;
  const auto rows = static_cast<Eigen::Index>(out_dim);
  const auto cols = static_cast<Eigen::Index>(in_dim);
  l.weight.resize(rows, cols);
  const double scale = std::sqrt(2.0 / static_cast<double>(in_dim));
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      l.weight(r, c) = scale * rng.normal();
  l.bias = Vector::Zero(rows);
  l.layer_norm = layer_norm;
  l.relu = relu;
  if (layer_norm) {
    l.ln_gain = Vector::Ones(rows);
    l.ln_bias = Vector::Zero(rows);
  }
  return l;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto &l : layers)
    n += l.parameter_count();
  return n;
}

void Network::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto &l = layers[i];
    if (static_cast<std::size_t>(l.bias.size()) != l.out_dim())
      throw Error("network", "layer " + std::to_string(i) + " bias size mismatch");
    if (l.layer_norm &&
        (static_cast<std::size_t>(l.ln_gain.size()) != l.out_dim() || l.ln_bias.size() != l.ln_gain.size()))
      throw Error("network", "layer " + std::to_string(i) + " layer-norm parameter size mismatch");
    if (i + 1 < layers.size() && l.out_dim() != layers[i + 1].in_dim())
      throw Error("network", "layer " + std::to_string(i) + " output " + std::to_string(l.out_dim()) +
                                 " != layer " + std::to_string(i + 1) + " input " +
                                 std::to_string(layers[i + 1].in_dim()));
    if (!l.weight.allFinite() || !l.bias.allFinite() || !l.ln_gain.allFinite() || !l.ln_bias.allFinite())
      throw Error("network", "layer " + std::to_string(i) + " has non-finite parameters");
  }
}

Matrix apply_layer(const DenseLayer &layer, const Matrix &input, LayerCache *cache) {
  if (static_cast<std::size_t>(input.rows()) != layer.in_dim())
    throw Error("dimension", "layer expects input dimension " + std::to_string(layer.in_dim()) + ", got " +
                                 std::to_string(input.rows()));
  Matrix pre = layer.weight * input;
  pre.colwise() += layer.bias;
  Matrix out;
  if (layer.layer_norm) {
    const auto n = static_cast<double>(pre.rows());
    Matrix normalized(pre.rows(), pre.cols());
    Vector inv_std(pre.cols());
    for (Eigen::Index c = 0; c < pre.cols(); ++c) {
      double mean = pre.col(c).sum() / n;
      double var = (pre.col(c).array() - mean).square().sum() / n;
      double is = 1.0 / std::sqrt(var + kLayerNormEpsilon);
      inv_std[c] = is;
      normalized.col(c) = (pre.col(c).array() - mean) * is;
    }
    Matrix affine = (normalized.array().colwise() * layer.ln_gain.array()).colwise() + layer.ln_bias.array();
    out = layer.relu ? Matrix(affine.cwiseMax(0.0)) : affine;
    if (cache) {
      cache->normalized = std::move(normalized);
      cache->inv_std = std::move(inv_std);
      cache->affine = std::move(affine);
    }
  } else {
    out = layer.relu ? Matrix(pre.cwiseMax(0.0)) : pre;
  }
  if (cache)
    cache->pre = std::move(pre);
  return out;
}

ForwardPass forward(const Network &net, const Matrix &batch) {
  ForwardPass pass;
  pass.outputs.reserve(net.layers.size() + 1);
  pass.caches.resize(net.layers.size());
  pass.outputs.push_back(batch);
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    pass.outputs.push_back(apply_layer(net.layers[i], pass.outputs.back(), &pass.caches[i]));
  return pass;
}

ForwardPass forward(const Network &net, const Vector &x) { return forward(net, Matrix(x)); }

Matrix predict(const Network &net, const Matrix &batch) {
  Matrix cur = batch;
  for (const auto &l : net.layers)
    cur = apply_layer(l, cur);
  return cur;
}

Vector predict(const Network &net, const Vector &x) { return predict(net, Matrix(x)).col(0); }

std::size_t LossSpec::dim() const {
  std::size_t d = 0;
  for (const auto &s : segments)
    d = std::max(d, s.offset + s.width);
  return d;
}

void LossSpec::validate() const {
  std::size_t offset = 0;
  for (const auto &s : segments) {
    if (s.offset != offset || s.width == 0)
      throw Error("loss_spec", "loss segments must tile the output without gaps or overlap (at slot " +
                                   std::to_string(offset) + ")");
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight))
      throw Error("loss_spec", "segment weights must be finite and non-negative");
    offset += s.width;
  }
}

double loss(const LossSpec &spec, const Vector &prediction, const Vector &target) {
  if (prediction.size() != target.size() || static_cast<std::size_t>(prediction.size()) != spec.dim())
    throw Error("dimension", "loss: prediction/target/spec dimensions disagree");
  if (!prediction.allFinite() || !target.allFinite())
    throw Error("non_finite", "loss: non-finite prediction or target");
  double total = 0.0;
  for (const auto &s : spec.segments) {
    auto p = prediction.segment(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.width));
    auto t = target.segment(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.width));
    double seg = 0.0;
    switch (s.kind) {
    case LossKind::MeanSquared:
      seg = (p - t).squaredNorm();
      break;
    case LossKind::BinaryCrossEntropy:
      for (Eigen::Index i = 0; i < p.size(); ++i)
        seg += softplus(p[i]) - t[i] * p[i];
      break;
    case LossKind::SoftmaxCrossEntropy: {
      double mx = p.maxCoeff();
      double lse = mx + std::log((p.array() - mx).exp().sum());
      seg = t.sum() * lse - t.dot(p);
      break;
    }
    }
    total += s.weight * seg;
  }
  return total;
}

Vector loss_gradient(const LossSpec &spec, const Vector &prediction, const Vector &target) {
  if (prediction.size() != target.size() || static_cast<std::size_t>(prediction.size()) != spec.dim())
    throw Error("dimension", "loss_gradient: prediction/target/spec dimensions disagree");
  Vector g(prediction.size());
  for (const auto &s : spec.segments) {
    const auto off = static_cast<Eigen::Index>(s.offset);
    const auto w = static_cast<Eigen::Index>(s.width);
    auto p = prediction.segment(off, w);
    auto t = target.segment(off, w);
    switch (s.kind) {
    case LossKind::MeanSquared:
      g.segment(off, w) = 2.0 * s.weight * (p - t);
      break;
    case LossKind::BinaryCrossEntropy:
      for (Eigen::Index i = 0; i < w; ++i)
        g[off + i] = s.weight * (sigmoid(p[i]) - t[i]);
      break;
    case LossKind::SoftmaxCrossEntropy: {
      double mx = p.maxCoeff();
      Vector e = (p.array() - mx).exp();
      e /= e.sum();
      g.segment(off, w) = s.weight * (e * t.sum() - t);
      break;
    }
    }
  }
  return g;
}

double batch_loss(const LossSpec &spec, const Matrix &prediction, const Matrix &target,
                  const Vector *column_weights) {
  // diverged outputs surface as NaN so the training loop can name the batch
  if (!prediction.allFinite())
    return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (Eigen::Index c = 0; c < prediction.cols(); ++c) {
    double w = column_weights ? (*column_weights)[c] : 1.0;
    if (w == 0.0)
      continue;
    total += w * loss(spec, prediction.col(c), target.col(c));
  }
  return total;
}

Matrix batch_loss_gradient(const LossSpec &spec, const Matrix &prediction, const Matrix &target, double scale,
                           const Vector *column_weights) {
  Matrix g = Matrix::Zero(prediction.rows(), prediction.cols());
  for (Eigen::Index c = 0; c < prediction.cols(); ++c) {
    double w = column_weights ? (*column_weights)[c] : 1.0;
    if (w == 0.0)
      continue;
    g.col(c) = (scale * w) * loss_gradient(spec, prediction.col(c), target.col(c));
  }
  return g;
}

Vector decode_output(const LossSpec &spec, const Vector &prediction) {
  Vector out = prediction;
  for (const auto &s : spec.segments) {
    const auto off = static_cast<Eigen::Index>(s.offset);
    const auto w = static_cast<Eigen::Index>(s.width);
    if (s.kind == LossKind::SoftmaxCrossEntropy) {
      auto p = prediction.segment(off, w);
      double mx = p.maxCoeff();
      Vector e = (p.array() - mx).exp();
      out.segment(off, w) = e / e.sum();
    } else if (s.kind == LossKind::BinaryCrossEntropy) {
      for (Eigen::Index i = 0; i < w; ++i)
        out[off + i] = sigmoid(prediction[off + i]);
    }
  }
  return out;
}

Gradients Gradients::zeros_like(const Network &net) {
  Gradients g;
  for (const auto &l : net.layers) {
    LayerGradient lg;
    lg.weight = Matrix::Zero(l.weight.rows(), l.weight.cols());
    lg.bias = Vector::Zero(l.bias.size());
    lg.ln_gain = Vector::Zero(l.ln_gain.size());
    lg.ln_bias = Vector::Zero(l.ln_bias.size());
    g.layers.push_back(std::move(lg));
  }
  return g;
}

void Gradients::add(const Gradients &o) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += o.layers[i].weight;
    layers[i].bias += o.layers[i].bias;
    layers[i].ln_gain += o.layers[i].ln_gain;
    layers[i].ln_bias += o.layers[i].ln_bias;
  }
}

void Gradients::scale(double f) {
  for (auto &l : layers) {
    l.weight *= f;
    l.bias *= f;
    l.ln_gain *= f;
    l.ln_bias *= f;
  }
  input *= f;
}

Gradients backprop(const Network &net, const ForwardPass &pass, const Matrix &output_grad) {
  Gradients grads;
  grads.layers.resize(net.layers.size());
  Matrix delta = output_grad;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const DenseLayer &l = net.layers[k];
    const LayerCache &cache = pass.caches[k];
    LayerGradient &g = grads.layers[k];
    if (l.relu) {
      const Matrix &act_in = l.layer_norm ? cache.affine : cache.pre;
      delta = (act_in.array() > 0.0).select(delta, 0.0);
    }
    if (l.layer_norm) {
      g.ln_gain = (delta.array() * cache.normalized.array()).rowwise().sum();
      g.ln_bias = delta.rowwise().sum();
      Matrix dnorm = delta.array().colwise() * l.ln_gain.array();
      const auto n = static_cast<double>(delta.rows());
      Matrix dpre(delta.rows(), delta.cols());
      for (Eigen::Index c = 0; c < delta.cols(); ++c) {
        auto xhat = cache.normalized.col(c);
        auto dx = dnorm.col(c);
        double mean_dx = dx.sum() / n;
        double mean_dx_xhat = dx.dot(xhat) / n;
        dpre.col(c) = cache.inv_std[c] * (dx.array() - mean_dx - xhat.array() * mean_dx_xhat);
      }
      delta = std::move(dpre);
    } else {
      g.ln_gain = Vector::Zero(l.ln_gain.size());
      g.ln_bias = Vector::Zero(l.ln_bias.size());
    }
    g.weight = delta * pass.outputs[k].transpose();
    g.bias = delta.rowwise().sum();
    delta = l.weight.transpose() * delta;
  }
  grads.input = std::move(delta);
  return grads;
}

Gradients backward(const Network &net, const LossSpec &spec, const ForwardPass &pass, const Vector &target) {
  Matrix dout = loss_gradient(spec, pass.output().col(0), target);
  return backprop(net, pass, dout);
}

std::vector<double *> parameter_pointers(Network &net) {
  std::vector<double *> ptrs;
  for (auto &l : net.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i)
      ptrs.push_back(l.weight.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      ptrs.push_back(l.bias.data() + i);
    if (l.layer_norm) {
      for (Eigen::Index i = 0; i < l.ln_gain.size(); ++i)
        ptrs.push_back(l.ln_gain.data() + i);
      for (Eigen::Index i = 0; i < l.ln_bias.size(); ++i)
        ptrs.push_back(l.ln_bias.data() + i);
    }
  }
  return ptrs;
}

std::vector<double> flatten(const Gradients &grads, const Network &net) {
  std::vector<double> out;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto &g = grads.layers[k];
    out.insert(out.end(), g.weight.data(), g.weight.data() + g.weight.size());
    out.insert(out.end(), g.bias.data(), g.bias.data() + g.bias.size());
    if (net.layers[k].layer_norm) {
      out.insert(out.end(), g.ln_gain.data(), g.ln_gain.data() + g.ln_gain.size());
      out.insert(out.end(), g.ln_bias.data(), g.ln_bias.data() + g.ln_bias.size());
    }
  }
  return out;
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error("config", "learning rate must be positive");
  if (batch_size == 0)
    throw Error("config", "batch size must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw Error("config", "momentum must be in [0, 1)");
}

void sgd_step(Network &net, const Gradients &grads, double lr) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    auto &l = net.layers[k];
    const auto &g = grads.layers[k];
    l.weight -= lr * g.weight;
    l.bias -= lr * g.bias;
    if (l.layer_norm) {
      l.ln_gain -= lr * g.ln_gain;
      l.ln_bias -= lr * g.ln_bias;
    }
  }
}

void Optimizer::step(Network &net, const Gradients &grads, std::size_t slot) {
  if (momentum_ == 0.0) {
    sgd_step(net, grads, lr_);
    return;
  }
  if (velocity_.size() <= slot)
    velocity_.resize(slot + 1);
  Gradients &v = velocity_[slot];
  if (v.layers.empty())
    v = Gradients::zeros_like(net);
  v.scale(momentum_);
  v.add(grads);
  sgd_step(net, v, lr_);
}

std::vector<double> run_epochs(const SgdConfig &cfg, std::size_t n_samples,
                               const std::function<double(std::span<const std::size_t>)> &step_batch) {
  cfg.validate();
  std::vector<double> trace;
  if (cfg.epochs == 0)
    return trace;
  if (n_samples == 0)
    throw Error("empty_dataset", "cannot train on an empty dataset");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order = iota_indices(n_samples);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle)
      rng.shuffle(order);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_samples; start += cfg.batch_size, ++batch_index) {
      std::size_t end = std::min(n_samples, start + cfg.batch_size);
      double l = step_batch(std::span<const std::size_t>(order.data() + start, end - start));
      if (!std::isfinite(l))
        throw Error("non_finite_loss", "non-finite training loss at epoch " + std::to_string(epoch) +
                                           ", batch " + std::to_string(batch_index));
      total += l;
    }
    trace.push_back(total / static_cast<double>(n_samples));
  }
  return trace;
}

TrainResult train(Network &net, const LossSpec &spec, const SgdConfig &cfg, const Matrix &inputs,
                  const Matrix &targets) {
  spec.validate();
  net.validate();
  if (inputs.cols() != targets.cols())
    throw Error("dimension", "train: inputs and targets have different sample counts");
  if (static_cast<std::size_t>(inputs.rows()) != net.in_dim() ||
      static_cast<std::size_t>(targets.rows()) != net.out_dim() || spec.dim() != net.out_dim())
    throw Error("dimension", "train: data dimensions do not match the network");
  Optimizer opt(cfg.learning_rate, cfg.momentum);
  TrainResult result;
  result.loss_trace = run_epochs(cfg, static_cast<std::size_t>(inputs.cols()), [&](std::span<const std::size_t> idx) {
    const auto b = static_cast<Eigen::Index>(idx.size());
    Matrix xb(inputs.rows(), b), tb(targets.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
      xb.col(i) = inputs.col(static_cast<Eigen::Index>(idx[i]));
      tb.col(i) = targets.col(static_cast<Eigen::Index>(idx[i]));
    }
    ForwardPass pass = forward(net, xb);
    double l = batch_loss(spec, pass.output(), tb);
    if (!std::isfinite(l))
      return l;
    Gradients g = backprop(net, pass, batch_loss_gradient(spec, pass.output(), tb, 1.0 / static_cast<double>(b)));
    opt.step(net, g);
    return l;
  });
  return result;
}

GradCheckReport check_gradients(const std::vector<double *> &params, const std::vector<double> &analytic,
                                const std::function<double()> &loss_fn, double h, double tol) {
  if (params.size() != analytic.size())
    throw Error("grad_check", "parameter and gradient counts differ");
  GradCheckReport report;
  report.parameters = params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = *params[i];
    *params[i] = saved + h;
    double up = loss_fn();
    *params[i] = saved - h;
    double down = loss_fn();
    *params[i] = saved;
    double numeric = (up - down) / (2.0 * h);
    double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (rel >= tol)
      ++report.failures;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = i;
    }
  }
  return report;
}

GradCheckReport grad_check(Network &net, const LossSpec &spec, const Vector &x, const Vector &target, double h,
                           double tol) {
  ForwardPass pass = forward(net, x);
  std::vector<double> analytic = flatten(backward(net, spec, pass, target), net);
  return check_gradients(parameter_pointers(net), analytic,
                         [&] { return loss(spec, predict(net, x), target); }, h, tol);
}

} // namespace opembed::nn
