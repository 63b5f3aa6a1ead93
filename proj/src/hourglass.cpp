#include "opembed/hourglass.hpp"

#include <algorithm>
#include <cmath>

#include "opembed/reducers.hpp"

namespace opembed {

void HourglassSpec::validate() const {
  if (hidden_dims.empty())
    throw Error("config", "hourglass needs at least one hidden layer");
  if (embedding_dim == 0)
    throw Error("config", "embedding dimension must be positive");
  for (auto d : hidden_dims)
    if (d == 0)
      throw Error("config", "hidden layer sizes must be positive");
  auto narrowest = *std::min_element(hidden_dims.begin(), hidden_dims.end());
  if (embedding_dim >= narrowest)
    throw Error("config", "embedding dimension " + std::to_string(embedding_dim) +
                              " must be smaller than the narrowest hidden layer (" + std::to_string(narrowest) + ")");
}

nn::LossSpec head_loss_spec(const FeatureSchema &schema) {
  nn::LossSpec spec;
  for (const auto &s : schema.segments()) {
    nn::LossSegment seg;
    seg.offset = s.offset;
    seg.width = s.width;
    switch (s.kind) {
    case SegmentKind::Numeric:
      seg.kind = nn::LossKind::MeanSquared;
      break;
    case SegmentKind::Boolean:
      seg.kind = nn::LossKind::BinaryCrossEntropy;
      break;
    case SegmentKind::Categorical:
      seg.kind = nn::LossKind::SoftmaxCrossEntropy;
      break;
    }
    spec.segments.push_back(seg);
  }
  return spec;
}

EmbeddingNetwork build_hourglass(const HourglassSpec &spec, const FeatureSchema &schema) {
  spec.validate();
  if (schema.total_dim() == 0)
    throw Error("config", "schema has no slots");
  Rng rng(spec.seed);
  EmbeddingNetwork net;
  std::size_t in = schema.total_dim();
  for (auto d : spec.hidden_dims) {
    net.trunk.layers.push_back(nn::make_layer(in, d, true, true, rng));
    in = d;
  }
  net.trunk.layers.push_back(nn::make_layer(in, spec.embedding_dim, true, true, rng));
  net.head1.layers.push_back(nn::make_layer(spec.embedding_dim, schema.total_dim(), false, false, rng));
  net.head2.layers.push_back(nn::make_layer(spec.embedding_dim, schema.total_dim(), false, false, rng));
  net.head_loss = head_loss_spec(schema);
  net.schema_hash = schema.hash();
  return net;
}

namespace {

double head_weight(const TrainingTriple &t, int head, const HeadLossOptions &opts) {
  bool present = head == 1 ? t.has_c1 : t.has_c2;
  if (!present && opts.missing_child == MissingChildMode::Masked)
    return 0.0;
  return head == 1 ? opts.head1_weight : opts.head2_weight;
}

void check_triple_dim(const EmbeddingNetwork &net, const TrainingTriple &t) {
  auto d = static_cast<Eigen::Index>(net.input_dim());
  if (t.x.size() != d || t.c1.size() != d || t.c2.size() != d)
    throw Error("dimension", "training triple dimension does not match the network input");
}

struct BatchResult {
  double loss = 0.0;
  nn::Gradients trunk, head1, head2;
};

BatchResult batch_gradients(const EmbeddingNetwork &net, const std::vector<TrainingTriple> &triples,
                            std::span<const std::size_t> idx, const HeadLossOptions &opts, double scale) {
  const auto d = static_cast<Eigen::Index>(net.input_dim());
  const auto b = static_cast<Eigen::Index>(idx.size());
  Matrix x(d, b), c1(d, b), c2(d, b);
  Vector w1(b), w2(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto &t = triples[idx[static_cast<std::size_t>(i)]];
    x.col(i) = t.x;
    c1.col(i) = t.c1;
    c2.col(i) = t.c2;
    w1[i] = head_weight(t, 1, opts);
    w2[i] = head_weight(t, 2, opts);
  }
  nn::ForwardPass trunk_pass = nn::forward(net.trunk, x);
  const Matrix &emb = trunk_pass.output();
  nn::ForwardPass p1 = nn::forward(net.head1, emb);
  nn::ForwardPass p2 = nn::forward(net.head2, emb);

  BatchResult r;
  r.loss = nn::batch_loss(net.head_loss, p1.output(), c1, &w1) + nn::batch_loss(net.head_loss, p2.output(), c2, &w2);
  if (!std::isfinite(r.loss))
    return r;
  r.head1 = nn::backprop(net.head1, p1, nn::batch_loss_gradient(net.head_loss, p1.output(), c1, scale, &w1));
  r.head2 = nn::backprop(net.head2, p2, nn::batch_loss_gradient(net.head_loss, p2.output(), c2, scale, &w2));
  r.trunk = nn::backprop(net.trunk, trunk_pass, r.head1.input + r.head2.input);
  return r;
}

} // namespace

double triple_loss(const EmbeddingNetwork &net, const TrainingTriple &t, const HeadLossOptions &opts) {
  check_triple_dim(net, t);
  Vector emb = nn::predict(net.trunk, t.x);
  double l = 0.0;
  if (double w = head_weight(t, 1, opts); w != 0.0)
    l += w * nn::loss(net.head_loss, nn::predict(net.head1, emb), t.c1);
  if (double w = head_weight(t, 2, opts); w != 0.0)
    l += w * nn::loss(net.head_loss, nn::predict(net.head2, emb), t.c2);
  return l;
}

EmbeddingTrainResult train_embedding(EmbeddingNetwork &net, const std::vector<TrainingTriple> &triples,
                                     const nn::SgdConfig &cfg, const HeadLossOptions &opts) {
  net.trunk.validate();
  net.head1.validate();
  net.head2.validate();
  net.head_loss.validate();
  for (const auto &t : triples)
    check_triple_dim(net, t);
  nn::Optimizer opt(cfg.learning_rate, cfg.momentum);
  EmbeddingTrainResult result;
  result.loss_trace = nn::run_epochs(cfg, triples.size(), [&](std::span<const std::size_t> idx) {
    BatchResult r = batch_gradients(net, triples, idx, opts, 1.0 / static_cast<double>(idx.size()));
    if (!std::isfinite(r.loss))
      return r.loss;
    opt.step(net.trunk, r.trunk, 0);
    opt.step(net.head1, r.head1, 1);
    opt.step(net.head2, r.head2, 2);
    return r.loss;
  });
  return result;
}

nn::GradCheckReport grad_check(EmbeddingNetwork &net, const TrainingTriple &t, const HeadLossOptions &opts,
                               double h, double tol) {
  check_triple_dim(net, t);
  std::vector<TrainingTriple> one{t};
  std::size_t idx = 0;
  BatchResult r = batch_gradients(net, one, std::span<const std::size_t>(&idx, 1), opts, 1.0);
  std::vector<double *> params = nn::parameter_pointers(net.trunk);
  std::vector<double> analytic = nn::flatten(r.trunk, net.trunk);
  for (auto [head, grads] : {std::pair{&net.head1, &r.head1}, std::pair{&net.head2, &r.head2}}) {
    auto p = nn::parameter_pointers(*head);
    auto g = nn::flatten(*grads, *head);
    params.insert(params.end(), p.begin(), p.end());
    analytic.insert(analytic.end(), g.begin(), g.end());
  }
  return nn::check_gradients(params, analytic, [&] { return triple_loss(net, t, opts); }, h, tol);
}

Vector Encoder::operator()(const Vector &x) const { return (*this)(Matrix(x)).col(0); }

Matrix Encoder::operator()(const Matrix &batch) const {
  if (static_cast<std::size_t>(batch.rows()) != input_dim())
    throw Error("dimension", "encoder expects input dimension " + std::to_string(input_dim()) + ", got " +
                                 std::to_string(batch.rows()));
  if (output == EmbeddingOutput::PostActivation)
    return nn::predict(trunk, batch);
  Matrix cur = batch;
  for (std::size_t i = 0; i + 1 < trunk.layers.size(); ++i)
    cur = nn::apply_layer(trunk.layers[i], cur);
  nn::LayerCache cache;
  nn::apply_layer(trunk.layers.back(), cur, &cache);
  return trunk.layers.back().layer_norm ? cache.affine : cache.pre;
}

Encoder cut_off(const EmbeddingNetwork &net, EmbeddingOutput output) {
  Encoder e;
  e.trunk = net.trunk;
  e.schema_hash = net.schema_hash;
  e.output = output;
  return e;
}

ChildPrediction predict_children(const EmbeddingNetwork &net, const Vector &x) {
  Vector emb = nn::predict(net.trunk, x);
  return {nn::decode_output(net.head_loss, nn::predict(net.head1, emb)),
          nn::decode_output(net.head_loss, nn::predict(net.head2, emb))};
}

Vector embed(const Encoder &encoder, const Vector &sparse) { return encoder(sparse); }

Vector embed(const Encoder &encoder, const FeatureSchema &schema, const PlanNode &node) {
  if (schema.hash() != encoder.schema_hash)
    throw Error("hash_mismatch", "encoder was trained against schema " + encoder.schema_hash +
                                     " but schema " + schema.hash() + " was supplied");
  return encoder(encode(schema, node));
}

EmbeddedDataset embed_corpus(const Encoder &encoder, const FeatureSchema &schema, const Corpus &corpus,
                             const OperatorLabeler &labeler) {
  if (schema.hash() != encoder.schema_hash)
    throw Error("hash_mismatch", "encoder was trained against schema " + encoder.schema_hash +
                                     " but schema " + schema.hash() + " was supplied");
  EmbeddedDataset ds;
  ds.dim = encoder.embedding_dim();
  auto ops = walk_operators(corpus);
  Matrix sparse = encode_corpus(schema, corpus);
  Matrix emb = encoder(Matrix(sparse.transpose()));
  for (std::size_t i = 0; i < ops.size(); ++i) {
    EmbeddedRow row;
    row.embedding = emb.col(static_cast<Eigen::Index>(i));
    if (labeler)
      row.label = labeler(ops[i]);
    row.record_index = ops[i].record_index;
    row.node_index = ops[i].node_index;
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

Matrix project_2d(const Matrix &rows) {
  if (rows.rows() < 2)
    throw Error("config", "projection needs at least two rows");
  if (rows.cols() < 2)
    throw Error("config", "projection needs at least two columns");
  PcaModel pca = fit_pca(rows, 2);
  return transform(pca, rows);
}

Matrix project_2d(const EmbeddedDataset &dataset) {
  Matrix rows(static_cast<Eigen::Index>(dataset.rows.size()), static_cast<Eigen::Index>(dataset.dim));
  for (std::size_t i = 0; i < dataset.rows.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = dataset.rows[i].embedding.transpose();
  return project_2d(rows);
}

} // namespace opembed
