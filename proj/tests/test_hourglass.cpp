#include <doctest.h>

#include <cmath>

#include "opembed/hourglass.hpp"
#include "opembed/synth.hpp"

using namespace opembed;

namespace {

struct Fixture {
  Corpus corpus;
  FeatureSchema schema;
  std::vector<TrainingTriple> triples;

  explicit Fixture(std::size_t n) {
    SynthConfig cfg;
    cfg.n_queries = n;
    corpus = generate(cfg);
    schema = build_schema(corpus);
    triples = extract_triples(schema, corpus);
  }
};

HourglassSpec small_spec(std::size_t emb = 8) {
  HourglassSpec s;
  s.hidden_dims = {64, 64, 32, 32, 16, 16};
  s.embedding_dim = emb;
  s.seed = 3;
  return s;
}

double silhouette(const std::vector<Vector> &a, const std::vector<Vector> &b) {
  auto mean_dist = [](const Vector &x, const std::vector<Vector> &set, bool skip_self) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto &y : set) {
      if (skip_self && &x == &y)
        continue;
      s += (x - y).norm();
      ++n;
    }
    return s / static_cast<double>(n);
  };
  double total = 0.0;
  std::size_t n = 0;
  for (int side = 0; side < 2; ++side) {
    const auto &own = side ? b : a;
    const auto &other = side ? a : b;
    for (const auto &x : own) {
      double in = mean_dist(x, own, true), out = mean_dist(x, other, false);
      total += (out - in) / std::max(in, out);
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

} // namespace

TEST_CASE("default layer dimensions") {
  Fixture f(30);
  HourglassSpec spec;
  EmbeddingNetwork net = build_hourglass(spec, f.schema);
  std::vector<std::size_t> expect{f.schema.total_dim(), 256, 256, 128, 128, 64, 64, 32};
  REQUIRE(net.trunk.layers.size() == expect.size() - 1);
  for (std::size_t i = 0; i < net.trunk.layers.size(); ++i) {
    CHECK(net.trunk.layers[i].in_dim() == expect[i]);
    CHECK(net.trunk.layers[i].out_dim() == expect[i + 1]);
    CHECK(net.trunk.layers[i].layer_norm);
    CHECK(net.trunk.layers[i].relu);
  }
  CHECK(net.head1.in_dim() == 32);
  CHECK(net.head1.out_dim() == f.schema.total_dim());
  CHECK(net.head2.out_dim() == f.schema.total_dim());
  CHECK_FALSE(net.head1.layers[0].relu);
  CHECK(net.schema_hash == f.schema.hash());

  spec.embedding_dim = 8;
  CHECK(build_hourglass(spec, f.schema).embedding_dim() == 8);
  spec.embedding_dim = 64;
  CHECK_THROWS_AS(build_hourglass(spec, f.schema), Error);
}

TEST_CASE("zero epochs keep the initial network; cut_off is exact") {
  Fixture f(30);
  EmbeddingNetwork built = build_hourglass(small_spec(), f.schema);
  EmbeddingNetwork net = built;
  nn::SgdConfig cfg;
  cfg.epochs = 0;
  train_embedding(net, f.triples, cfg);
  CHECK(net == built);

  Encoder enc = cut_off(net);
  CHECK(enc.embedding_dim() == 8);
  CHECK(enc.trunk == net.trunk);
  for (std::size_t i = 0; i < 20; ++i) {
    const Vector &x = f.triples[i].x;
    Vector via_trunk = nn::predict(net.trunk, x);
    Vector via_enc = enc(x);
    CHECK(via_trunk == via_enc);
    CHECK(embed(enc, f.schema, *walk_operators(f.corpus)[i].node) == via_enc);
  }
  CHECK(enc(Vector(Vector::Zero(static_cast<Eigen::Index>(f.schema.total_dim())))).allFinite());
}

TEST_CASE("pre-activation output is the normalized value before the relu") {
  Fixture f(20);
  EmbeddingNetwork net = build_hourglass(small_spec(), f.schema);
  Encoder pre = cut_off(net, EmbeddingOutput::PreActivation), post = cut_off(net);
  for (std::size_t i = 0; i < 10; ++i) {
    Vector a = pre(f.triples[i].x), b = post(f.triples[i].x);
    CHECK(a.cwiseMax(0.0) == b);
    CHECK((a.array() < 0.0).any());
  }
}

TEST_CASE("encoder refuses a schema with a different hash") {
  Fixture f(20), g(20);
  SynthConfig other;
  other.n_queries = 20;
  other.seed = 99;
  FeatureSchema foreign = build_schema(generate(other));
  REQUIRE(foreign.hash() != f.schema.hash());
  Encoder enc = cut_off(build_hourglass(small_spec(), f.schema));
  try {
    embed_corpus(enc, foreign, f.corpus);
    FAIL("expected refusal");
  } catch (const Error &e) {
    CHECK(e.code() == "hash_mismatch");
    CHECK(std::string(e.what()).find(foreign.hash()) != std::string::npos);
  }
}

TEST_CASE("full-network gradient check on one triple") {
  Fixture f(10);
  HourglassSpec spec;
  spec.hidden_dims = {6, 5};
  spec.embedding_dim = 3;
  EmbeddingNetwork net = build_hourglass(spec, f.schema);
  for (const auto &t : {f.triples[0], f.triples[1]}) {
    auto report = grad_check(net, t, HeadLossOptions{}, 1e-5, 1e-4);
    CHECK(report.passed());
    HeadLossOptions masked;
    masked.missing_child = MissingChildMode::Masked;
    CHECK(grad_check(net, t, masked, 1e-5, 1e-4).passed());
  }
}

TEST_CASE("training converges and separates operator types") {
  Fixture f(120);
  HourglassSpec spec;
  spec.seed = 3;
  EmbeddingNetwork net = build_hourglass(spec, f.schema);
  nn::SgdConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 5;
  auto result = train_embedding(net, f.triples, cfg);
  REQUIRE(result.loss_trace.size() == 40);
  CHECK(result.loss_trace.back() < 0.5 * result.loss_trace.front());

  Encoder enc = cut_off(net);
  std::vector<Vector> sorts, scans;
  auto ops = walk_operators(f.corpus);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].node->node_type == "Sort" && sorts.size() < 150)
      sorts.push_back(enc(f.triples[i].x));
    if (ops[i].node->node_type == "SeqScan" && scans.size() < 150)
      scans.push_back(enc(f.triples[i].x));
  }
  REQUIRE(sorts.size() > 10);
  REQUIRE(scans.size() > 10);
  CHECK(silhouette(sorts, scans) > 0.0);

  ChildPrediction p = predict_children(net, f.triples[0].x);
  const Segment *type = f.schema.find("node_type");
  REQUIRE(type);
  double s = p.child1.segment(static_cast<Eigen::Index>(type->offset), static_cast<Eigen::Index>(type->width)).sum();
  CHECK(std::abs(s - 1.0) < 1e-9);
}

TEST_CASE("project_2d gives centred, variance-ordered coordinates") {
  Rng rng(4);
  Matrix rows(200, 5);
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j)
      rows(i, j) = rng.normal() * static_cast<double>(5 - j);
  Matrix p = project_2d(rows);
  CHECK(p.rows() == 200);
  CHECK(p.cols() == 2);
  CHECK(std::abs(p.col(0).mean()) < 1e-9);
  CHECK(std::abs(p.col(1).mean()) < 1e-9);
  CHECK(p.col(0).squaredNorm() >= p.col(1).squaredNorm());
  CHECK(std::abs(p.col(0).dot(p.col(1))) < 1e-6 * p.col(0).squaredNorm());
  CHECK_THROWS_AS(project_2d(Matrix::Zero(1, 3)), Error);
}
