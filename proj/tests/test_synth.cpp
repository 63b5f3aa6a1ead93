#include <doctest.h>

#include <cmath>

#include "opembed/synth.hpp"
#include "opembed/tasks.hpp"

using namespace opembed;

TEST_CASE("same seed, same corpus; record count matches") {
  SynthConfig cfg;
  cfg.n_queries = 50;
  Corpus a = generate(cfg), b = generate(cfg);
  CHECK(a == b);
  CHECK(a.records.size() == 50);
  CHECK(corpus_to_json(a).dump() == corpus_to_json(b).dump());
  cfg.seed = 8;
  CHECK_FALSE(generate(cfg) == a);
}

TEST_CASE("merge joins get two sorts at the configured rate") {
  SynthConfig cfg;
  cfg.n_queries = 3000;
  GroundTruth gt = ground_truth(cfg);
  REQUIRE(gt.merge_joins >= 2000);
  double rate = static_cast<double>(gt.merge_joins_with_two_sorts) / static_cast<double>(gt.merge_joins);
  CHECK(std::abs(rate - 0.9) <= 0.03);

  // the same fact, recovered from the corpus itself
  Corpus c = generate(cfg);
  std::size_t mj = 0, sorted = 0;
  for (const auto &op : walk_operators(c)) {
    if (op.node->node_type != "MergeJoin")
      continue;
    ++mj;
    sorted += op.child1 && op.child2 && op.child1->node_type == "Sort" && op.child2->node_type == "Sort";
  }
  CHECK(mj == gt.merge_joins);
  CHECK(sorted == gt.merge_joins_with_two_sorts);
}

TEST_CASE("planted cardinality rule is recoverable from the corpus") {
  SynthConfig cfg;
  cfg.n_queries = 200;
  Corpus c = generate(cfg);
  GroundTruth gt = ground_truth(cfg);
  OperatorLabels labels = label_card(c, 2.0);
  std::vector<int> expected;
  for (const auto &q : gt.card_classes)
    for (auto k : q)
      expected.push_back(static_cast<int>(k));
  CHECK(labels.labels == expected);
  std::size_t counts[3] = {0, 0, 0};
  for (int y : labels.labels)
    counts[y]++;
  CHECK(counts[0] > 0);
  CHECK(counts[1] > 0);
  CHECK(counts[2] > 0);
}

TEST_CASE("every operator is valid and fully labelled") {
  SynthConfig cfg;
  cfg.n_queries = 100;
  Corpus c = generate(cfg);
  // a parse of the canonical form re-validates every node
  Corpus back = parse_corpus(corpus_to_json(c));
  CHECK(back == c);
  CorpusSummary s = summarize(c);
  CHECK(s.latency_coverage == 1.0);
  CHECK(s.cardinality_coverage == 1.0);
  CHECK(s.user_coverage == 1.0);
}

TEST_CASE("users own disjoint template subsets") {
  SynthConfig cfg;
  cfg.n_queries = 300;
  GroundTruth gt = ground_truth(cfg);
  for (std::size_t q = 0; q < gt.queries; ++q)
    CHECK(gt.query_users[q] == "user_" + std::to_string(gt.query_templates[q] % cfg.n_users));
}

TEST_CASE("slow template dominates the latency tail") {
  SynthConfig cfg;
  cfg.n_queries = 400;
  Corpus c = generate(cfg);
  GroundTruth gt = ground_truth(cfg);
  OperatorLabels adm = label_admission(c, 95.0);
  std::size_t pos = 0, pos_slow = 0;
  auto ops = walk_operators(c);
  for (std::size_t i = 0; i < ops.size(); ++i)
    if (adm.labels[i] == 1) {
      ++pos;
      pos_slow += gt.query_templates[ops[i].record_index] == cfg.slow_template;
    }
  CHECK(pos > 0);
  CHECK(static_cast<double>(pos_slow) / static_cast<double>(pos) > 0.5);
}

TEST_CASE("config validation and JSON round trip") {
  SynthConfig cfg;
  cfg.p_mergejoin_sorts = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  SynthConfig ok;
  ok.under_relations = {0, 2};
  ok.over_relations = {2};
  CHECK_THROWS_AS(ok.validate(), Error);
  SynthConfig base;
  base.n_queries = 17;
  base.card_scope = "subtree";
  SynthConfig back = SynthConfig::from_json(base.to_json());
  CHECK(back.to_json() == base.to_json());
  CHECK(describe(base).find("rel_0") != std::string::npos);
}
