#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opembed/common.hpp"

namespace opembed {

/// One physical operator of a query plan. Optional fields are absent when
/// they do not apply to the operator type; zero-filling is the featurizer's
/// job, not this layer's.
struct PlanNode {
  std::string node_type;

  double plan_width = 0.0;
  double plan_rows = 0.0;
  double plan_buffers = 0.0;
  double estimated_ios = 0.0;
  double total_cost = 0.0;

  // joins
  std::optional<std::string> join_type;
  std::optional<std::string> parent_relationship;
  // hash
  std::optional<double> hash_buckets;
  std::optional<std::string> hash_algorithm;
  // sort
  std::optional<std::string> sort_key;
  std::optional<std::string> sort_method;
  // scans
  std::optional<std::string> relation_name;
  std::optional<std::string> index_name;
  std::optional<bool> scan_direction;
  std::optional<std::vector<double>> attr_mins;
  std::optional<std::vector<double>> attr_medians;
  std::optional<std::vector<double>> attr_maxs;
  // aggregates
  std::optional<std::string> agg_strategy;
  std::optional<bool> partial_mode;
  std::optional<std::string> agg_operator;

  // ground truth
  std::optional<double> actual_rows;
  std::optional<double> actual_latency_ms;

  std::vector<PlanNode> children;

  bool operator==(const PlanNode &) const = default;
};

struct QueryRecord {
  std::string query_id;
  std::optional<std::string> user_label;
  PlanNode root;

  bool operator==(const QueryRecord &) const = default;
};

/// Records are stored in arrival order; `records[i]` arrived i-th.
struct Corpus {
  std::vector<QueryRecord> records;

  bool operator==(const Corpus &) const = default;
};

/// One operator visited by `walk_operators`, with its first two children.
struct OperatorRef {
  std::size_t record_index = 0;
  std::size_t node_index = 0; // pre-order position within the query
  const PlanNode *node = nullptr;
  const PlanNode *child1 = nullptr;
  const PlanNode *child2 = nullptr;
};

Corpus parse_corpus(const nlohmann::json &doc, std::vector<std::string> *warnings = nullptr);
Corpus parse_corpus_text(const std::string &text, std::vector<std::string> *warnings = nullptr);
Corpus load_corpus(const std::string &path, std::vector<std::string> *warnings = nullptr);

nlohmann::json corpus_to_json(const Corpus &corpus);
void save_corpus(const Corpus &corpus, const std::string &path);

/// Depth-first pre-order over every query. Children past the second are
/// dropped from the tuple but still visited.
std::vector<OperatorRef> walk_operators(const Corpus &corpus);

/// Sub-corpus holding the given records, in the given order.
Corpus select_records(const Corpus &corpus, const std::vector<std::size_t> &indices);

struct CorpusSummary {
  std::size_t queries = 0;
  std::size_t operators = 0;
  std::map<std::string, std::size_t> operators_by_type;
  std::map<std::size_t, std::size_t> query_depths; // depth -> #queries
  std::size_t max_depth = 0;
  double latency_coverage = 0.0;     // fraction of operators with actual_latency_ms
  double cardinality_coverage = 0.0; // fraction with actual_rows
  double user_coverage = 0.0;        // fraction of queries with a user label
};

CorpusSummary summarize(const Corpus &corpus);
std::string format_summary(const CorpusSummary &summary);

} // namespace opembed
