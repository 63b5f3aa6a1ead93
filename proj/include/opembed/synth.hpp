#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "opembed/plan.hpp"

namespace opembed {

/// Synthetic workload with planted, checkable structure.
///
/// - Context: a MergeJoin's two inputs are both wrapped in Sorts with
///   probability `p_mergejoin_sorts`; a HashJoin's inner input is wrapped in a
///   Hash with probability `p_hashjoin_hash`.
/// - Cardinality: an operator reading directly from one of `under_relations`
///   (a scan of it, or a Sort/Hash over such a scan) gets actual = estimate *
///   U[min, max]; one reading from `over_relations` gets estimate / U[min, max];
///   anything else estimate * U[0.7, 1.4]. With card_scope "subtree" the test
///   is on every relation below the operator instead.
/// - Latency: exclusive per-operator latency = a * own cost * U[0.8, 1.2],
///   multiplied by U[slow_min, slow_max] for queries of `slow_template`.
/// - Users: template t belongs to user t mod n_users; a query picks a user
///   uniformly and then one of that user's templates.
struct SynthConfig {
  std::size_t n_queries = 400;
  std::size_t n_users = 4;
  std::size_t n_relations = 8;
  std::size_t n_templates = 12;
  std::size_t attr_width = 3;
  std::uint64_t seed = 7;

  double p_mergejoin_sorts = 0.9;
  double p_hashjoin_hash = 0.9;

  std::string card_scope = "children"; // or "subtree"
  std::vector<std::size_t> under_relations{0};
  std::vector<std::size_t> over_relations{1};
  double misestimate_min = 4.0;
  double misestimate_max = 10.0;

  double latency_per_cost = 0.01;
  std::size_t slow_template = 0;
  double slow_min = 20.0;
  double slow_max = 40.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json &j);
};

enum class CardClass { Under = 0, Correct = 1, Over = 2 };

/// Bookkeeping recorded while generating, independent of the plan walkers.
struct GroundTruth {
  std::size_t queries = 0;
  std::size_t operators = 0;
  std::map<std::string, std::size_t> operators_by_type;
  std::size_t merge_joins = 0;
  std::size_t merge_joins_with_two_sorts = 0;
  std::size_t hash_joins = 0;
  std::size_t hash_joins_with_hash = 0;
  /// Per query (arrival order), per operator (pre-order): the class the
  /// cardinality rule assigned.
  std::vector<std::vector<CardClass>> card_classes;
  std::vector<std::size_t> query_templates;
  std::vector<std::string> query_users;
};

Corpus generate(const SynthConfig &config);
GroundTruth ground_truth(const SynthConfig &config);
std::string describe(const SynthConfig &config);

} // namespace opembed
