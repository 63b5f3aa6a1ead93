#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "opembed/common.hpp"
#include "opembed/plan.hpp"

namespace opembed {

enum class SegmentKind { Numeric, Boolean, Categorical };

std::string to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(const std::string &s);

/// A contiguous run of slots produced by one operator property. Numeric and
/// boolean segments have width 1 (attribute-statistics vectors contribute one
/// numeric segment per position); a categorical segment is one one-hot group.
struct Segment {
  std::string feature; // property name, e.g. "join_type" or "attr_mins[2]"
  SegmentKind kind = SegmentKind::Numeric;
  std::size_t offset = 0;
  std::size_t width = 1;
  std::vector<std::string> vocabulary; // categorical only, in first-seen order
  double mean = 0.0;                   // numeric only
  double stddev = 1.0;                 // numeric only

  bool operator==(const Segment &) const = default;
};

/// Database-tailored slot layout, built once from a training corpus.
class FeatureSchema {
public:
  static constexpr double kStddevSentinel = 1.0;
  static constexpr double kDegenerateStddev = 1e-12;

  FeatureSchema() = default;

  std::size_t total_dim() const { return total_dim_; }
  std::size_t attr_width() const { return attr_width_; }
  const std::vector<Segment> &segments() const { return segments_; }
  const Segment *find(const std::string &feature) const;
  std::vector<std::string> slot_names() const;

  /// FNV-1a over the canonical JSON form; stable across save/load.
  const std::string &hash() const { return hash_; }

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json &j);

  bool operator==(const FeatureSchema &o) const { return segments_ == o.segments_ && attr_width_ == o.attr_width_; }

private:
  friend FeatureSchema build_schema(const Corpus &corpus);
  void finalize();

  std::vector<Segment> segments_;
  std::size_t attr_width_ = 0;
  std::size_t total_dim_ = 0;
  std::string hash_;
};

/// Counts categorical values that were not in the vocabulary.
struct EncodeStats {
  std::size_t unknown_categoricals = 0;
  std::map<std::string, std::size_t> unknown_by_feature;
};

FeatureSchema build_schema(const Corpus &corpus);

/// One-hot/standardized encoding. Inapplicable and unknown-valued properties
/// leave their slots at zero.
Vector encode(const FeatureSchema &schema, const PlanNode &node, EncodeStats *stats = nullptr);

struct TrainingTriple {
  Vector x;
  Vector c1;
  Vector c2;
  bool has_c1 = false;
  bool has_c2 = false;
  std::size_t record_index = 0;
  std::size_t node_index = 0;
};

std::vector<TrainingTriple> extract_triples(const FeatureSchema &schema, const Corpus &corpus,
                                            EncodeStats *stats = nullptr);

/// Encodes every operator (pre-order) into the rows of a matrix.
Matrix encode_corpus(const FeatureSchema &schema, const Corpus &corpus, EncodeStats *stats = nullptr);

/// Checks the one-hot/boolean invariants. Returns an empty string when the
/// vector is well-formed, otherwise a description of the first violation.
std::string check_segments(const FeatureSchema &schema, const Vector &v);

void write_encoded_csv(std::ostream &out, const FeatureSchema &schema, const Corpus &corpus);

} // namespace opembed
