#include "opembed/featurizer.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>

namespace opembed {

using nlohmann::json;

namespace {

using CategoricalGetter = std::function<std::optional<std::string>(const PlanNode &)>;
using NumericGetter = std::function<std::optional<double>(const PlanNode &)>;
using BoolGetter = std::function<std::optional<bool>(const PlanNode &)>;

struct Property {
  std::string name;
  SegmentKind kind;
  CategoricalGetter categorical;
  NumericGetter numeric;
  BoolGetter boolean;
  // attribute statistics expand into attr_width numeric segments
  const std::optional<std::vector<double>> PlanNode::*attrs = nullptr;
};

Property categorical(std::string name, std::optional<std::string> PlanNode::*field) {
  return {std::move(name), SegmentKind::Categorical, [field](const PlanNode &n) { return n.*field; }, {}, {}};
}
Property numeric(std::string name, double PlanNode::*field) {
  return {std::move(name), SegmentKind::Numeric, {}, [field](const PlanNode &n) -> std::optional<double> {
            return n.*field;
          }, {}};
}
Property optional_numeric(std::string name, std::optional<double> PlanNode::*field) {
  return {std::move(name), SegmentKind::Numeric, {}, [field](const PlanNode &n) { return n.*field; }, {}};
}
Property boolean(std::string name, std::optional<bool> PlanNode::*field) {
  return {std::move(name), SegmentKind::Boolean, {}, {}, [field](const PlanNode &n) { return n.*field; }};
}
Property attrs(std::string name, const std::optional<std::vector<double>> PlanNode::*field) {
  Property p{std::move(name), SegmentKind::Numeric, {}, {}, {}};
  p.attrs = field;
  return p;
}

// Operator type followed by the naive-encoding feature table, in table order.
const std::vector<Property> &properties() {
  static const std::vector<Property> props = {
      {"node_type", SegmentKind::Categorical,
       [](const PlanNode &n) -> std::optional<std::string> { return n.node_type; }, {}, {}},
      numeric("plan_width", &PlanNode::plan_width),
      numeric("plan_rows", &PlanNode::plan_rows),
      numeric("plan_buffers", &PlanNode::plan_buffers),
      numeric("estimated_ios", &PlanNode::estimated_ios),
      numeric("total_cost", &PlanNode::total_cost),
      categorical("join_type", &PlanNode::join_type),
      categorical("parent_relationship", &PlanNode::parent_relationship),
      optional_numeric("hash_buckets", &PlanNode::hash_buckets),
      categorical("hash_algorithm", &PlanNode::hash_algorithm),
      categorical("sort_key", &PlanNode::sort_key),
      categorical("sort_method", &PlanNode::sort_method),
      categorical("relation_name", &PlanNode::relation_name),
      attrs("attr_mins", &PlanNode::attr_mins),
      attrs("attr_medians", &PlanNode::attr_medians),
      attrs("attr_maxs", &PlanNode::attr_maxs),
      categorical("index_name", &PlanNode::index_name),
      boolean("scan_direction", &PlanNode::scan_direction),
      categorical("agg_strategy", &PlanNode::agg_strategy),
      boolean("partial_mode", &PlanNode::partial_mode),
      categorical("agg_operator", &PlanNode::agg_operator),
  };
  return props;
}

std::string attr_segment_name(const std::string &base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

// Welford accumulator: keeps the standardized training data centered to
// well under 1e-9 even for large raw magnitudes.
struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0.0; }
};

} // namespace

std::string to_string(SegmentKind kind) {
  switch (kind) {
  case SegmentKind::Numeric:
    return "numeric";
  case SegmentKind::Boolean:
    return "boolean";
  case SegmentKind::Categorical:
    return "categorical";
  }
  return "numeric";
}

SegmentKind segment_kind_from_string(const std::string &s) {
  if (s == "numeric")
    return SegmentKind::Numeric;
  if (s == "boolean")
    return SegmentKind::Boolean;
  if (s == "categorical")
    return SegmentKind::Categorical;
  throw Error("schema", "unknown segment kind '" + s + "'");
}

const Segment *FeatureSchema::find(const std::string &feature) const {
  for (const auto &s : segments_)
    if (s.feature == feature)
      return &s;
  return nullptr;
}

std::vector<std::string> FeatureSchema::slot_names() const {
  std::vector<std::string> names;
  names.reserve(total_dim_);
  for (const auto &s : segments_) {
    if (s.kind == SegmentKind::Categorical)
      for (const auto &v : s.vocabulary)
        names.push_back(s.feature + "=" + v);
    else
      names.push_back(s.feature);
  }
  return names;
}

json FeatureSchema::to_json() const {
  json segs = json::array();
  for (const auto &s : segments_) {
    json j{{"feature", s.feature}, {"kind", to_string(s.kind)}, {"offset", s.offset}, {"width", s.width}};
    if (s.kind == SegmentKind::Categorical)
      j["vocabulary"] = s.vocabulary;
    if (s.kind == SegmentKind::Numeric) {
      j["mean"] = s.mean;
      j["stddev"] = s.stddev;
    }
    segs.push_back(std::move(j));
  }
  return json{{"attr_width", attr_width_}, {"total_dim", total_dim_}, {"segments", std::move(segs)},
              {"slots", slot_names()}};
}

FeatureSchema FeatureSchema::from_json(const json &j) {
  FeatureSchema schema;
  try {
    schema.attr_width_ = j.at("attr_width").get<std::size_t>();
    for (const auto &sj : j.at("segments")) {
      Segment s;
      s.feature = sj.at("feature").get<std::string>();
      s.kind = segment_kind_from_string(sj.at("kind").get<std::string>());
      s.offset = sj.at("offset").get<std::size_t>();
      s.width = sj.at("width").get<std::size_t>();
      if (s.kind == SegmentKind::Categorical)
        s.vocabulary = sj.at("vocabulary").get<std::vector<std::string>>();
      if (s.kind == SegmentKind::Numeric) {
        s.mean = sj.at("mean").get<double>();
        s.stddev = sj.at("stddev").get<double>();
      }
      schema.segments_.push_back(std::move(s));
    }
  } catch (const json::exception &e) {
    throw Error("schema", std::string("malformed schema: ") + e.what());
  }
  schema.finalize();
  if (j.contains("total_dim") && j.at("total_dim").get<std::size_t>() != schema.total_dim_)
    throw Error("schema", "schema total_dim does not match its segments");
  return schema;
}

void FeatureSchema::finalize() {
  std::size_t offset = 0;
  for (auto &s : segments_) {
    if (s.offset != offset)
      throw Error("schema", "segment '" + s.feature + "' does not start at slot " + std::to_string(offset));
    if (s.kind == SegmentKind::Categorical && s.width != s.vocabulary.size())
      throw Error("schema", "segment '" + s.feature + "' width does not match its vocabulary");
    if (s.width == 0)
      throw Error("schema", "segment '" + s.feature + "' is empty");
    offset += s.width;
  }
  total_dim_ = offset;
  hash_ = content_hash(to_json().dump());
}

FeatureSchema build_schema(const Corpus &corpus) {
  auto ops = walk_operators(corpus);
  if (ops.empty())
    throw Error("empty_corpus", "cannot build a feature schema from an empty corpus");

  FeatureSchema schema;
  for (const auto &op : ops)
    for (const auto &p : properties())
      if (p.attrs && (op.node->*p.attrs))
        schema.attr_width_ = std::max(schema.attr_width_, (op.node->*p.attrs)->size());

  std::size_t offset = 0;
  auto push = [&](Segment s) {
    s.offset = offset;
    offset += s.width;
    schema.segments_.push_back(std::move(s));
  };

  for (const auto &p : properties()) {
    if (p.attrs) {
      for (std::size_t i = 0; i < schema.attr_width_; ++i) {
        Moments m;
        for (const auto &op : ops) {
          const auto &v = op.node->*p.attrs;
          if (v && i < v->size())
            m.add((*v)[i]);
        }
        if (m.n == 0)
          continue;
        Segment s;
        s.feature = attr_segment_name(p.name, i);
        s.mean = m.mean;
        s.stddev = m.stddev() < FeatureSchema::kDegenerateStddev ? FeatureSchema::kStddevSentinel : m.stddev();
        push(std::move(s));
      }
      continue;
    }
    switch (p.kind) {
    case SegmentKind::Categorical: {
      Segment s;
      s.feature = p.name;
      s.kind = SegmentKind::Categorical;
      std::map<std::string, std::size_t> seen;
      for (const auto &op : ops)
        if (auto v = p.categorical(*op.node); v && !seen.contains(*v)) {
          seen.emplace(*v, s.vocabulary.size());
          s.vocabulary.push_back(*v);
        }
      s.width = s.vocabulary.size();
      if (s.width > 0)
        push(std::move(s));
      break;
    }
    case SegmentKind::Numeric: {
      Moments m;
      for (const auto &op : ops)
        if (auto v = p.numeric(*op.node))
          m.add(*v);
      if (m.n == 0)
        break;
      Segment s;
      s.feature = p.name;
      s.mean = m.mean;
      s.stddev = m.stddev() < FeatureSchema::kDegenerateStddev ? FeatureSchema::kStddevSentinel : m.stddev();
      push(std::move(s));
      break;
    }
    case SegmentKind::Boolean: {
      bool any = false;
      for (const auto &op : ops)
        any = any || p.boolean(*op.node).has_value();
      if (any) {
        Segment s;
        s.feature = p.name;
        s.kind = SegmentKind::Boolean;
        push(std::move(s));
      }
      break;
    }
    }
  }
  schema.finalize();
  return schema;
}

Vector encode(const FeatureSchema &schema, const PlanNode &node, EncodeStats *stats) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(schema.total_dim()));
  auto standardize = [](const Segment &s, double raw) { return (raw - s.mean) / s.stddev; };

  for (const auto &p : properties()) {
    if (p.attrs) {
      const auto &vals = node.*p.attrs;
      if (!vals)
        continue;
      if (vals->size() > schema.attr_width())
        throw Error("schema", p.name + " has " + std::to_string(vals->size()) +
                                  " entries but the schema allows " + std::to_string(schema.attr_width()));
      for (std::size_t i = 0; i < vals->size(); ++i)
        if (const Segment *s = schema.find(attr_segment_name(p.name, i)))
          v[static_cast<Eigen::Index>(s->offset)] = standardize(*s, (*vals)[i]);
      continue;
    }
    const Segment *s = schema.find(p.name);
    switch (p.kind) {
    case SegmentKind::Categorical: {
      auto value = p.categorical(node);
      if (!value)
        break;
      bool found = false;
      if (s) {
        for (std::size_t i = 0; i < s->vocabulary.size(); ++i)
          if (s->vocabulary[i] == *value) {
            v[static_cast<Eigen::Index>(s->offset + i)] = 1.0;
            found = true;
            break;
          }
      }
      if (!found && stats) {
        ++stats->unknown_categoricals;
        ++stats->unknown_by_feature[p.name];
      }
      break;
    }
    case SegmentKind::Numeric:
      if (auto raw = p.numeric(node); raw && s)
        v[static_cast<Eigen::Index>(s->offset)] = standardize(*s, *raw);
      break;
    case SegmentKind::Boolean:
      if (auto b = p.boolean(node); b && s)
        v[static_cast<Eigen::Index>(s->offset)] = *b ? 1.0 : 0.0;
      break;
    }
  }
  return v;
}

std::vector<TrainingTriple> extract_triples(const FeatureSchema &schema, const Corpus &corpus,
                                            EncodeStats *stats) {
  std::vector<TrainingTriple> out;
  const auto dim = static_cast<Eigen::Index>(schema.total_dim());
  for (const auto &op : walk_operators(corpus)) {
    TrainingTriple t;
    t.x = encode(schema, *op.node, stats);
    t.has_c1 = op.child1 != nullptr;
    t.has_c2 = op.child2 != nullptr;
    t.c1 = t.has_c1 ? encode(schema, *op.child1, stats) : Vector::Zero(dim);
    t.c2 = t.has_c2 ? encode(schema, *op.child2, stats) : Vector::Zero(dim);
    t.record_index = op.record_index;
    t.node_index = op.node_index;
    out.push_back(std::move(t));
  }
  return out;
}

Matrix encode_corpus(const FeatureSchema &schema, const Corpus &corpus, EncodeStats *stats) {
  auto ops = walk_operators(corpus);
  Matrix m(static_cast<Eigen::Index>(ops.size()), static_cast<Eigen::Index>(schema.total_dim()));
  for (std::size_t i = 0; i < ops.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = encode(schema, *ops[i].node, stats).transpose();
  return m;
}

std::string check_segments(const FeatureSchema &schema, const Vector &v) {
  if (static_cast<std::size_t>(v.size()) != schema.total_dim())
    return "dimension " + std::to_string(v.size()) + " != " + std::to_string(schema.total_dim());
  for (const auto &s : schema.segments()) {
    auto seg = v.segment(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.width));
    switch (s.kind) {
    case SegmentKind::Categorical: {
      int ones = 0;
      for (double x : seg) {
        if (x != 0.0 && x != 1.0)
          return s.feature + ": non-binary one-hot value";
        ones += x == 1.0;
      }
      if (ones > 1)
        return s.feature + ": more than one hot slot";
      break;
    }
    case SegmentKind::Boolean:
      if (seg[0] != 0.0 && seg[0] != 1.0)
        return s.feature + ": boolean slot not in {0,1}";
      break;
    case SegmentKind::Numeric:
      if (!std::isfinite(seg[0]))
        return s.feature + ": non-finite numeric slot";
      break;
    }
  }
  return {};
}

void write_encoded_csv(std::ostream &out, const FeatureSchema &schema, const Corpus &corpus) {
  out << "query_id,op_index";
  for (const auto &n : schema.slot_names())
    out << ',' << n;
  out << '\n';
  auto ops = walk_operators(corpus);
  char buf[32];
  for (const auto &op : ops) {
    out << corpus.records[op.record_index].query_id << ',' << op.node_index;
    Vector v = encode(schema, *op.node);
    for (double x : v) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
}

} // namespace opembed
