#include "opembed/plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace opembed {

using nlohmann::json;

namespace {

const std::set<std::string> &known_node_keys() {
  static const std::set<std::string> keys = {
      "node_type",     "plan_width",     "plan_rows",         "plan_buffers",
      "estimated_ios", "total_cost",     "join_type",         "parent_relationship",
      "hash_buckets",  "hash_algorithm", "sort_key",          "sort_method",
      "relation_name", "index_name",     "scan_direction",    "attr_mins",
      "attr_medians",  "attr_maxs",      "agg_strategy",      "partial_mode",
      "agg_operator",  "actual_rows",    "actual_latency_ms", "children"};
  return keys;
}

[[noreturn]] void fail(const std::string &path, const std::string &msg) {
  throw Error("invalid_plan", path + ": " + msg);
}

bool present(const json &j, const char *key) { return j.contains(key) && !j.at(key).is_null(); }

double read_number(const json &j, const char *key, const std::string &path) {
  const json &v = j.at(key);
  if (!v.is_number())
    fail(path, std::string("field '") + key + "' must be a number");
  double d = v.get<double>();
  if (!std::isfinite(d) || d < 0.0)
    fail(path, std::string("field '") + key + "' must be finite and >= 0, got " + v.dump());
  return d;
}

double required_number(const json &j, const char *key, const std::string &path) {
  if (!present(j, key))
    fail(path, std::string("missing required field '") + key + "'");
  return read_number(j, key, path);
}

std::optional<double> optional_number(const json &j, const char *key, const std::string &path) {
  if (!present(j, key))
    return std::nullopt;
  return read_number(j, key, path);
}

std::optional<std::string> optional_string(const json &j, const char *key, const std::string &path) {
  if (!present(j, key))
    return std::nullopt;
  if (!j.at(key).is_string())
    fail(path, std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::optional<bool> optional_bool(const json &j, const char *key, const std::string &path) {
  if (!present(j, key))
    return std::nullopt;
  if (!j.at(key).is_boolean())
    fail(path, std::string("field '") + key + "' must be a boolean");
  return j.at(key).get<bool>();
}

std::optional<std::vector<double>> optional_reals(const json &j, const char *key,
                                                  const std::string &path) {
  if (!present(j, key))
    return std::nullopt;
  const json &v = j.at(key);
  if (!v.is_array())
    fail(path, std::string("field '") + key + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto &e : v) {
    if (!e.is_number() || !std::isfinite(e.get<double>()))
      fail(path, std::string("field '") + key + "' must contain finite numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

PlanNode parse_node(const json &j, const std::string &path, std::vector<std::string> *warnings) {
  if (!j.is_object())
    fail(path, "plan node must be an object");
  PlanNode n;
  if (!present(j, "node_type") || !j.at("node_type").is_string())
    fail(path, "missing required field 'node_type'");
  n.node_type = j.at("node_type").get<std::string>();
  n.plan_width = required_number(j, "plan_width", path);
  n.plan_rows = required_number(j, "plan_rows", path);
  n.plan_buffers = required_number(j, "plan_buffers", path);
  n.estimated_ios = required_number(j, "estimated_ios", path);
  n.total_cost = required_number(j, "total_cost", path);

  n.join_type = optional_string(j, "join_type", path);
  n.parent_relationship = optional_string(j, "parent_relationship", path);
  n.hash_buckets = optional_number(j, "hash_buckets", path);
  n.hash_algorithm = optional_string(j, "hash_algorithm", path);
  n.sort_key = optional_string(j, "sort_key", path);
  n.sort_method = optional_string(j, "sort_method", path);
  n.relation_name = optional_string(j, "relation_name", path);
  n.index_name = optional_string(j, "index_name", path);
  n.scan_direction = optional_bool(j, "scan_direction", path);
  n.attr_mins = optional_reals(j, "attr_mins", path);
  n.attr_medians = optional_reals(j, "attr_medians", path);
  n.attr_maxs = optional_reals(j, "attr_maxs", path);
  n.agg_strategy = optional_string(j, "agg_strategy", path);
  n.partial_mode = optional_bool(j, "partial_mode", path);
  n.agg_operator = optional_string(j, "agg_operator", path);
  n.actual_rows = optional_number(j, "actual_rows", path);
  n.actual_latency_ms = optional_number(j, "actual_latency_ms", path);

  if (warnings) {
    for (const auto &[key, _] : j.items())
      if (!known_node_keys().contains(key))
        warnings->push_back(path + ": ignoring unknown key '" + key + "'");
  }

  if (present(j, "children")) {
    const json &kids = j.at("children");
    if (!kids.is_array())
      fail(path, "'children' must be an array");
    for (std::size_t i = 0; i < kids.size(); ++i)
      n.children.push_back(parse_node(kids[i], path + ".children[" + std::to_string(i) + "]", warnings));
  }
  return n;
}

json node_to_json(const PlanNode &n) {
  json j;
  j["node_type"] = n.node_type;
  j["plan_width"] = n.plan_width;
  j["plan_rows"] = n.plan_rows;
  j["plan_buffers"] = n.plan_buffers;
  j["estimated_ios"] = n.estimated_ios;
  j["total_cost"] = n.total_cost;
  auto put = [&j](const char *key, const auto &opt) {
    if (opt)
      j[key] = *opt;
  };
  put("join_type", n.join_type);
  put("parent_relationship", n.parent_relationship);
  put("hash_buckets", n.hash_buckets);
  put("hash_algorithm", n.hash_algorithm);
  put("sort_key", n.sort_key);
  put("sort_method", n.sort_method);
  put("relation_name", n.relation_name);
  put("index_name", n.index_name);
  put("scan_direction", n.scan_direction);
  put("attr_mins", n.attr_mins);
  put("attr_medians", n.attr_medians);
  put("attr_maxs", n.attr_maxs);
  put("agg_strategy", n.agg_strategy);
  put("partial_mode", n.partial_mode);
  put("agg_operator", n.agg_operator);
  put("actual_rows", n.actual_rows);
  put("actual_latency_ms", n.actual_latency_ms);
  json kids = json::array();
  for (const auto &c : n.children)
    kids.push_back(node_to_json(c));
  j["children"] = std::move(kids);
  return j;
}

void walk(const PlanNode &n, std::size_t record, std::size_t &counter, std::vector<OperatorRef> &out) {
  OperatorRef ref;
  ref.record_index = record;
  ref.node_index = counter++;
  ref.node = &n;
  if (!n.children.empty())
    ref.child1 = &n.children[0];
  if (n.children.size() > 1)
    ref.child2 = &n.children[1];
  out.push_back(ref);
  for (const auto &c : n.children)
    walk(c, record, counter, out);
}

std::size_t depth_of(const PlanNode &n) {
  std::size_t d = 0;
  for (const auto &c : n.children)
    d = std::max(d, depth_of(c));
  return d + 1;
}

} // namespace

Corpus parse_corpus(const json &doc, std::vector<std::string> *warnings) {
  if (!doc.is_object() || !doc.contains("queries") || !doc.at("queries").is_array())
    throw Error("parse", "top level must be an object with a 'queries' array");
  Corpus corpus;
  std::set<std::string> seen;
  const json &queries = doc.at("queries");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const json &q = queries[i];
    std::string path = "queries[" + std::to_string(i) + "]";
    if (!q.is_object())
      fail(path, "query must be an object");
    QueryRecord rec;
    if (!q.contains("query_id") || !(q.at("query_id").is_string() || q.at("query_id").is_number_integer()))
      fail(path, "missing required field 'query_id'");
    rec.query_id = q.at("query_id").is_string() ? q.at("query_id").get<std::string>()
                                                : std::to_string(q.at("query_id").get<long long>());
    if (!seen.insert(rec.query_id).second)
      fail(path, "duplicate query_id '" + rec.query_id + "'");
    rec.user_label = optional_string(q, "user", path);
    if (!q.contains("plan"))
      fail(path, "missing required field 'plan'");
    rec.root = parse_node(q.at("plan"), path + ".plan", warnings);
    if (warnings)
      for (const auto &[key, _] : q.items())
        if (key != "query_id" && key != "user" && key != "plan")
          warnings->push_back(path + ": ignoring unknown key '" + key + "'");
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

Corpus parse_corpus_text(const std::string &text, std::vector<std::string> *warnings) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    std::size_t line = 1 + static_cast<std::size_t>(
                               std::count(text.begin(), text.begin() + std::min(e.byte, text.size()), '\n'));
    throw Error("parse", "line " + std::to_string(line) + ": " + e.what());
  }
  return parse_corpus(doc, warnings);
}

Corpus load_corpus(const std::string &path, std::vector<std::string> *warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("io", "cannot open plan file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_corpus_text(ss.str(), warnings);
  } catch (const Error &e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

json corpus_to_json(const Corpus &corpus) {
  json queries = json::array();
  for (const auto &r : corpus.records) {
    json q;
    q["query_id"] = r.query_id;
    q["user"] = r.user_label ? json(*r.user_label) : json(nullptr);
    q["plan"] = node_to_json(r.root);
    queries.push_back(std::move(q));
  }
  return json{{"queries", std::move(queries)}};
}

void save_corpus(const Corpus &corpus, const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("io", "cannot write plan file '" + path + "'");
  out << corpus_to_json(corpus).dump(1) << '\n';
}

std::vector<OperatorRef> walk_operators(const Corpus &corpus) {
  std::vector<OperatorRef> out;
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    std::size_t counter = 0;
    walk(corpus.records[r].root, r, counter, out);
  }
  return out;
}

Corpus select_records(const Corpus &corpus, const std::vector<std::size_t> &indices) {
  Corpus sub;
  sub.records.reserve(indices.size());
  for (std::size_t i : indices)
    sub.records.push_back(corpus.records.at(i));
  return sub;
}

CorpusSummary summarize(const Corpus &corpus) {
  CorpusSummary s;
  s.queries = corpus.records.size();
  std::size_t with_latency = 0, with_rows = 0, with_user = 0;
  for (const auto &r : corpus.records) {
    std::size_t d = depth_of(r.root);
    s.query_depths[d]++;
    s.max_depth = std::max(s.max_depth, d);
    if (r.user_label)
      ++with_user;
  }
  for (const auto &op : walk_operators(corpus)) {
    ++s.operators;
    s.operators_by_type[op.node->node_type]++;
    if (op.node->actual_latency_ms)
      ++with_latency;
    if (op.node->actual_rows)
      ++with_rows;
  }
  if (s.operators > 0) {
    s.latency_coverage = static_cast<double>(with_latency) / static_cast<double>(s.operators);
    s.cardinality_coverage = static_cast<double>(with_rows) / static_cast<double>(s.operators);
  }
  if (s.queries > 0)
    s.user_coverage = static_cast<double>(with_user) / static_cast<double>(s.queries);
  return s;
}

std::string format_summary(const CorpusSummary &s) {
  std::ostringstream os;
  os << "queries: " << s.queries << "\noperators: " << s.operators << "\nmax depth: " << s.max_depth << '\n';
  os << "operators by type:\n";
  for (const auto &[t, c] : s.operators_by_type)
    os << "  " << t << ": " << c << '\n';
  os << "query depths:\n";
  for (const auto &[d, c] : s.query_depths)
    os << "  " << d << ": " << c << '\n';
  os << "label coverage: latency " << 100.0 * s.latency_coverage << "%, cardinality "
     << 100.0 * s.cardinality_coverage << "%, user " << 100.0 * s.user_coverage << "%\n";
  return os.str();
}

} // namespace opembed
