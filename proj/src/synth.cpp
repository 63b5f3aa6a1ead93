#include "opembed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <sstream>

namespace opembed {

using nlohmann::json;

void SynthConfig::validate() const {
  auto prob = [](double p, const char *name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw Error("config", std::string(name) + " must be a probability");
  };
  prob(p_mergejoin_sorts, "p_mergejoin_sorts");
  prob(p_hashjoin_hash, "p_hashjoin_hash");
  if (n_users == 0 || n_templates == 0 || n_relations < 2)
    throw Error("config", "need at least one user, one template and two relations");
  if (n_templates < n_users)
    throw Error("config", "every user needs at least one template (n_templates >= n_users)");
  if (card_scope != "subtree" && card_scope != "children")
    throw Error("config", "card_scope must be 'subtree' or 'children'");
  std::set<std::size_t> seen;
  for (auto r : under_relations)
    if (r >= n_relations || !seen.insert(r).second)
      throw Error("config", "under_relations must be distinct relation indices");
  for (auto r : over_relations)
    if (r >= n_relations || !seen.insert(r).second)
      throw Error("config", "over_relations must be distinct and disjoint from under_relations");
  if (!(misestimate_min >= 2.0) || misestimate_max < misestimate_min)
    throw Error("config", "misestimate factors must satisfy 2 <= min <= max");
  if (slow_template >= n_templates)
    throw Error("config", "slow template out of range");
  if (!(latency_per_cost > 0.0) || slow_min < 1.0 || slow_max < slow_min)
    throw Error("config", "invalid latency parameters");
}

json SynthConfig::to_json() const {
  return json{{"n_queries", n_queries},
              {"n_users", n_users},
              {"n_relations", n_relations},
              {"n_templates", n_templates},
              {"attr_width", attr_width},
              {"seed", seed},
              {"p_mergejoin_sorts", p_mergejoin_sorts},
              {"p_hashjoin_hash", p_hashjoin_hash},
              {"card_scope", card_scope},
              {"under_relations", under_relations},
              {"over_relations", over_relations},
              {"misestimate_min", misestimate_min},
              {"misestimate_max", misestimate_max},
              {"latency_per_cost", latency_per_cost},
              {"slow_template", slow_template},
              {"slow_min", slow_min},
              {"slow_max", slow_max}};
}

SynthConfig SynthConfig::from_json(const json &j) {
  SynthConfig c;
  auto get = [&j](const char *key, auto &field) {
    if (j.contains(key))
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("n_queries", c.n_queries);
  get("n_users", c.n_users);
  get("n_relations", c.n_relations);
  get("n_templates", c.n_templates);
  get("attr_width", c.attr_width);
  get("seed", c.seed);
  get("p_mergejoin_sorts", c.p_mergejoin_sorts);
  get("p_hashjoin_hash", c.p_hashjoin_hash);
  get("card_scope", c.card_scope);
  get("under_relations", c.under_relations);
  get("over_relations", c.over_relations);
  get("misestimate_min", c.misestimate_min);
  get("misestimate_max", c.misestimate_max);
  get("latency_per_cost", c.latency_per_cost);
  get("slow_template", c.slow_template);
  get("slow_min", c.slow_min);
  get("slow_max", c.slow_max);
  return c;
}

namespace {

struct Relation {
  std::string name;
  double base_rows = 0.0;
  double width = 0.0;
  std::vector<double> attr_lo, attr_hi;
};

enum class JoinAlgo { Merge, Hash, NestedLoop };

struct Shape {
  // leaf
  std::size_t relation = 0;
  bool index_scan = false;
  std::size_t index_choice = 0;
  // join
  JoinAlgo algo = JoinAlgo::Hash;
  std::string join_type = "inner";
  std::unique_ptr<Shape> left, right;
  bool is_leaf() const { return !left; }
};

struct Template {
  std::unique_ptr<Shape> root;
  bool aggregate = false;
  std::string agg_strategy, agg_operator;
  bool partial_mode = false;
  bool top_sort = false;
  std::size_t sort_key_variant = 0;
  std::string hash_algorithm;
};

struct Built {
  PlanNode node;
  std::set<std::size_t> relations;
  std::vector<CardClass> classes; // pre-order
  std::size_t first_relation = 0;
  std::set<std::size_t> base; // relation read by this scan, or by the scan a Sort/Hash wraps
};

class Generator {
public:
  explicit Generator(const SynthConfig &cfg) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t r = 0; r < cfg.n_relations; ++r) {
      Rng rng(Rng::derive(cfg.seed, 500 + r));
      Relation rel;
      rel.name = "rel_" + std::to_string(r);
      rel.base_rows = std::exp(rng.uniform(7.0, 10.0));
      rel.width = static_cast<double>(16 + 12 * r + rng.below(8));
      for (std::size_t a = 0; a < cfg.attr_width; ++a) {
        double lo = rng.uniform(0.0, 50.0) * static_cast<double>(r + 1);
        rel.attr_lo.push_back(lo);
        rel.attr_hi.push_back(lo + rng.uniform(10.0, 100.0));
      }
      relations_.push_back(std::move(rel));
    }
    for (std::size_t t = 0; t < cfg.n_templates; ++t)
      templates_.push_back(make_template(t));
  }

  Corpus run(GroundTruth &truth) {
    Corpus corpus;
    truth = GroundTruth{};
    for (std::size_t q = 0; q < cfg_.n_queries; ++q) {
      Rng rng(Rng::derive(cfg_.seed, 100000 + q));
      std::size_t user = static_cast<std::size_t>(rng.below(cfg_.n_users));
      std::vector<std::size_t> owned;
      for (std::size_t t = user; t < cfg_.n_templates; t += cfg_.n_users)
        owned.push_back(t);
      std::size_t tmpl = owned[static_cast<std::size_t>(rng.below(owned.size()))];
      slow_ = tmpl == cfg_.slow_template;
      truth_ = &truth;
      Built b = instantiate(templates_[tmpl], rng);
      char id[32];
      std::snprintf(id, sizeof id, "q%05zu", q);
      QueryRecord rec{id, "user_" + std::to_string(user), std::move(b.node)};
      corpus.records.push_back(std::move(rec));
      truth.queries++;
      truth.card_classes.push_back(std::move(b.classes));
      truth.query_templates.push_back(tmpl);
      truth.query_users.push_back("user_" + std::to_string(user));
    }
    return corpus;
  }

private:
  std::unique_ptr<Shape> make_shape(std::vector<std::size_t> rels, Rng &rng) {
    auto s = std::make_unique<Shape>();
    if (rels.size() == 1) {
      s->relation = rels[0];
      s->index_scan = rng.bernoulli(0.4);
      s->index_choice = static_cast<std::size_t>(rng.below(2));
      return s;
    }
    std::size_t split = 1 + static_cast<std::size_t>(rng.below(rels.size() - 1));
    double a = rng.uniform();
    s->algo = a < 0.4 ? JoinAlgo::Merge : a < 0.8 ? JoinAlgo::Hash : JoinAlgo::NestedLoop;
    double j = rng.uniform();
    s->join_type = j < 0.7 ? "inner" : j < 0.8 ? "semi" : j < 0.9 ? "anti" : "full";
    s->left = make_shape(std::vector<std::size_t>(rels.begin(), rels.begin() + static_cast<std::ptrdiff_t>(split)), rng);
    s->right = make_shape(std::vector<std::size_t>(rels.begin() + static_cast<std::ptrdiff_t>(split), rels.end()), rng);
    return s;
  }

  Template make_template(std::size_t t) {
    Rng rng(Rng::derive(cfg_.seed, 2000 + t));
    std::size_t leaves = 2 + static_cast<std::size_t>(rng.below(4)); // 2..5
    leaves = std::min(leaves, cfg_.n_relations);
    std::vector<std::size_t> all = iota_indices(cfg_.n_relations);
    rng.shuffle(all);
    all.resize(leaves);
    Template tp;
    tp.root = make_shape(all, rng);
    tp.aggregate = rng.bernoulli(0.6);
    static const char *strategies[] = {"plain", "sorted", "hashed"};
    static const char *ops[] = {"max", "min", "avg", "sum", "count"};
    tp.agg_strategy = strategies[rng.below(3)];
    tp.agg_operator = ops[rng.below(5)];
    tp.partial_mode = rng.bernoulli(0.5);
    tp.top_sort = rng.bernoulli(0.3);
    tp.sort_key_variant = static_cast<std::size_t>(rng.below(2));
    tp.hash_algorithm = rng.bernoulli(0.5) ? "murmur3" : "fnv1a";
    return tp;
  }

  CardClass class_for(const std::set<std::size_t> &rels) const {
    auto hit = [&rels](const std::vector<std::size_t> &planted) {
      return std::any_of(planted.begin(), planted.end(), [&rels](std::size_t r) { return rels.contains(r); });
    };
    if (hit(cfg_.under_relations))
      return CardClass::Under;
    if (hit(cfg_.over_relations))
      return CardClass::Over;
    return CardClass::Correct;
  }

  // Fills the ground-truth columns and bookkeeping for a finished node whose
  // children are already in place.
  void finish(Built &b, Rng &rng, double child_cost, const std::set<std::size_t> &below) {
    CardClass c = class_for(cfg_.card_scope == "children" ? below : b.relations);
    double est = b.node.plan_rows;
    double factor = c == CardClass::Under  ? rng.uniform(cfg_.misestimate_min, cfg_.misestimate_max)
                    : c == CardClass::Over ? 1.0 / rng.uniform(cfg_.misestimate_min, cfg_.misestimate_max)
                                           : rng.uniform(0.7, 1.4);
    b.node.actual_rows = est * factor;
    double own_cost = std::max(b.node.total_cost - child_cost, 0.0);
    double latency = cfg_.latency_per_cost * own_cost * rng.uniform(0.8, 1.2);
    if (slow_)
      latency *= rng.uniform(cfg_.slow_min, cfg_.slow_max);
    b.node.actual_latency_ms = latency;
    b.classes.insert(b.classes.begin(), c);
    truth_->operators++;
    truth_->operators_by_type[b.node.node_type]++;
  }

  Built scan(const Shape &s, Rng &rng) {
    const Relation &rel = relations_[s.relation];
    Built b;
    b.relations.insert(s.relation);
    b.first_relation = s.relation;
    PlanNode &n = b.node;
    n.node_type = s.index_scan ? "IndexScan" : "SeqScan";
    double sel = std::min(1.0, rng.lognormal(s.index_scan ? -2.0 : -0.7, 0.5));
    n.plan_rows = rel.base_rows * sel;
    n.plan_width = rel.width;
    n.plan_buffers = n.plan_rows * n.plan_width / 8192.0;
    n.estimated_ios = n.plan_buffers * (s.index_scan ? 0.3 : 1.0);
    n.total_cost = n.plan_rows * (s.index_scan ? 0.02 : 0.01) + n.estimated_ios;
    n.relation_name = rel.name;
    std::vector<double> mins, meds, maxs;
    for (std::size_t a = 0; a < cfg_.attr_width; ++a) {
      double lo = rel.attr_lo[a] + rng.uniform(0.0, 2.0);
      double hi = rel.attr_hi[a] - rng.uniform(0.0, 2.0);
      mins.push_back(lo);
      maxs.push_back(hi);
      meds.push_back(lo + (hi - lo) * rng.uniform(0.4, 0.6));
    }
    if (cfg_.attr_width > 0) {
      n.attr_mins = mins;
      n.attr_medians = meds;
      n.attr_maxs = maxs;
    }
    if (s.index_scan) {
      n.index_name = rel.name + "_idx" + std::to_string(s.index_choice);
      n.scan_direction = rng.bernoulli(0.8);
    }
    finish(b, rng, 0.0, {});
    b.base = {s.relation};
    return b;
  }

  static double sort_cost(const PlanNode &input) {
    double rows = input.plan_rows;
    double ios = rows > 20000 ? rows * input.plan_width / 8192.0 : 0.0;
    return 0.002 * rows * std::log2(rows + 2.0) + ios;
  }

  static double hash_cost(const PlanNode &input) { return 0.004 * input.plan_rows; }

  Built wrap_sort(Built child, std::size_t key_variant, Rng &rng) {
    Built b;
    b.relations = child.relations;
    b.first_relation = child.first_relation;
    PlanNode &n = b.node;
    n.node_type = "Sort";
    n.plan_rows = child.node.plan_rows;
    n.plan_width = child.node.plan_width;
    n.plan_buffers = n.plan_rows * n.plan_width / 8192.0;
    n.estimated_ios = n.plan_rows > 20000 ? n.plan_buffers : 0.0;
    double child_cost = child.node.total_cost;
    n.total_cost = child_cost + sort_cost(child.node);
    n.sort_key = relations_[child.first_relation].name + ".key" + std::to_string(key_variant);
    n.sort_method = n.plan_rows > 20000 ? "external sort" : rng.bernoulli(0.1) ? "top-N heapsort" : "quicksort";
    b.classes = child.classes;
    n.children.push_back(std::move(child.node));
    finish(b, rng, child_cost, child.base);
    b.base = child.base;
    return b;
  }

  Built wrap_hash(Built child, const std::string &algo, Rng &rng) {
    Built b;
    b.relations = child.relations;
    b.first_relation = child.first_relation;
    PlanNode &n = b.node;
    n.node_type = "Hash";
    n.plan_rows = child.node.plan_rows;
    n.plan_width = child.node.plan_width;
    n.plan_buffers = n.plan_rows * n.plan_width / 8192.0;
    n.estimated_ios = 0.0;
    double child_cost = child.node.total_cost;
    n.total_cost = child_cost + hash_cost(child.node);
    n.hash_buckets = std::pow(2.0, std::ceil(std::log2(std::max(n.plan_rows, 1024.0))));
    n.hash_algorithm = algo;
    b.classes = child.classes;
    n.children.push_back(std::move(child.node));
    finish(b, rng, child_cost, child.base);
    b.base = child.base;
    return b;
  }

  Built build(const Shape &s, const Template &tp, Rng &rng) {
    if (s.is_leaf())
      return scan(s, rng);
    Built l = build(*s.left, tp, rng);
    Built r = build(*s.right, tp, rng);
    Built b;
    PlanNode &n = b.node;
    // The join's cost assumes its inputs are prepared (sorted or hashed)
    // whether or not a separate operator does it, so its own features do not
    // reveal the choice.
    double input_cost = l.node.total_cost + r.node.total_cost;
    if (s.algo == JoinAlgo::Merge)
      input_cost += sort_cost(l.node) + sort_cost(r.node);
    else if (s.algo == JoinAlgo::Hash)
      input_cost += hash_cost(r.node);
    switch (s.algo) {
    case JoinAlgo::Merge: {
      n.node_type = "MergeJoin";
      truth_->merge_joins++;
      if (rng.bernoulli(cfg_.p_mergejoin_sorts)) {
        l = wrap_sort(std::move(l), tp.sort_key_variant, rng);
        r = wrap_sort(std::move(r), tp.sort_key_variant, rng);
        truth_->merge_joins_with_two_sorts++;
      }
      break;
    }
    case JoinAlgo::Hash:
      n.node_type = "HashJoin";
      truth_->hash_joins++;
      if (rng.bernoulli(cfg_.p_hashjoin_hash)) {
        r = wrap_hash(std::move(r), tp.hash_algorithm, rng);
        truth_->hash_joins_with_hash++;
      }
      break;
    case JoinAlgo::NestedLoop:
      n.node_type = "NestedLoop";
      break;
    }
    l.node.parent_relationship = "outer";
    r.node.parent_relationship = "inner";
    b.relations = l.relations;
    b.relations.insert(r.relations.begin(), r.relations.end());
    b.first_relation = l.first_relation;
    double lr = l.node.plan_rows, rr = r.node.plan_rows;
    n.plan_rows = std::sqrt(lr * rr) * rng.uniform(0.5, 2.0);
    if (s.join_type == "semi" || s.join_type == "anti")
      n.plan_rows = std::min(n.plan_rows, lr);
    n.plan_width = l.node.plan_width + r.node.plan_width;
    n.plan_buffers = n.plan_rows * n.plan_width / 8192.0;
    n.estimated_ios = 0.0;
    double algo_factor = s.algo == JoinAlgo::NestedLoop ? 0.05 : 0.01;
    double child_cost = l.node.total_cost + r.node.total_cost;
    n.total_cost = input_cost + algo_factor * (lr + rr) + 0.01 * n.plan_rows;
    n.join_type = s.join_type;
    b.classes = l.classes;
    b.classes.insert(b.classes.end(), r.classes.begin(), r.classes.end());
    std::set<std::size_t> below = l.base;
    below.insert(r.base.begin(), r.base.end());
    n.children.push_back(std::move(l.node));
    n.children.push_back(std::move(r.node));
    finish(b, rng, child_cost, below);
    return b;
  }

  Built instantiate(const Template &tp, Rng &rng) {
    Built b = build(*tp.root, tp, rng);
    if (tp.top_sort)
      b = wrap_sort(std::move(b), tp.sort_key_variant, rng);
    if (tp.aggregate) {
      Built a;
      a.relations = b.relations;
      a.first_relation = b.first_relation;
      PlanNode &n = a.node;
      n.node_type = "Aggregate";
      n.plan_rows = tp.agg_strategy == "plain" ? 1.0 : b.node.plan_rows * rng.uniform(0.01, 0.1);
      n.plan_width = 8.0 * static_cast<double>(1 + tp.sort_key_variant);
      n.plan_buffers = tp.agg_strategy == "hashed" ? n.plan_rows * 48.0 / 8192.0 : 0.0;
      n.estimated_ios = 0.0;
      double child_cost = b.node.total_cost;
      n.total_cost = child_cost + 0.003 * b.node.plan_rows;
      n.agg_strategy = tp.agg_strategy;
      n.partial_mode = tp.partial_mode;
      n.agg_operator = tp.agg_operator;
      a.classes = b.classes;
      n.children.push_back(std::move(b.node));
      finish(a, rng, child_cost, b.base);
      b = std::move(a);
    }
    return b;
  }

  const SynthConfig &cfg_;
  std::vector<Relation> relations_;
  std::vector<Template> templates_;
  GroundTruth *truth_ = nullptr;
  bool slow_ = false;
};

} // namespace

Corpus generate(const SynthConfig &config) {
  GroundTruth truth;
  return Generator(config).run(truth);
}

GroundTruth ground_truth(const SynthConfig &config) {
  GroundTruth truth;
  Generator(config).run(truth);
  return truth;
}

std::string describe(const SynthConfig &c) {
  std::ostringstream os;
  os << "synthetic workload (seed " << c.seed << ")\n"
     << "  queries: " << c.n_queries << ", users: " << c.n_users << ", templates: " << c.n_templates
     << ", relations: " << c.n_relations << ", attribute width: " << c.attr_width << "\n"
     << "  users own disjoint template subsets: template t belongs to user_(t mod " << c.n_users << ")\n"
     << "  context: MergeJoin inputs are both Sorts with p = " << c.p_mergejoin_sorts
     << "; HashJoin inner input is a Hash with p = " << c.p_hashjoin_hash << "\n";
  auto names = [](const std::vector<std::size_t> &rels) {
    std::string out;
    for (auto r : rels)
      out += (out.empty() ? "rel_" : ", rel_") + std::to_string(r);
    return out.empty() ? std::string("(none)") : out;
  };
  const char *scope = c.card_scope == "children" ? "reading directly from" : "over";
  os << "  cardinality: operators " << scope << " " << names(c.under_relations)
     << " are under-estimated (actual = est * U[" << c.misestimate_min << ", " << c.misestimate_max << "])\n"
     << "               otherwise operators " << scope << " " << names(c.over_relations)
     << " are over-estimated (actual = est / U[" << c.misestimate_min << ", " << c.misestimate_max << "])\n";
  os << "               everything else: actual = est * U[0.7, 1.4]\n"
     << "  latency: exclusive per-operator latency = " << c.latency_per_cost
     << " * own cost * U[0.8, 1.2]; template " << c.slow_template << " multiplied by U[" << c.slow_min << ", "
     << c.slow_max << "]\n";
  return os.str();
}

} // namespace opembed
