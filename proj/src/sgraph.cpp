#include "isggen/sgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "isggen/error.hpp"
#include "json.hpp"

namespace isg {

using ojson = nlohmann::ordered_json;

const std::vector<std::string>& Vocabulary::geometric_predicates() {
  static const std::vector<std::string> names{"left of", "right of", "above", "below", "inside", "surrounding"};
  return names;
}

Vocabulary::Vocabulary(std::string version, std::vector<std::string> categories,
                       std::vector<std::string> extra_predicates)
    : version_(std::move(version)), categories_(std::move(categories)) {
  predicates_ = geometric_predicates();
  for (auto& p : extra_predicates) predicates_.push_back(std::move(p));
  for (std::size_t i = 0; i < categories_.size(); ++i)
    if (!cat_index_.emplace(categories_[i], static_cast<int>(i)).second)
      fail(ErrorKind::kValidation, "duplicate category name '" + categories_[i] + "'");
  for (std::size_t i = 0; i < predicates_.size(); ++i)
    if (!pred_index_.emplace(predicates_[i], static_cast<int>(i)).second)
      fail(ErrorKind::kValidation, "duplicate predicate name '" + predicates_[i] + "'");
}

int Vocabulary::category_index(const std::string& name) const {
  auto it = cat_index_.find(name);
  if (it == cat_index_.end()) fail(ErrorKind::kParse, "unknown category '" + name + "'");
  return it->second;
}

int Vocabulary::predicate_index(const std::string& name) const {
  auto it = pred_index_.find(name);
  if (it == pred_index_.end()) fail(ErrorKind::kParse, "unknown predicate '" + name + "'");
  return it->second;
}

const std::string& Vocabulary::category_name(int idx) const {
  if (idx < 0 || idx >= num_categories())
    fail(ErrorKind::kValidation, "category index " + std::to_string(idx) + " out of vocabulary");
  return categories_[idx];
}

const std::string& Vocabulary::predicate_name(int idx) const {
  if (idx < 0 || idx >= num_predicates())
    fail(ErrorKind::kValidation, "predicate index " + std::to_string(idx) + " out of vocabulary");
  return predicates_[idx];
}

Box Box::make(double x0, double y0, double x1, double y1) {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  Box b{c(x0), c(y0), c(x1), c(y1)};
  validate_box(b);
  return b;
}

bool Box::valid() const {
  auto in = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return in(x0) && in(y0) && in(x1) && in(y1) && x0 < x1 && y0 < y1;
}

void validate_box(const Box& b) {
  if (!b.valid())
    fail(ErrorKind::kValidation, "invalid box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                                     std::to_string(b.x1) + "," + std::to_string(b.y1) + ")");
}

bool SceneGraph::has_node(int id) const {
  return std::any_of(nodes.begin(), nodes.end(), [id](const GraphNode& n) { return n.id == id; });
}

int SceneGraph::category_of(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n.category;
  fail(ErrorKind::kValidation, "unknown node id " + std::to_string(id));
}

std::vector<int> SceneGraph::node_ids() const {
  std::vector<int> ids;
  ids.reserve(nodes.size());
  for (const auto& n : nodes) ids.push_back(n.id);
  return ids;
}

SceneGraph SceneGraph::induced(const std::set<int>& ids) const {
  SceneGraph g;
  for (const auto& n : nodes)
    if (ids.count(n.id)) g.nodes.push_back(n);
  for (const auto& e : edges)
    if (ids.count(e.s) && ids.count(e.o)) g.edges.push_back(e);
  return g;
}

void SceneGraph::validate(const Vocabulary* vocab) const {
  std::set<int> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second) fail(ErrorKind::kValidation, "duplicate node id " + std::to_string(n.id));
    if (n.category < 0 || (vocab && n.category >= vocab->num_categories()))
      fail(ErrorKind::kValidation, "node " + std::to_string(n.id) + " has out-of-vocabulary category " +
                                       std::to_string(n.category));
  }
  for (const auto& e : edges) {
    if (!ids.count(e.s) || !ids.count(e.o))
      fail(ErrorKind::kValidation,
           "edge (" + std::to_string(e.s) + "," + std::to_string(e.o) + ") references a missing node");
    if (e.s == e.o) fail(ErrorKind::kValidation, "self-loop on node " + std::to_string(e.s));
    if (e.p < 0 || (vocab && e.p >= vocab->num_predicates()))
      fail(ErrorKind::kValidation, "edge has out-of-vocabulary predicate " + std::to_string(e.p));
  }
}

void GraphSequence::validate(const Vocabulary* vocab) const {
  for (std::size_t k = 0; k < steps.size(); ++k) {
    steps[k].validate(vocab);
    if (k == 0) continue;
    const SceneGraph& prev = steps[k - 1];
    const SceneGraph& cur = steps[k];
    for (const auto& n : prev.nodes) {
      if (!cur.has_node(n.id))
        fail(ErrorKind::kValidation, "step " + std::to_string(k) + " drops node " + std::to_string(n.id));
      if (cur.category_of(n.id) != n.category)
        fail(ErrorKind::kValidation, "step " + std::to_string(k) + " rebinds category of node " + std::to_string(n.id));
    }
    for (const auto& e : prev.edges)
      if (std::find(cur.edges.begin(), cur.edges.end(), e) == cur.edges.end())
        fail(ErrorKind::kValidation, "step " + std::to_string(k) + " drops an edge of step " + std::to_string(k - 1));
  }
}

std::vector<int> GraphSequence::new_nodes(std::size_t k) const {
  std::vector<int> out;
  for (const auto& n : steps.at(k).nodes)
    if (k == 0 || !steps[k - 1].has_node(n.id)) out.push_back(n.id);
  return out;
}

int infer_relation(const Box& s, const Box& o) {
  validate_box(s);
  validate_box(o);
  if (s.x0 > o.x0 && s.x1 < o.x1 && s.y0 > o.y0 && s.y1 < o.y1) return kInside;
  if (o.x0 > s.x0 && o.x1 < s.x1 && o.y0 > s.y0 && o.y1 < s.y1) return kSurrounding;
  const double dx = s.cx() - o.cx();
  const double dy = s.cy() - o.cy();
  const double ax = std::fabs(dx), ay = std::fabs(dy);
  if (ay > ax) return dy < 0 ? kAbove : kBelow;
  // |dx| >= |dy|; on a tie the horizontal relations win, and coincident
  // centers fall back to the highest-priority "left of".
  return dx > 0 ? kRightOf : kLeftOf;
}

SceneGraph build_graph(const std::vector<PlacedObject>& objects, double edge_density, std::uint64_t seed) {
  if (objects.empty()) fail(ErrorKind::kValidation, "build_graph needs at least one object");
  if (!(edge_density > 0.0 && edge_density <= 1.0))
    fail(ErrorKind::kValidation, "edge_density must lie in (0, 1]");
  SceneGraph g;
  for (const auto& o : objects) {
    validate_box(o.box);
    g.nodes.push_back({o.node_id, o.category});
  }
  g.validate();
  const std::size_t n = objects.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) pairs.emplace_back(i, j);
  const auto m = static_cast<std::size_t>(std::floor(edge_density * static_cast<double>(pairs.size()) + 0.5));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(m, order.size()));
  std::sort(order.begin(), order.end());
  for (std::size_t idx : order) {
    const auto& [i, j] = pairs[idx];
    g.edges.push_back({objects[i].node_id, infer_relation(objects[i].box, objects[j].box), objects[j].node_id});
  }
  return g;
}

std::vector<int> split_sizes(int n, int num_steps) {
  if (num_steps < 1) fail(ErrorKind::kValidation, "num_steps must be >= 1");
  std::vector<int> sizes;
  for (int k = 0; k < num_steps; ++k) {
    if (k == num_steps - 1) {
      sizes.push_back(n);
      break;
    }
    // Fractions are multiples of 1/4 for the default three steps; the small
    // offset keeps exact products from rounding down.
    const double f = 0.5 + 0.5 * static_cast<double>(k) / static_cast<double>(num_steps - 1);
    sizes.push_back(std::max(1, static_cast<int>(std::floor(f * n + 1e-9))));
  }
  return sizes;
}

GraphSequence make_splits(const SceneGraph& graph, std::uint64_t seed, int num_steps) {
  if (graph.nodes.empty()) fail(ErrorKind::kValidation, "make_splits needs at least one node");
  graph.validate();
  std::vector<int> ids = graph.node_ids();
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  GraphSequence seq;
  for (int size : split_sizes(static_cast<int>(ids.size()), num_steps)) {
    std::set<int> keep(ids.begin(), ids.begin() + size);
    seq.steps.push_back(graph.induced(keep));
  }
  return seq;
}

namespace {

ojson graph_to_json(const SceneGraph& g, const Vocabulary& vocab) {
  ojson doc;
  doc["vocabulary_version"] = vocab.version();
  doc["nodes"] = ojson::array();
  for (const auto& n : g.nodes) doc["nodes"].push_back({{"id", n.id}, {"category", vocab.category_name(n.category)}});
  doc["edges"] = ojson::array();
  for (const auto& e : g.edges)
    doc["edges"].push_back({{"s", e.s}, {"p", vocab.predicate_name(e.p)}, {"o", e.o}});
  return doc;
}

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  fail(ErrorKind::kParse, field + ": " + what, field);
}

const ojson& field(const ojson& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) schema_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(path + "." + key, "missing field");
  return *it;
}

int int_field(const ojson& obj, const std::string& key, const std::string& path) {
  const ojson& v = field(obj, key, path);
  if (!v.is_number_integer()) schema_error(path + "." + key, "expected an integer");
  return v.get<int>();
}

std::string str_field(const ojson& obj, const std::string& key, const std::string& path) {
  const ojson& v = field(obj, key, path);
  if (!v.is_string()) schema_error(path + "." + key, "expected a string");
  return v.get<std::string>();
}

SceneGraph graph_from_json(const ojson& doc, const Vocabulary& vocab, const std::string& path) {
  const std::string version = str_field(doc, "vocabulary_version", path);
  if (version != vocab.version())
    schema_error(path + ".vocabulary_version", "document uses '" + version + "', model expects '" + vocab.version() + "'");
  SceneGraph g;
  const ojson& nodes = field(doc, "nodes", path);
  if (!nodes.is_array()) schema_error(path + ".nodes", "expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = path + ".nodes[" + std::to_string(i) + "]";
    const std::string cat = str_field(nodes[i], "category", p);
    if (!vocab.has_category(cat)) schema_error(p + ".category", "unknown category '" + cat + "'");
    g.nodes.push_back({int_field(nodes[i], "id", p), vocab.category_index(cat)});
  }
  const ojson& edges = field(doc, "edges", path);
  if (!edges.is_array()) schema_error(path + ".edges", "expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string p = path + ".edges[" + std::to_string(i) + "]";
    const std::string pred = str_field(edges[i], "p", p);
    int pi = 0;
    try {
      pi = vocab.predicate_index(pred);
    } catch (const Error&) {
      schema_error(p + ".p", "unknown predicate '" + pred + "'");
    }
    g.edges.push_back({int_field(edges[i], "s", p), pi, int_field(edges[i], "o", p)});
  }
  try {
    g.validate(&vocab);
  } catch (const Error& e) {
    fail(ErrorKind::kParse, path + ": " + e.what(), path);
  }
  return g;
}

ojson parse_text(const std::string& document) {
  try {
    return ojson::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kParse, std::string("malformed document: ") + e.what());
  }
}

}  // namespace

std::string serialize(const SceneGraph& graph, const Vocabulary& vocab) {
  graph.validate(&vocab);
  return graph_to_json(graph, vocab).dump(2) + "\n";
}

SceneGraph deserialize(const std::string& document, const Vocabulary& vocab) {
  return graph_from_json(parse_text(document), vocab, "$");
}

std::string serialize_sequence(const GraphSequence& seq, const Vocabulary& vocab) {
  seq.validate(&vocab);
  ojson doc;
  doc["steps"] = ojson::array();
  for (const auto& g : seq.steps) doc["steps"].push_back(graph_to_json(g, vocab));
  return doc.dump(2) + "\n";
}

GraphSequence deserialize_sequence(const std::string& document, const Vocabulary& vocab) {
  const ojson doc = parse_text(document);
  const ojson& steps = field(doc, "steps", "$");
  if (!steps.is_array()) schema_error("$.steps", "expected an array");
  GraphSequence seq;
  for (std::size_t i = 0; i < steps.size(); ++i)
    seq.steps.push_back(graph_from_json(steps[i], vocab, "$.steps[" + std::to_string(i) + "]"));
  try {
    seq.validate(&vocab);
  } catch (const Error& e) {
    fail(ErrorKind::kParse, std::string("$.steps: ") + e.what(), "$.steps");
  }
  return seq;
}

}  // namespace isg
