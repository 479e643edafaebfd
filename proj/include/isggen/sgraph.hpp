#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace isg {

// Predicate indices of the six geometric relations; they always occupy the
// first six vocabulary slots in this order.
enum Relation : int {
  kLeftOf = 0,
  kRightOf = 1,
  kAbove = 2,
  kBelow = 3,
  kInside = 4,
  kSurrounding = 5,
};

inline constexpr int kNumGeometricPredicates = 6;

class Vocabulary {
 public:
  static const std::vector<std::string>& geometric_predicates();

  Vocabulary() = default;
  // `extra_predicates` are appended after the six geometric ones.
  Vocabulary(std::string version, std::vector<std::string> categories,
             std::vector<std::string> extra_predicates = {});

  const std::string& version() const { return version_; }
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& predicates() const { return predicates_; }
  int num_categories() const { return static_cast<int>(categories_.size()); }
  int num_predicates() const { return static_cast<int>(predicates_.size()); }

  // Index lookups throw a parse error for unknown names.
  int category_index(const std::string& name) const;
  int predicate_index(const std::string& name) const;
  bool has_category(const std::string& name) const { return cat_index_.count(name) > 0; }
  const std::string& category_name(int idx) const;
  const std::string& predicate_name(int idx) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.version_ == b.version_ && a.categories_ == b.categories_ && a.predicates_ == b.predicates_;
  }

 private:
  std::string version_;
  std::vector<std::string> categories_;
  std::vector<std::string> predicates_;
  std::map<std::string, int> cat_index_;
  std::map<std::string, int> pred_index_;
};

// Normalized image-space box. Constructed boxes are clamped to [0,1] and must
// have positive extent.
struct Box {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;

  static Box make(double x0, double y0, double x1, double y1);
  bool valid() const;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }

  friend bool operator==(const Box&, const Box&) = default;
};

void validate_box(const Box& b);

struct GraphNode {
  int id = 0;
  int category = 0;
  friend bool operator==(const GraphNode&, const GraphNode&) = default;
};

struct GraphEdge {
  int s = 0;
  int p = 0;
  int o = 0;
  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

struct SceneGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  bool has_node(int id) const;
  int category_of(int id) const;
  std::vector<int> node_ids() const;
  // Graph restricted to `ids`, keeping edges whose endpoints both survive.
  SceneGraph induced(const std::set<int>& ids) const;
  // Throws a validation error naming the broken invariant.
  void validate(const Vocabulary* vocab = nullptr) const;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

struct GraphSequence {
  std::vector<SceneGraph> steps;

  void validate(const Vocabulary* vocab = nullptr) const;
  // nodes(steps[k]) \ nodes(steps[k-1])
  std::vector<int> new_nodes(std::size_t k) const;

  friend bool operator==(const GraphSequence&, const GraphSequence&) = default;
};

struct PlacedObject {
  int node_id = 0;
  int category = 0;
  Box box;
};

// Geometric predicate of subject relative to object.
int infer_relation(const Box& subject, const Box& object);

// Samples round(edge_density * n * (n-1)) ordered pairs without replacement
// and labels each with infer_relation.
SceneGraph build_graph(const std::vector<PlacedObject>& objects, double edge_density, std::uint64_t seed);

// Incremental splits: step k of K keeps max(1, floor(f_k * n)) nodes with
// f_k = 0.5 + 0.5 * k / (K - 1), the last step keeps all n.
GraphSequence make_splits(const SceneGraph& graph, std::uint64_t seed, int num_steps = 3);
std::vector<int> split_sizes(int n, int num_steps);

std::string serialize(const SceneGraph& graph, const Vocabulary& vocab);
SceneGraph deserialize(const std::string& document, const Vocabulary& vocab);
std::string serialize_sequence(const GraphSequence& seq, const Vocabulary& vocab);
GraphSequence deserialize_sequence(const std::string& document, const Vocabulary& vocab);

}  // namespace isg
