#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "isggen/nn.hpp"
#include "isggen/sgraph.hpp"

namespace isg {

struct GcnConfig {
  int embed_dim = 32;
  int num_layers = 2;
  int hidden_dim = 64;

  void validate() const;
};

// Per-node output of the graph convolution stack, rows aligned with node_ids.
struct NodeEmbeddings {
  std::vector<int> node_ids;
  Var vectors;       // [n, D]
  Var edge_vectors;  // [E, D] after the last layer; undefined when E == 0
  Var predicate_table;

  int size() const { return static_cast<int>(node_ids.size()); }
  int row_of(int node_id) const;
};

class Gcn {
 public:
  Gcn(const GcnConfig& cfg, int num_categories, int num_predicates, Rng& rng);

  NodeEmbeddings embed(const SceneGraph& graph) const;

  const GcnConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  struct Layer {
    Linear hidden;  // [H, 3D]
    Linear out;     // [3D, H]
  };

  GcnConfig cfg_;
  int num_categories_;
  int num_predicates_;
  ParamSet params_;
  Var category_table_;
  Var predicate_table_;
  std::vector<Layer> layers_;
};

// Drops rows of already generated nodes; remaining rows keep their values.
NodeEmbeddings filter_generated(const NodeEmbeddings& emb, const std::set<int>& generated);

}  // namespace isg
