#include "isggen/gcn.hpp"

#include <cmath>
#include <map>

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

void GcnConfig::validate() const {
  if (embed_dim < 1 || num_layers < 0 || hidden_dim < 1) fail(ErrorKind::kConfig, "gcn dims must be >= 1");
}

int NodeEmbeddings::row_of(int node_id) const {
  for (std::size_t i = 0; i < node_ids.size(); ++i)
    if (node_ids[i] == node_id) return static_cast<int>(i);
  fail(ErrorKind::kValidation, "node " + std::to_string(node_id) + " has no embedding");
}

Gcn::Gcn(const GcnConfig& cfg, int num_categories, int num_predicates, Rng& rng)
    : cfg_(cfg), num_categories_(num_categories), num_predicates_(num_predicates) {
  cfg.validate();
  const int d = cfg.embed_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  category_table_ = params_.add("gcn.category_embedding", uniform_tensor({num_categories, d}, -bound, bound, rng));
  predicate_table_ = params_.add("gcn.predicate_embedding", uniform_tensor({num_predicates, d}, -bound, bound, rng));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string name = "gcn.layer" + std::to_string(l);
    Layer layer;
    layer.hidden = Linear::create(params_, name + ".hidden", 3 * d, cfg.hidden_dim, rng);
    layer.out = Linear::create(params_, name + ".out", cfg.hidden_dim, 3 * d, rng);
    layers_.push_back(layer);
  }
}

NodeEmbeddings Gcn::embed(const SceneGraph& graph) const {
  const int n = static_cast<int>(graph.nodes.size());
  const int d = cfg_.embed_dim;
  if (n == 0) fail(ErrorKind::kValidation, "cannot embed an empty graph");
  std::map<int, int> row;
  std::vector<int> cats;
  NodeEmbeddings out;
  for (const auto& node : graph.nodes) {
    if (node.category < 0 || node.category >= num_categories_)
      fail(ErrorKind::kValidation, "category index " + std::to_string(node.category) + " outside vocabulary");
    if (!row.emplace(node.id, static_cast<int>(cats.size())).second)
      fail(ErrorKind::kValidation, "duplicate node id " + std::to_string(node.id));
    cats.push_back(node.category);
    out.node_ids.push_back(node.id);
  }
  std::vector<int> subj, obj, preds;
  for (const auto& e : graph.edges) {
    if (e.p < 0 || e.p >= num_predicates_)
      fail(ErrorKind::kValidation, "predicate index " + std::to_string(e.p) + " outside vocabulary");
    auto si = row.find(e.s), oi = row.find(e.o);
    if (si == row.end() || oi == row.end()) fail(ErrorKind::kValidation, "edge references a missing node");
    subj.push_back(si->second);
    obj.push_back(oi->second);
    preds.push_back(e.p);
  }
  Var nodes = ops::gather_rows(category_table_, cats);
  out.predicate_table = predicate_table_;
  if (preds.empty()) {
    // Every node is isolated and passes through each layer unchanged.
    out.vectors = nodes;
    return out;
  }
  Var edges = ops::gather_rows(predicate_table_, preds);
  std::vector<double> inv_count(n, 0.0), isolated(n, 0.0);
  for (int i : subj) inv_count[i] += 1.0;
  for (int i : obj) inv_count[i] += 1.0;
  for (int i = 0; i < n; ++i) {
    if (inv_count[i] > 0) {
      inv_count[i] = 1.0 / inv_count[i];
    } else {
      isolated[i] = 1.0;
    }
  }
  for (const auto& layer : layers_) {
    Var triple = ops::concat_cols({ops::gather_rows(nodes, subj), edges, ops::gather_rows(nodes, obj)});
    Var h = ops::relu(layer.hidden(triple));
    Var candidates = layer.out(h);
    Var cs = ops::slice_cols(candidates, 0, d);
    Var cp = ops::slice_cols(candidates, d, 2 * d);
    Var co = ops::slice_cols(candidates, 2 * d, 3 * d);
    Var pooled = ops::add(ops::scatter_add_rows(cs, subj, n), ops::scatter_add_rows(co, obj, n));
    nodes = ops::add(ops::scale_rows(pooled, inv_count), ops::scale_rows(nodes, isolated));
    edges = cp;
  }
  out.vectors = nodes;
  out.edge_vectors = edges;
  return out;
}

NodeEmbeddings filter_generated(const NodeEmbeddings& emb, const std::set<int>& generated) {
  std::set<int> known(emb.node_ids.begin(), emb.node_ids.end());
  for (int id : generated)
    if (!known.count(id)) fail(ErrorKind::kValidation, "filter_generated: unknown node id " + std::to_string(id));
  NodeEmbeddings out;
  out.edge_vectors = emb.edge_vectors;
  out.predicate_table = emb.predicate_table;
  if (generated.empty()) {
    out.node_ids = emb.node_ids;
    out.vectors = emb.vectors;
    return out;
  }
  std::vector<int> rows;
  for (std::size_t i = 0; i < emb.node_ids.size(); ++i)
    if (!generated.count(emb.node_ids[i])) {
      rows.push_back(static_cast<int>(i));
      out.node_ids.push_back(emb.node_ids[i]);
    }
  out.vectors = ops::gather_rows(emb.vectors, rows);
  return out;
}

}  // namespace isg
