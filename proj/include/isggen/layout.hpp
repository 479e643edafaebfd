#pragma once

#include <map>
#include <vector>

#include "isggen/gcn.hpp"
#include "isggen/nn.hpp"
#include "isggen/sgraph.hpp"

namespace isg {

struct LayoutConfig {
  int embed_dim = 32;
  int hidden_dim = 64;
  int mask_size = 16;
  int mask_channels = 16;
  // Lower bound on predicted box width/height.
  double min_box_extent = 1.0 / 64.0;

  void validate() const;
};

struct ObjectLayout {
  int node_id = 0;
  Var box;        // [4] corners x0,y0,x1,y1
  Var mask;       // [M,M] in [0,1]
  Var embedding;  // [D]

  Box box_value() const;
};

class LayoutNet {
 public:
  LayoutNet(const LayoutConfig& cfg, Rng& rng);

  std::vector<ObjectLayout> predict_layout(const NodeEmbeddings& emb) const;

  const LayoutConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  LayoutConfig cfg_;
  ParamSet params_;
  Linear box_hidden_;
  Linear box_out_;
  Linear mask_seed_;
  std::vector<ConvTranspose2d> mask_up_;
  Conv2d mask_out_;
};

// Maps raw head outputs (cx_logit, cy_logit, log w, log h) per row to valid
// clamped corner boxes.
Var decode_boxes(const Var& raw, double min_extent);

// Warps every mask into its box on an S x S canvas and sums
// embedding-weighted masks into [D,S,S]. Each pixel integrates the mask's
// bilinear interpolant over its footprint, so mask mass is conserved.
Var compose(const std::vector<ObjectLayout>& objs, int size, int embed_dim);
// Batched form: embeddings [n,D], boxes [n,4], masks [n,M,M].
Var compose_batched(const Var& embeddings, const Var& boxes, const Var& masks, int size);

// Mean L1 over all coordinates of matched boxes.
Var box_loss(const std::vector<ObjectLayout>& predicted, const std::map<int, Box>& target);
// Mean binary cross entropy over mask cells.
Var mask_loss(const std::vector<ObjectLayout>& predicted, const std::map<int, Tensor>& target);

}  // namespace isg
