#pragma once

#include <vector>

#include "isggen/tensor.hpp"

// Differentiable operations over Var. Image-like values are CHW without a
// batch dimension; matrices are [rows, cols].
namespace isg::ops {

Var constant(Tensor t);
Var detach(const Var& a);

// Elementwise, shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// Sum of several scalars.
Var add_n(const std::vector<Var>& xs);

Var reshape(const Var& a, Shape shape);
// Concatenation and slicing along the leading dimension.
Var concat(const std::vector<Var>& xs);
Var slice(const Var& a, int begin, int end);
// Column-wise concatenation / slicing of matrices.
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& a, int begin, int end);

// a[m,k] x b[k,n]
Var matmul(const Var& a, const Var& b);
// x[n,in] W[out,in]^T + b[out]
Var linear(const Var& x, const Var& w, const Var& b);

// table[N,D] -> rows[idx]
Var gather_rows(const Var& table, const std::vector<int>& idx);
// out[n,D], out[idx[i]] += src[i]
Var scatter_add_rows(const Var& src, const std::vector<int>& idx, int n);
// a[n,D] with row r multiplied by factors[r] (constants)
Var scale_rows(const Var& a, const std::vector<double>& factors);

// x[C,H,W], w[O,C,k,k], b[O] (b may be undefined)
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x[C,H,W], w[C,O,k,k], b[O]; output H' = (H-1)*stride - 2*pad + k
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// Per-channel normalization over H,W with affine gamma[C], beta[C].
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var upsample_nearest(const Var& x, int factor);
Var avg_pool(const Var& x, int factor);
// x[C,H,W] -> [C]
Var global_avg_pool(const Var& x);
// Per-pixel unit normalization of the channel vector.
Var channel_unit_normalize(const Var& x, double eps = 1e-10);

// Bilinear crop of box (normalized x0,y0,x1,y1) resized to out x out.
Var crop_resize(const Var& img, const double box[4], int out);

// Mean binary cross entropy of logits against a constant target in [0,1].
// Logits are clamped to +-logit_clamp so each term is bounded.
Var bce_with_logits(const Var& logits, double target, double logit_clamp = 16.11809565);
// Mean BCE of probabilities against a target tensor; probabilities clamped to [eps,1-eps].
Var bce_prob(const Var& probs, const Tensor& target, double eps = 1e-7);
// logits[n,C] against integer labels, mean over rows.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

}  // namespace isg::ops
