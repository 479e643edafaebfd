#include "isggen/layout.hpp"

#include <algorithm>
#include <cmath>

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

void LayoutConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || mask_channels < 1) fail(ErrorKind::kConfig, "layout dims must be >= 1");
  int m = mask_size;
  while (m > 4 && m % 2 == 0) m /= 2;
  if (m != 4) fail(ErrorKind::kConfig, "mask_size must be 4 * 2^k");
  if (!(min_box_extent > 0.0 && min_box_extent < 1.0)) fail(ErrorKind::kConfig, "min_box_extent must lie in (0,1)");
}

Box ObjectLayout::box_value() const {
  const Tensor& b = box.value();
  return Box{b[0], b[1], b[2], b[3]};
}

LayoutNet::LayoutNet(const LayoutConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.mask_channels;
  box_hidden_ = Linear::create(params_, "layout.box.hidden", cfg.embed_dim, cfg.hidden_dim, rng);
  box_out_ = Linear::create(params_, "layout.box.out", cfg.hidden_dim, 4, rng);
  mask_seed_ = Linear::create(params_, "layout.mask.seed", cfg.embed_dim, c * 16, rng);
  int res = 4, idx = 0;
  while (res < cfg.mask_size) {
    mask_up_.push_back(
        ConvTranspose2d::create(params_, "layout.mask.up" + std::to_string(idx++), c, c, 4, 2, 1, rng));
    res *= 2;
  }
  mask_out_ = Conv2d::create(params_, "layout.mask.out", c, 1, 1, 1, 0, rng);
}

std::vector<ObjectLayout> LayoutNet::predict_layout(const NodeEmbeddings& emb) const {
  std::vector<ObjectLayout> out;
  const int n = emb.size();
  if (n == 0) return out;
  if (emb.vectors.dim(1) != cfg_.embed_dim)
    fail(ErrorKind::kValidation, "layout: embedding width " + std::to_string(emb.vectors.dim(1)) + " != " +
                                     std::to_string(cfg_.embed_dim));
  Var boxes = decode_boxes(box_out_(ops::relu(box_hidden_(emb.vectors))), cfg_.min_box_extent);
  Var seeds = mask_seed_(emb.vectors);
  const int m = cfg_.mask_size;
  for (int i = 0; i < n; ++i) {
    ObjectLayout ol;
    ol.node_id = emb.node_ids[i];
    ol.box = ops::reshape(ops::slice(boxes, i, i + 1), {4});
    ol.embedding = ops::reshape(ops::slice(emb.vectors, i, i + 1), {cfg_.embed_dim});
    Var h = ops::relu(ops::reshape(ops::slice(seeds, i, i + 1), {cfg_.mask_channels, 4, 4}));
    for (const auto& up : mask_up_) h = ops::relu(up(h));
    ol.mask = ops::reshape(ops::sigmoid(mask_out_(h)), {m, m});
    out.push_back(std::move(ol));
  }
  return out;
}

Var decode_boxes(const Var& raw, double min_extent) {
  if (raw.value().rank() != 2 || raw.dim(1) != 4) fail(ErrorKind::kValidation, "decode_boxes expects [n,4]");
  const int n = raw.dim(0);
  Tensor out({n, 4});
  for (int i = 0; i < n; ++i) {
    const double* r = raw.value().data() + 4 * i;
    auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
    const double cx = sig(r[0]), cy = sig(r[1]);
    const double w = std::clamp(std::exp(r[2]), min_extent, 1.0);
    const double h = std::clamp(std::exp(r[3]), min_extent, 1.0);
    out[4 * i + 0] = std::max(0.0, cx - 0.5 * w);
    out[4 * i + 1] = std::max(0.0, cy - 0.5 * h);
    out[4 * i + 2] = std::min(1.0, cx + 0.5 * w);
    out[4 * i + 3] = std::min(1.0, cy + 0.5 * h);
  }
  return Var::make(std::move(out), {raw}, [n, min_extent](Node& nd) {
    Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* r = p.value.data() + 4 * i;
      const double* gout = nd.grad.data() + 4 * i;
      for (int axis = 0; axis < 2; ++axis) {
        const double c = r[axis] >= 0 ? 1.0 / (1.0 + std::exp(-r[axis])) : std::exp(r[axis]) / (1.0 + std::exp(r[axis]));
        const double e = std::exp(r[axis + 2]);
        const double ext = std::clamp(e, min_extent, 1.0);
        const bool lo_free = c - 0.5 * ext > 0.0;
        const bool hi_free = c + 0.5 * ext < 1.0;
        const double g_lo = lo_free ? gout[axis] : 0.0;
        const double g_hi = hi_free ? gout[axis + 2] : 0.0;
        g[4 * i + axis] += (g_lo + g_hi) * c * (1.0 - c);
        if (e > min_extent && e < 1.0) g[4 * i + axis + 2] += (-0.5 * g_lo + 0.5 * g_hi) * e;
      }
    }
  });
}

namespace {

// The mask is the bilinear interpolant of its M cells (centers at j + 0.5,
// constant beyond the outer centers). Each canvas pixel receives the integral
// of that surface over its footprint, so warping conserves mask mass exactly.
// The interpolant is separable, which makes a pixel value wy^T M wx.

// Clamped hat basis of cell j and its antiderivative from 0.
double hat(int j, double u, int m) {
  if (m == 1) return 1.0;
  const double c = j + 0.5;
  if ((j == 0 && u <= c) || (j == m - 1 && u >= c)) return 1.0;
  return std::max(0.0, 1.0 - std::fabs(u - c));
}

double hat_integral(int j, double u, int m) {
  if (m == 1) return u;
  const double c = j + 0.5;
  double left;
  if (j == 0) {
    left = std::min(u, c);
  } else {
    const double t = std::clamp(u - (c - 1.0), 0.0, 1.0);
    left = 0.5 * t * t;
  }
  if (u <= c) return left;
  const double s = u - c;
  if (j == m - 1) return left + s;
  const double t = std::min(s, 1.0);
  return left + t - 0.5 * t * t;
}

// Dense per-axis weights for a box [lo, hi]: row r belongs to canvas pixel
// first + r and holds the M weights plus their derivatives w.r.t. lo and hi.
struct AxisWeights {
  int first = 0;
  int count = 0;
  std::vector<double> w, dlo, dhi;  // [count, M]
};

AxisWeights axis_weights(double lo, double hi, int size, int m) {
  AxisWeights out;
  const int first = std::max(0, static_cast<int>(std::floor(lo * size)));
  const int last = std::min(size - 1, static_cast<int>(std::ceil(hi * size)) - 1);
  if (last < first) return out;
  out.first = first;
  out.count = last - first + 1;
  const std::size_t cells = static_cast<std::size_t>(out.count) * m;
  out.w.assign(cells, 0.0);
  out.dlo.assign(cells, 0.0);
  out.dhi.assign(cells, 0.0);
  const double extent = hi - lo;
  const double scale = size * extent / m;
  for (int r = 0; r < out.count; ++r) {
    const int p = first + r;
    const double a = static_cast<double>(p) / size, b = static_cast<double>(p + 1) / size;
    const double xa = std::max(a, lo), xb = std::min(b, hi);
    if (xb <= xa) continue;
    const double u0 = (xa - lo) / extent * m, u1 = (xb - lo) / extent * m;
    const bool lo_inside = lo > a, hi_inside = hi < b;
    const double du0_lo = lo_inside ? 0.0 : (u0 - m) / extent, du0_hi = lo_inside ? 0.0 : -u0 / extent;
    const double du1_lo = hi_inside ? 0.0 : (u1 - m) / extent, du1_hi = hi_inside ? 0.0 : -u1 / extent;
    const int j0 = std::max(0, static_cast<int>(std::floor(u0 - 1.5)));
    const int j1 = std::min(m - 1, static_cast<int>(std::ceil(u1 + 0.5)));
    for (int j = j0; j <= j1; ++j) {
      const double h = hat_integral(j, u1, m) - hat_integral(j, u0, m);
      const double h0 = hat(j, u0, m), h1 = hat(j, u1, m);
      const std::size_t k = static_cast<std::size_t>(r) * m + j;
      out.w[k] = scale * h;
      out.dlo[k] = size / static_cast<double>(m) * (-h + extent * (h1 * du1_lo - h0 * du0_lo));
      out.dhi[k] = size / static_cast<double>(m) * (h + extent * (h1 * du1_hi - h0 * du0_hi));
    }
  }
  return out;
}

// alpha[ny,nx] = Wy[ny,M] * mask[M,M] * Wx[nx,M]^T
void warp_window(const AxisWeights& wy, const AxisWeights& wx, const double* mk, int m, std::vector<double>& tmp,
                 std::vector<double>& alpha) {
  const int ny = wy.count, nx = wx.count;
  tmp.assign(static_cast<std::size_t>(m) * nx, 0.0);  // mask * Wx^T, [M,nx]
  for (int i = 0; i < m; ++i)
    for (int x = 0; x < nx; ++x) {
      double acc = 0.0;
      const double* wr = wx.w.data() + static_cast<std::size_t>(x) * m;
      const double* mr = mk + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) acc += mr[j] * wr[j];
      tmp[static_cast<std::size_t>(i) * nx + x] = acc;
    }
  alpha.assign(static_cast<std::size_t>(ny) * nx, 0.0);
  for (int y = 0; y < ny; ++y) {
    const double* wr = wy.w.data() + static_cast<std::size_t>(y) * m;
    double* ar = alpha.data() + static_cast<std::size_t>(y) * nx;
    for (int i = 0; i < m; ++i) {
      if (wr[i] == 0.0) continue;
      const double* tr = tmp.data() + static_cast<std::size_t>(i) * nx;
      for (int x = 0; x < nx; ++x) ar[x] += wr[i] * tr[x];
    }
  }
}

}  // namespace

Var compose_batched(const Var& embeddings, const Var& boxes, const Var& masks, int size) {
  const int n = embeddings.dim(0), d = embeddings.dim(1);
  if (boxes.dim(0) != n || boxes.dim(1) != 4 || masks.dim(0) != n || masks.value().rank() != 3)
    fail(ErrorKind::kValidation, "compose: inconsistent object inputs");
  const int m = masks.dim(1);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  Tensor out({d, size, size});
  std::vector<double> alpha, tmp;
  for (int i = 0; i < n; ++i) {
    const double* b = boxes.value().data() + 4 * i;
    validate_box(Box{b[0], b[1], b[2], b[3]});
    const double* mk = masks.value().data() + static_cast<std::size_t>(i) * m * m;
    const double* e = embeddings.value().data() + static_cast<std::size_t>(i) * d;
    const auto wx = axis_weights(b[0], b[2], size, m);
    const auto wy = axis_weights(b[1], b[3], size, m);
    if (wx.count == 0 || wy.count == 0) continue;
    warp_window(wy, wx, mk, m, tmp, alpha);
    const std::size_t nx = static_cast<std::size_t>(wx.count);
    for (int c = 0; c < d; ++c) {
      double* oc = out.data() + c * plane;
      for (int yi = 0; yi < wy.count; ++yi) {
        double* row = oc + static_cast<std::size_t>(wy.first + yi) * size + wx.first;
        const double* ar = alpha.data() + yi * nx;
        for (std::size_t xi = 0; xi < nx; ++xi) row[xi] += e[c] * ar[xi];
      }
    }
  }
  return Var::make(std::move(out), {embeddings, boxes, masks}, [n, d, m, size, plane](Node& nd) {
    Node& pe = *nd.parents[0];
    Node& pb = *nd.parents[1];
    Node& pm = *nd.parents[2];
    const double* g = nd.grad.data();
    std::vector<double> gdot, alpha, tmp, gw;
    for (int i = 0; i < n; ++i) {
      const double* b = pb.value.data() + 4 * i;
      const double* mk = pm.value.data() + static_cast<std::size_t>(i) * m * m;
      const double* e = pe.value.data() + static_cast<std::size_t>(i) * d;
      const auto wx = axis_weights(b[0], b[2], size, m);
      const auto wy = axis_weights(b[1], b[3], size, m);
      if (wx.count == 0 || wy.count == 0) continue;
      double* ge = pe.requires_grad ? pe.grad_buffer().data() + static_cast<std::size_t>(i) * d : nullptr;
      double* gm = pm.requires_grad ? pm.grad_buffer().data() + static_cast<std::size_t>(i) * m * m : nullptr;
      double* gb = pb.requires_grad ? pb.grad_buffer().data() + 4 * i : nullptr;
      const int nx = wx.count, ny = wy.count;
      warp_window(wy, wx, mk, m, tmp, alpha);
      // gdot = sum_c g[c] e[c] over the window; embedding grads use the same sweep.
      gdot.assign(static_cast<std::size_t>(nx) * ny, 0.0);
      for (int c = 0; c < d; ++c) {
        const double* gc = g + c * plane;
        double acc = 0.0;
        for (int yi = 0; yi < ny; ++yi) {
          const double* row = gc + static_cast<std::size_t>(wy.first + yi) * size + wx.first;
          double* gd = gdot.data() + static_cast<std::size_t>(yi) * nx;
          const double* ar = alpha.data() + static_cast<std::size_t>(yi) * nx;
          for (int xi = 0; xi < nx; ++xi) {
            gd[xi] += row[xi] * e[c];
            acc += row[xi] * ar[xi];
          }
        }
        if (ge) ge[c] += acc;
      }
      if (!gm && !gb) continue;
      // u = G^T Wy, [nx,M]: shared by the mask and x-axis gradients.
      std::vector<double> u(static_cast<std::size_t>(nx) * m, 0.0);
      for (int yi = 0; yi < ny; ++yi) {
        const double* wr = wy.w.data() + static_cast<std::size_t>(yi) * m;
        for (int xi = 0; xi < nx; ++xi) {
          const double gv = gdot[static_cast<std::size_t>(yi) * nx + xi];
          if (gv == 0.0) continue;
          double* ur = u.data() + static_cast<std::size_t>(xi) * m;
          for (int k = 0; k < m; ++k) ur[k] += gv * wr[k];
        }
      }
      if (gm) {
        // dM = Wy^T G Wx = u^T Wx
        for (int xi = 0; xi < nx; ++xi) {
          const double* ur = u.data() + static_cast<std::size_t>(xi) * m;
          const double* wr = wx.w.data() + static_cast<std::size_t>(xi) * m;
          for (int k = 0; k < m; ++k) {
            if (ur[k] == 0.0) continue;
            double* gr = gm + static_cast<std::size_t>(k) * m;
            for (int j = 0; j < m; ++j) gr[j] += ur[k] * wr[j];
          }
        }
      }
      if (gb) {
        // dL/dWx = u M, [nx,M]
        for (int xi = 0; xi < nx; ++xi) {
          const double* ur = u.data() + static_cast<std::size_t>(xi) * m;
          for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k) acc += ur[k] * mk[static_cast<std::size_t>(k) * m + j];
            const std::size_t idx = static_cast<std::size_t>(xi) * m + j;
            gb[0] += acc * wx.dlo[idx];
            gb[2] += acc * wx.dhi[idx];
          }
        }
        // dL/dWy = G (Wx M^T) = G tmp^T, tmp = M Wx^T [M,nx]
        for (int yi = 0; yi < ny; ++yi) {
          const double* gd = gdot.data() + static_cast<std::size_t>(yi) * nx;
          for (int k = 0; k < m; ++k) {
            const double* tr = tmp.data() + static_cast<std::size_t>(k) * nx;
            double acc = 0.0;
            for (int xi = 0; xi < nx; ++xi) acc += gd[xi] * tr[xi];
            const std::size_t idx = static_cast<std::size_t>(yi) * m + k;
            gb[1] += acc * wy.dlo[idx];
            gb[3] += acc * wy.dhi[idx];
          }
        }
      }
    }
  });
}

Var compose(const std::vector<ObjectLayout>& objs, int size, int embed_dim) {
  if (objs.empty()) return ops::constant(Tensor({embed_dim, size, size}));
  std::vector<Var> es, bs, ms;
  for (const auto& o : objs) {
    if (static_cast<int>(o.embedding.size()) != embed_dim)
      fail(ErrorKind::kValidation, "compose: embedding width mismatch");
    es.push_back(ops::reshape(o.embedding, {1, embed_dim}));
    bs.push_back(ops::reshape(o.box, {1, 4}));
    ms.push_back(ops::reshape(o.mask, {1, o.mask.dim(0), o.mask.dim(1)}));
  }
  return compose_batched(ops::concat(es), ops::concat(bs), ops::concat(ms), size);
}

namespace {

void check_ids(const std::vector<ObjectLayout>& predicted, auto const& target, const char* what) {
  for (const auto& o : predicted)
    if (!target.count(o.node_id))
      fail(ErrorKind::kValidation, std::string(what) + ": no target for node " + std::to_string(o.node_id));
}

}  // namespace

Var box_loss(const std::vector<ObjectLayout>& predicted, const std::map<int, Box>& target) {
  if (predicted.empty()) return ops::constant(Tensor({1}, 0.0));
  check_ids(predicted, target, "box_loss");
  std::vector<Var> rows;
  Tensor t({static_cast<int>(predicted.size()), 4});
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    rows.push_back(ops::reshape(predicted[i].box, {1, 4}));
    const Box& b = target.at(predicted[i].node_id);
    t[4 * i] = b.x0;
    t[4 * i + 1] = b.y0;
    t[4 * i + 2] = b.x1;
    t[4 * i + 3] = b.y1;
  }
  return ops::mean(ops::abs(ops::sub(ops::concat(rows), ops::constant(std::move(t)))));
}

Var mask_loss(const std::vector<ObjectLayout>& predicted, const std::map<int, Tensor>& target) {
  if (predicted.empty()) return ops::constant(Tensor({1}, 0.0));
  check_ids(predicted, target, "mask_loss");
  std::vector<Var> ms;
  std::vector<double> t;
  for (const auto& o : predicted) {
    const Tensor& tm = target.at(o.node_id);
    if (tm.size() != o.mask.size()) fail(ErrorKind::kValidation, "mask_loss: mask resolution mismatch");
    ms.push_back(ops::reshape(o.mask, {1, o.mask.dim(0), o.mask.dim(1)}));
    t.insert(t.end(), tm.values().begin(), tm.values().end());
  }
  Var pred = ops::concat(ms);
  return ops::bce_prob(pred, Tensor(pred.shape(), std::move(t)));
}

}  // namespace isg
