#include "isggen/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "isggen/error.hpp"

namespace isg::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::kValidation,
         std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_rank(const Var& a, int r, const char* op) {
  if (a.value().rank() != r)
    fail(ErrorKind::kValidation, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                     shape_str(a.shape()));
}

template <class F, class G>
Var unary(const Var& a, F f, G df) {
  Tensor out(a.shape());
  const double* x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Var::make(std::move(out), {a}, [df](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(p.value[i], n.value[i]);
  });
}

// Column layout: row index (c*k + ky)*k + kx, column index oy*wo + ox.
void im2col(const double* img, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* cols) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        const double* src = img + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* img) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        double* dst = img + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* drow = dst + static_cast<std::size_t>(iy) * w;
          const double* srow = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
}

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Var constant(Tensor t) { return Var(std::move(t), false); }

Var detach(const Var& a) { return Var(a.value(), false); }

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->grad_buffer().add_(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out = a.value();
  const double* y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer().add_(n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out = a.value();
  const double* y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return Var::make(Tensor({1}, s), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    const double g0 = n.grad[0];
    for (auto& g : p.grad_buffer().values()) g += g0;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) fail(ErrorKind::kValidation, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var add_n(const std::vector<Var>& xs) {
  double s = 0.0;
  for (const auto& x : xs) s += x.item();
  return Var::make(Tensor({1}, s), xs, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->grad_buffer()[0] += n.grad[0];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) fail(ErrorKind::kValidation, "concat of zero tensors");
  Shape shape = xs[0].shape();
  int lead = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      fail(ErrorKind::kValidation, "concat: incompatible shapes " + shape_str(shape) + " and " + shape_str(s));
    lead += s[0];
  }
  shape[0] = lead;
  Tensor out(shape);
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data(), x.value().data() + x.size(), out.data() + off);
    off += x.size();
  }
  return Var::make(std::move(out), xs, [](Node& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      const std::size_t sz = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
      }
      off += sz;
    }
  });
}

Var slice(const Var& a, int begin, int end) {
  const Shape& s = a.shape();
  if (s.empty() || begin < 0 || end > s[0] || begin > end)
    fail(ErrorKind::kValidation, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                                     shape_str(s));
  const std::size_t inner = s[0] ? a.size() / s[0] : 0;
  Shape os = s;
  os[0] = end - begin;
  Tensor out(os);
  std::copy(a.value().data() + begin * inner, a.value().data() + end * inner, out.data());
  return Var::make(std::move(out), {a}, [begin, inner](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[begin * inner + i] += n.grad[i];
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) fail(ErrorKind::kValidation, "concat_cols of zero tensors");
  const int rows = xs[0].dim(0);
  int cols = 0;
  std::vector<int> widths;
  for (const auto& x : xs) {
    check_rank(x, 2, "concat_cols");
    if (x.dim(0) != rows) fail(ErrorKind::kValidation, "concat_cols: row count mismatch");
    widths.push_back(x.dim(1));
    cols += x.dim(1);
  }
  Tensor out({rows, cols});
  int off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < widths[k]; ++j)
        out[static_cast<std::size_t>(r) * cols + off + j] = xs[k].value()[static_cast<std::size_t>(r) * widths[k] + j];
    off += widths[k];
  }
  return Var::make(std::move(out), xs, [rows, cols, widths](Node& n) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *n.parents[k];
      if (p.requires_grad) {
        Tensor& g = p.grad_buffer();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < widths[k]; ++j)
            g[static_cast<std::size_t>(r) * widths[k] + j] += n.grad[static_cast<std::size_t>(r) * cols + off + j];
      }
      off += widths[k];
    }
  });
}

Var slice_cols(const Var& a, int begin, int end) {
  check_rank(a, 2, "slice_cols");
  const int rows = a.dim(0), cols = a.dim(1);
  if (begin < 0 || end > cols || begin > end) fail(ErrorKind::kValidation, "slice_cols out of range");
  const int w = end - begin;
  Tensor out({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(r) * w + j] = a.value()[static_cast<std::size_t>(r) * cols + begin + j];
  return Var::make(std::move(out), {a}, [rows, cols, w, begin](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        g[static_cast<std::size_t>(r) * cols + begin + j] += n.grad[static_cast<std::size_t>(r) * w + j];
  });
}

Var matmul(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  if (b.dim(0) != k)
    fail(ErrorKind::kValidation, "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, nn});
  MapMat(out.data(), m, nn).noalias() = CMapMat(a.value().data(), m, k) * CMapMat(b.value().data(), k, nn);
  return Var::make(std::move(out), {a, b}, [m, k, nn](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    CMapMat g(n.grad.data(), m, nn);
    if (pa.requires_grad)
      MapMat(pa.grad_buffer().data(), m, k).noalias() += g * CMapMat(pb.value.data(), k, nn).transpose();
    if (pb.requires_grad)
      MapMat(pb.grad_buffer().data(), k, nn).noalias() += CMapMat(pa.value.data(), m, k).transpose() * g;
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear");
  const int rows = x.dim(0), in = x.dim(1), outd = w.dim(0);
  if (w.dim(1) != in)
    fail(ErrorKind::kValidation, "linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  if (b.defined() && b.size() != static_cast<std::size_t>(outd))
    fail(ErrorKind::kValidation, "linear: bias size mismatch");
  Tensor out({rows, outd});
  MapMat o(out.data(), rows, outd);
  o.noalias() = CMapMat(x.value().data(), rows, in) * CMapMat(w.value().data(), outd, in).transpose();
  std::vector<Var> parents{x, w};
  if (b.defined()) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < outd; ++c) o(r, c) += b.value()[c];
    parents.push_back(b);
  }
  return Var::make(std::move(out), parents, [rows, in, outd](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    CMapMat g(n.grad.data(), rows, outd);
    if (px.requires_grad)
      MapMat(px.grad_buffer().data(), rows, in).noalias() += g * CMapMat(pw.value.data(), outd, in);
    if (pw.requires_grad)
      MapMat(pw.grad_buffer().data(), outd, in).noalias() += g.transpose() * CMapMat(px.value.data(), rows, in);
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->grad_buffer();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < outd; ++c) gb[c] += g(r, c);
    }
  });
}

Var gather_rows(const Var& table, const std::vector<int>& idx) {
  check_rank(table, 2, "gather_rows");
  const int rows = table.dim(0), d = table.dim(1);
  Tensor out({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows)
      fail(ErrorKind::kValidation, "gather_rows: index " + std::to_string(idx[i]) + " outside table of " +
                                       std::to_string(rows) + " rows");
    std::copy(table.value().data() + static_cast<std::size_t>(idx[i]) * d,
              table.value().data() + static_cast<std::size_t>(idx[i] + 1) * d, out.data() + i * d);
  }
  return Var::make(std::move(out), {table}, [idx, d](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[i]) * d + j] += n.grad[i * d + j];
  });
}

Var scatter_add_rows(const Var& src, const std::vector<int>& idx, int rows) {
  check_rank(src, 2, "scatter_add_rows");
  const int d = src.dim(1);
  if (static_cast<std::size_t>(src.dim(0)) != idx.size())
    fail(ErrorKind::kValidation, "scatter_add_rows: index count mismatch");
  Tensor out({rows, d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows) fail(ErrorKind::kValidation, "scatter_add_rows: index out of range");
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(idx[i]) * d + j] += src.value()[i * d + j];
  }
  return Var::make(std::move(out), {src}, [idx, d](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < d; ++j) g[i * d + j] += n.grad[static_cast<std::size_t>(idx[i]) * d + j];
  });
}

Var scale_rows(const Var& a, const std::vector<double>& factors) {
  check_rank(a, 2, "scale_rows");
  const int rows = a.dim(0), d = a.dim(1);
  if (factors.size() != static_cast<std::size_t>(rows)) fail(ErrorKind::kValidation, "scale_rows: factor count");
  Tensor out = a.value();
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(r) * d + j] *= factors[r];
  return Var::make(std::move(out), {a}, [factors, d](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < factors.size(); ++r)
      for (int j = 0; j < d; ++j) g[r * d + j] += n.grad[r * d + j] * factors[r];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_rank(x, 3, "conv2d");
  check_rank(w, 4, "conv2d");
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k)
    fail(ErrorKind::kValidation, "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                                     shape_str(x.shape()));
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) fail(ErrorKind::kValidation, "conv2d: input too small " + shape_str(x.shape()));
  const int ckk = c * k * k;
  const int plane = ho * wo;
  std::vector<double> cols(static_cast<std::size_t>(ckk) * plane);
  im2col(x.value().data(), c, h, wd, k, stride, pad, ho, wo, cols.data());
  Tensor out({o, ho, wo});
  MapMat om(out.data(), o, plane);
  om.noalias() = CMapMat(w.value().data(), o, ckk) * CMapMat(cols.data(), ckk, plane);
  std::vector<Var> parents{x, w};
  if (b.defined()) {
    for (int oc = 0; oc < o; ++oc) om.row(oc).array() += b.value()[oc];
    parents.push_back(b);
  }
  return Var::make(std::move(out), parents, [=](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    CMapMat g(n.grad.data(), o, plane);
    if (pw.requires_grad) {
      std::vector<double> cl(static_cast<std::size_t>(ckk) * plane);
      im2col(px.value.data(), c, h, wd, k, stride, pad, ho, wo, cl.data());
      MapMat(pw.grad_buffer().data(), o, ckk).noalias() += g * CMapMat(cl.data(), ckk, plane).transpose();
    }
    if (px.requires_grad) {
      RowMat dcols = CMapMat(pw.value.data(), o, ckk).transpose() * g;
      col2im(dcols.data(), c, h, wd, k, stride, pad, ho, wo, px.grad_buffer().data());
    }
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->grad_buffer();
      for (int oc = 0; oc < o; ++oc) {
        const double* row = n.grad.data() + static_cast<std::size_t>(oc) * plane;
        double s = 0;
        for (int p = 0; p < plane; ++p) s += row[p];
        gb[oc] += s;
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_rank(x, 3, "conv_transpose2d");
  check_rank(w, 4, "conv_transpose2d");
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int o = w.dim(1), k = w.dim(2);
  if (w.dim(0) != c) fail(ErrorKind::kValidation, "conv_transpose2d: channel mismatch");
  const int hout = (h - 1) * stride - 2 * pad + k;
  const int wout = (wd - 1) * stride - 2 * pad + k;
  const int okk = o * k * k;
  const int plane = h * wd;
  RowMat cols = CMapMat(w.value().data(), c, okk).transpose() * CMapMat(x.value().data(), c, plane);
  Tensor out({o, hout, wout});
  col2im(cols.data(), o, hout, wout, k, stride, pad, h, wd, out.data());
  std::vector<Var> parents{x, w};
  if (b.defined()) {
    const std::size_t op = static_cast<std::size_t>(hout) * wout;
    for (int oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < op; ++i) out[oc * op + i] += b.value()[oc];
    parents.push_back(b);
  }
  return Var::make(std::move(out), parents, [=](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    std::vector<double> gcols(static_cast<std::size_t>(okk) * plane);
    im2col(n.grad.data(), o, hout, wout, k, stride, pad, h, wd, gcols.data());
    CMapMat gc(gcols.data(), okk, plane);
    if (px.requires_grad)
      MapMat(px.grad_buffer().data(), c, plane).noalias() += CMapMat(pw.value.data(), c, okk) * gc;
    if (pw.requires_grad)
      MapMat(pw.grad_buffer().data(), c, okk).noalias() += CMapMat(px.value.data(), c, plane) * gc.transpose();
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->grad_buffer();
      const std::size_t op = static_cast<std::size_t>(hout) * wout;
      for (int oc = 0; oc < o; ++oc)
        for (std::size_t i = 0; i < op; ++i) gb[oc] += n.grad[oc * op + i];
    }
  });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_rank(x, 3, "instance_norm");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c))
    fail(ErrorKind::kValidation, "instance_norm: affine size mismatch");
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (int ci = 0; ci < c; ++ci) {
    const double* src = x.value().data() + ci * plane;
    double mu = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[ci] = is;
    const double gm = gamma.value()[ci], bt = beta.value()[ci];
    for (std::size_t i = 0; i < plane; ++i) {
      const double xh = (src[i] - mu) * is;
      (*xhat)[ci * plane + i] = xh;
      out[ci * plane + i] = gm * xh + bt;
    }
  }
  return Var::make(std::move(out), {x, gamma, beta}, [=](Node& n) {
    Node& px = *n.parents[0];
    Node& pg = *n.parents[1];
    Node& pb = *n.parents[2];
    const double np = static_cast<double>(plane);
    for (int ci = 0; ci < c; ++ci) {
      const double* g = n.grad.data() + ci * plane;
      const double* xh = xhat->data() + ci * plane;
      double sg = 0.0, sgx = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        sg += g[i];
        sgx += g[i] * xh[i];
      }
      if (pg.requires_grad) pg.grad_buffer()[ci] += sgx;
      if (pb.requires_grad) pb.grad_buffer()[ci] += sg;
      if (px.requires_grad) {
        const double gm = pg.value[ci];
        const double is = (*inv_std)[ci];
        double* dx = px.grad_buffer().data() + ci * plane;
        // d/dx of gamma * xhat with xhat = (x - mean) * inv_std
        for (std::size_t i = 0; i < plane; ++i) dx[i] += gm * is * (g[i] - sg / np - xh[i] * sgx / np);
      }
    }
  });
}

Var upsample_nearest(const Var& x, int f) {
  check_rank(x, 3, "upsample_nearest");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, h * f, w * f});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h * f; ++y)
      for (int xx = 0; xx < w * f; ++xx) out.at(ci, y, xx) = x.value().at(ci, y / f, xx / f);
  return Var::make(std::move(out), {x}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h * f; ++y)
        for (int xx = 0; xx < w * f; ++xx) g.at(ci, y / f, xx / f) += n.grad.at(ci, y, xx);
  });
}

Var avg_pool(const Var& x, int f) {
  check_rank(x, 3, "avg_pool");
  if (f == 1) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % f || w % f) fail(ErrorKind::kValidation, "avg_pool: size not divisible by factor");
  const int ho = h / f, wo = w / f;
  const double inv = 1.0 / (f * f);
  Tensor out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ci, y / f, xx / f) += x.value().at(ci, y, xx) * inv;
  return Var::make(std::move(out), {x}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) g.at(ci, y, xx) += n.grad.at(ci, y / f, xx / f) * inv;
  });
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 3, "global_avg_pool");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x.value()[ci * plane + i];
    out[ci] = s / static_cast<double>(plane);
  }
  return Var::make(std::move(out), {x}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < plane; ++i) g[ci * plane + i] += n.grad[ci] / static_cast<double>(plane);
  });
}

Var channel_unit_normalize(const Var& x, double eps) {
  check_rank(x, 3, "channel_unit_normalize");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  auto norms = std::make_shared<std::vector<double>>(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) s += x.value()[ci * plane + i] * x.value()[ci * plane + i];
    const double nr = std::sqrt(s + eps);
    (*norms)[i] = nr;
    for (int ci = 0; ci < c; ++ci) out[ci * plane + i] = x.value()[ci * plane + i] / nr;
  }
  return Var::make(std::move(out), {x}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < plane; ++i) {
      const double nr = (*norms)[i];
      double dot = 0.0;
      for (int ci = 0; ci < c; ++ci) dot += n.grad[ci * plane + i] * n.value[ci * plane + i];
      // y = x / r, dy/dx = (I - y y^T) / r
      for (int ci = 0; ci < c; ++ci) g[ci * plane + i] += (n.grad[ci * plane + i] - n.value[ci * plane + i] * dot) / nr;
    }
  });
}

Var crop_resize(const Var& img, const double box[4], int out) {
  check_rank(img, 3, "crop_resize");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  struct Tap {
    int i00, i01, i10, i11;
    double w00, w01, w10, w11;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(out) * out);
  const double bw = (box[2] - box[0]) * w, bh = (box[3] - box[1]) * h;
  for (int oy = 0; oy < out; ++oy) {
    const double sy = clampd(box[1] * h + (oy + 0.5) * bh / out - 0.5, 0.0, h - 1.0);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out; ++ox) {
      const double sx = clampd(box[0] * w + (ox + 0.5) * bw / out - 0.5, 0.0, w - 1.0);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      (*taps)[oy * out + ox] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1, (1 - fy) * (1 - fx),
                                (1 - fy) * fx,  fy * (1 - fx), fy * fx};
    }
  }
  const std::size_t ip = static_cast<std::size_t>(h) * w, op = static_cast<std::size_t>(out) * out;
  Tensor res({c, out, out});
  for (int ci = 0; ci < c; ++ci) {
    const double* src = img.value().data() + ci * ip;
    for (std::size_t i = 0; i < op; ++i) {
      const Tap& t = (*taps)[i];
      res[ci * op + i] = t.w00 * src[t.i00] + t.w01 * src[t.i01] + t.w10 * src[t.i10] + t.w11 * src[t.i11];
    }
  }
  return Var::make(std::move(res), {img}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      double* dst = g.data() + ci * ip;
      for (std::size_t i = 0; i < op; ++i) {
        const Tap& t = (*taps)[i];
        const double gv = n.grad[ci * op + i];
        dst[t.i00] += t.w00 * gv;
        dst[t.i01] += t.w01 * gv;
        dst[t.i10] += t.w10 * gv;
        dst[t.i11] += t.w11 * gv;
      }
    }
  });
}

Var bce_with_logits(const Var& logits, double target, double logit_clamp) {
  const std::size_t n = logits.size();
  if (n == 0) fail(ErrorKind::kValidation, "bce_with_logits on empty tensor");
  double s = 0.0;
  for (double l0 : logits.value().values()) {
    const double l = clampd(l0, -logit_clamp, logit_clamp);
    s += std::max(l, 0.0) + std::log1p(std::exp(-std::fabs(l))) - target * l;
  }
  return Var::make(Tensor({1}, s / static_cast<double>(n)), {logits}, [=](Node& nd) {
    Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double scale = nd.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = p.value[i];
      if (l <= -logit_clamp || l >= logit_clamp) continue;
      const double sg = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
      g[i] += scale * (sg - target);
    }
  });
}

Var bce_prob(const Var& probs, const Tensor& target, double eps) {
  if (probs.size() != target.size()) fail(ErrorKind::kValidation, "bce_prob: size mismatch");
  const std::size_t n = probs.size();
  if (n == 0) fail(ErrorKind::kValidation, "bce_prob on empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = clampd(probs.value()[i], eps, 1.0 - eps);
    const double t = target[i];
    s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return Var::make(Tensor({1}, s / static_cast<double>(n)), {probs}, [=](Node& nd) {
    Node& pr = *nd.parents[0];
    if (!pr.requires_grad) return;
    Tensor& g = pr.grad_buffer();
    const double scale = nd.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pr.value[i];
      if (p <= eps || p >= 1.0 - eps) continue;
      const double t = target[i];
      g[i] += scale * (-t / p + (1.0 - t) / (1.0 - p));
    }
  });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "softmax_cross_entropy");
  const int rows = logits.dim(0), cls = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(rows)) fail(ErrorKind::kValidation, "softmax_cross_entropy: labels");
  if (rows == 0) fail(ErrorKind::kValidation, "softmax_cross_entropy on empty batch");
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cls) fail(ErrorKind::kValidation, "softmax_cross_entropy: label out of range");
    const double* l = logits.value().data() + static_cast<std::size_t>(r) * cls;
    const double mx = *std::max_element(l, l + cls);
    double z = 0.0;
    for (int j = 0; j < cls; ++j) z += std::exp(l[j] - mx);
    for (int j = 0; j < cls; ++j) (*probs)[r * cls + j] = std::exp(l[j] - mx) / z;
    loss -= (l[labels[r]] - mx) - std::log(z);
  }
  return Var::make(Tensor({1}, loss / rows), {logits}, [=](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double scale = n.grad[0] / rows;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < cls; ++j)
        g[r * cls + j] += scale * ((*probs)[r * cls + j] - (j == labels[r] ? 1.0 : 0.0));
  });
}

}  // namespace isg::ops
