#include "pddm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace pddm {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

int shape_numel(const Shape& s) {
  int n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("non-positive extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

static void check_finite(const Vec& v, const char* op) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(op) + ": non-finite input");
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->data = Vec::Zero(shape_numel(s));
  n->requires_grad = requires_grad;
  n->track = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t = zeros(s);
  t.data().setConstant(v);
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values, bool requires_grad) {
  if (static_cast<int>(values.size()) != shape_numel(s))
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(s));
  Tensor t = zeros(s, requires_grad);
  std::copy(values.begin(), values.end(), t.data().data());
  return t;
}

Tensor Tensor::from_vec(const Shape& s, Vec values, bool requires_grad) {
  if (static_cast<int>(values.size()) != shape_numel(s))
    throw std::invalid_argument("value count does not match shape " + shape_str(s));
  Tensor t = zeros(s, requires_grad);
  t.data() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape()));
  return n_->data[0];
}

Tensor make_op(Shape shape, Vec data, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool track = false;
  for (const auto& p : parents) track = track || p.tracked();
  n->track = track;
  if (track) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.shape(), a.data() + b.data(), {a, b}, [pa, pb](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad; }
    if (pb->track) { pb->ensure_grad(); pb->grad += out.grad; }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.shape(), a.data() - b.data(), {a, b}, [pa, pb](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad; }
    if (pb->track) { pb->ensure_grad(); pb->grad -= out.grad; }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.shape(), a.data().cwiseProduct(b.data()), {a, b}, [pa, pb](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad.cwiseProduct(pb->data); }
    if (pb->track) { pb->ensure_grad(); pb->grad += out.grad.cwiseProduct(pa->data); }
  });
}

Tensor scale(const Tensor& a, double s) {
  Node* pa = a.node().get();
  return make_op(a.shape(), a.data() * s, {a}, [pa, s](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad * s; }
  });
}

Tensor add_const(const Tensor& a, double c) {
  Node* pa = a.node().get();
  return make_op(a.shape(), (a.data().array() + c).matrix(), {a}, [pa](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad; }
  });
}

Tensor relu(const Tensor& a) {
  Node* pa = a.node().get();
  return make_op(a.shape(), a.data().cwiseMax(0.0), {a}, [pa](Node& out) {
    if (!pa->track) return;
    pa->ensure_grad();
    pa->grad += (pa->data.array() > 0.0).select(out.grad.array(), 0.0).matrix();
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  Node* pa = a.node().get();
  Vec y = (a.data().array() > 0.0).select(a.data().array(), a.data().array() * slope).matrix();
  return make_op(a.shape(), std::move(y), {a}, [pa, slope](Node& out) {
    if (!pa->track) return;
    pa->ensure_grad();
    pa->grad += (pa->data.array() > 0.0).select(out.grad.array(), out.grad.array() * slope).matrix();
  });
}

Tensor abs_val(const Tensor& a) {
  Node* pa = a.node().get();
  return make_op(a.shape(), a.data().cwiseAbs(), {a}, [pa](Node& out) {
    if (!pa->track) return;
    pa->ensure_grad();
    pa->grad += out.grad.cwiseProduct(pa->data.array().sign().matrix());
  });
}

Tensor square(const Tensor& a) {
  Node* pa = a.node().get();
  return make_op(a.shape(), a.data().cwiseProduct(a.data()), {a}, [pa](Node& out) {
    if (!pa->track) return;
    pa->ensure_grad();
    pa->grad += 2.0 * out.grad.cwiseProduct(pa->data);
  });
}

Tensor div_by(const Tensor& a, const Tensor& b) {
  if (b.size() != 1) throw std::invalid_argument("div_by: divisor must be scalar, got " + shape_str(b.shape()));
  double s = b[0];
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.shape(), a.data() / s, {a, b}, [pa, pb, s](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad / s; }
    if (pb->track) {
      pb->ensure_grad();
      pb->grad[0] += -out.grad.dot(pa->data) / (s * s);
    }
  });
}

// --- shape / reduction ---

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  Node* pa = a.node().get();
  return make_op(s, a.data(), {a}, [pa](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad += out.grad; }
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: empty input list");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  int rows = 1;
  for (int e : lead) rows *= e;
  int total_f = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead)
      throw std::invalid_argument("concat_last: leading extents differ, " +
                                  shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(p.shape().back());
    total_f += p.shape().back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total_f);
  Vec out(rows * total_f);
  int off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Vec& src = parts[i].data();
    int f = widths[i];
    for (int r = 0; r < rows; ++r)
      out.segment(r * total_f + off, f) = src.segment(r * f, f);
    off += f;
  }
  std::vector<Node*> raw;
  for (const auto& p : parts) raw.push_back(p.node().get());
  return make_op(out_shape, std::move(out), parts,
                 [raw, widths, rows, total_f](Node& out_node) {
    int off2 = 0;
    for (size_t i = 0; i < raw.size(); ++i) {
      int f = widths[i];
      if (raw[i]->track) {
        raw[i]->ensure_grad();
        for (int r = 0; r < rows; ++r)
          raw[i]->grad.segment(r * f, f) += out_node.grad.segment(r * total_f + off2, f);
      }
      off2 += f;
    }
  });
}

Tensor slice_last(const Tensor& a, int start, int len) {
  int f = a.shape().back();
  if (start < 0 || len < 1 || start + len > f)
    throw std::invalid_argument("slice_last: [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of range for " +
                                shape_str(a.shape()));
  int rows = a.size() / f;
  Shape out_shape = a.shape();
  out_shape.back() = len;
  Vec out(rows * len);
  for (int r = 0; r < rows; ++r) out.segment(r * len, len) = a.data().segment(r * f + start, len);
  Node* pa = a.node().get();
  return make_op(out_shape, std::move(out), {a}, [pa, rows, f, start, len](Node& out_node) {
    if (!pa->track) return;
    pa->ensure_grad();
    for (int r = 0; r < rows; ++r)
      pa->grad.segment(r * f + start, len) += out_node.grad.segment(r * len, len);
  });
}

Tensor sum(const Tensor& a) {
  Node* pa = a.node().get();
  return make_op({1}, Vec::Constant(1, a.data().sum()), {a}, [pa](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad.array() += out.grad[0]; }
  });
}

Tensor mean(const Tensor& a) {
  Node* pa = a.node().get();
  double inv_n = 1.0 / static_cast<double>(a.size());
  return make_op({1}, Vec::Constant(1, a.data().mean()), {a}, [pa, inv_n](Node& out) {
    if (pa->track) { pa->ensure_grad(); pa->grad.array() += out.grad[0] * inv_n; }
  });
}

Tensor gather(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() != 1) throw std::invalid_argument("gather: expected 1-D tensor, got " + shape_str(x.shape()));
  Vec out(static_cast<int>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.size())
      throw std::invalid_argument("gather: index " + std::to_string(idx[i]) + " out of range");
    out[static_cast<int>(i)] = x[idx[i]];
  }
  Node* px = x.node().get();
  return make_op({static_cast<int>(idx.size())}, std::move(out), {x}, [px, idx](Node& out_node) {
    if (!px->track) return;
    px->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i)
      px->grad[idx[i]] += out_node.grad[static_cast<int>(i)];
  });
}

// --- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vec out(m * n);
  {
    CMatMap ma(a.data().data(), m, k), mb(b.data().data(), k, n);
    MatMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node& out_node) {
    CMatMap g(out_node.grad.data(), m, n);
    if (pa->track) {
      pa->ensure_grad();
      CMatMap mb(pb->data.data(), k, n);
      MatMap ga(pa->grad.data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (pb->track) {
      pb->ensure_grad();
      CMatMap ma(pa->data.data(), m, k);
      MatMap gb(pb->grad.data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  Vec out(m * n);
  {
    CMatMap ma(a.data().data(), m, n);
    MatMap mo(out.data(), n, m);
    mo = ma.transpose();
  }
  Node* pa = a.node().get();
  return make_op({n, m}, std::move(out), {a}, [pa, m, n](Node& out_node) {
    if (!pa->track) return;
    pa->ensure_grad();
    CMatMap g(out_node.grad.data(), n, m);
    MatMap ga(pa->grad.data(), m, n);
    ga += g.transpose();
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0))
    throw std::invalid_argument("add_rowwise: " + shape_str(x.shape()) + " with bias " +
                                shape_str(bias.shape()));
  int f = bias.dim(0);
  int rows = x.size() / f;
  Vec out = x.data();
  for (int r = 0; r < rows; ++r) out.segment(r * f, f) += bias.data();
  Node* px = x.node().get();
  Node* pb = bias.node().get();
  return make_op(x.shape(), std::move(out), {x, bias}, [px, pb, rows, f](Node& out_node) {
    if (px->track) { px->ensure_grad(); px->grad += out_node.grad; }
    if (pb->track) {
      pb->ensure_grad();
      for (int r = 0; r < rows; ++r) pb->grad += out_node.grad.segment(r * f, f);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowwise(matmul(x, w), b);
}

// --- normalization / softmax ---

Tensor softmax_lastaxis(const Tensor& a) {
  check_finite(a.data(), "softmax_lastaxis");
  int f = a.shape().back();
  int rows = a.size() / f;
  Vec out(a.size());
  for (int r = 0; r < rows; ++r) {
    auto seg = a.data().segment(r * f, f);
    double mx = seg.maxCoeff();
    Eigen::ArrayXd e = (seg.array() - mx).exp();
    out.segment(r * f, f) = (e / e.sum()).matrix();
  }
  Node* pa = a.node().get();
  return make_op(a.shape(), std::move(out), {a}, [pa, rows, f](Node& out_node) {
    if (!pa->track) return;
    pa->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      auto p = out_node.data.segment(r * f, f);
      auto g = out_node.grad.segment(r * f, f);
      double gp = g.dot(p);
      pa->grad.segment(r * f, f) += (p.array() * (g.array() - gp)).matrix();
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  int f = a.shape().back();
  if (gamma.size() != f || beta.size() != f)
    throw std::invalid_argument("layer_norm: affine shape mismatch for " + shape_str(a.shape()));
  int rows = a.size() / f;
  Vec out(a.size()), xhat(a.size()), inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    auto seg = a.data().segment(r * f, f);
    double mu = seg.mean();
    double var = (seg.array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.segment(r * f, f) = ((seg.array() - mu) * is).matrix();
    out.segment(r * f, f) =
        xhat.segment(r * f, f).cwiseProduct(gamma.data()) + beta.data();
  }
  Node* pa = a.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  return make_op(a.shape(), std::move(out), {a, gamma, beta},
                 [pa, pg, pb, rows, f, xhat, inv_std](Node& out_node) {
    for (int r = 0; r < rows; ++r) {
      auto g = out_node.grad.segment(r * f, f);
      auto xh = xhat.segment(r * f, f);
      if (pg->track) { pg->ensure_grad(); pg->grad += g.cwiseProduct(xh); }
      if (pb->track) { pb->ensure_grad(); pb->grad += g; }
      if (pa->track) {
        pa->ensure_grad();
        Vec dxhat = g.cwiseProduct(pg->data);
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(xh).mean();
        pa->grad.segment(r * f, f) +=
            inv_std[r] * (dxhat.array() - m1 - xh.array() * m2).matrix();
      }
    }
  });
}

Tensor channel_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  int c = a.shape().back();
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("channel_norm: affine shape mismatch for " + shape_str(a.shape()));
  int rows = a.size() / c;
  CMatMap x(a.data().data(), rows, c);
  Eigen::RowVectorXd mu = x.colwise().mean();
  Eigen::RowVectorXd var = (x.rowwise() - mu).array().square().colwise().mean().matrix();
  Eigen::RowVectorXd is = (var.array() + eps).rsqrt().matrix();
  Vec xhat(a.size());
  {
    MatMap xh(xhat.data(), rows, c);
    xh = x;
    xh.rowwise() -= mu;
    xh.array().rowwise() *= is.array();
  }
  Vec out(a.size());
  {
    CMatMap xh(xhat.data(), rows, c);
    MatMap o(out.data(), rows, c);
    o = xh;
    o.array().rowwise() *= gamma.data().transpose().array();
    o.array().rowwise() += beta.data().transpose().array();
  }
  Node* pa = a.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  Eigen::RowVectorXd is_copy = is;
  return make_op(a.shape(), std::move(out), {a, gamma, beta},
                 [pa, pg, pb, rows, c, xhat, is_copy](Node& out_node) {
    CMatMap g(out_node.grad.data(), rows, c);
    CMatMap xh(xhat.data(), rows, c);
    if (pg->track) {
      pg->ensure_grad();
      pg->grad += (g.array() * xh.array()).colwise().sum().matrix().transpose();
    }
    if (pb->track) {
      pb->ensure_grad();
      pb->grad += g.colwise().sum().transpose();
    }
    if (pa->track) {
      pa->ensure_grad();
      Eigen::MatrixXd dxhat = g;
      dxhat.array().rowwise() *= pg->data.transpose().array();
      Eigen::RowVectorXd m1 = dxhat.colwise().mean();
      Eigen::RowVectorXd m2 = (dxhat.array() * xh.array()).colwise().mean();
      Eigen::MatrixXd dx = dxhat;
      dx.rowwise() -= m1;
      Eigen::MatrixXd xh_m2 = xh;
      xh_m2.array().rowwise() *= m2.array();
      dx -= xh_m2;
      dx.array().rowwise() *= is_copy.array();
      MatMap ga(pa->grad.data(), rows, c);
      ga += dx;
    }
  });
}

// --- convolution ---

namespace {

struct ConvGeom {
  int h, w, c, k, stride, pad, oh, ow;
};

ConvGeom conv_geom(int h, int w, int c, int k, int stride) {
  ConvGeom g;
  g.h = h; g.w = w; g.c = c; g.k = k; g.stride = stride;
  g.pad = (k - 1) / 2;
  g.oh = (h + 2 * g.pad - k) / stride + 1;
  g.ow = (w + 2 * g.pad - k) / stride + 1;
  return g;
}

// cols: [oh*ow, k*k*c], column ordering (dy, dx, c) to match kernel layout [k,k,c,cout].
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int kk = g.k * g.k * g.c;
  for (int oy = 0; oy < g.oh; ++oy) {
    for (int ox = 0; ox < g.ow; ++ox) {
      double* row = cols + (oy * g.ow + ox) * kk;
      for (int dy = 0; dy < g.k; ++dy) {
        int iy = oy * g.stride - g.pad + dy;
        for (int dx = 0; dx < g.k; ++dx) {
          int ix = ox * g.stride - g.pad + dx;
          double* dst = row + (dy * g.k + dx) * g.c;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.c, 0.0);
          } else {
            const double* src = x + (iy * g.w + ix) * g.c;
            std::copy(src, src + g.c, dst);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into the image buffer.
void col2im(const double* cols, const ConvGeom& g, double* x_accum) {
  const int kk = g.k * g.k * g.c;
  for (int oy = 0; oy < g.oh; ++oy) {
    for (int ox = 0; ox < g.ow; ++ox) {
      const double* row = cols + (oy * g.ow + ox) * kk;
      for (int dy = 0; dy < g.k; ++dy) {
        int iy = oy * g.stride - g.pad + dy;
        if (iy < 0 || iy >= g.h) continue;
        for (int dx = 0; dx < g.k; ++dx) {
          int ix = ox * g.stride - g.pad + dx;
          if (ix < 0 || ix >= g.w) continue;
          const double* src = row + (dy * g.k + dx) * g.c;
          double* dst = x_accum + (iy * g.w + ix) * g.c;
          for (int c = 0; c < g.c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride) {
  if (x.rank() != 3 || k.rank() != 4)
    throw std::invalid_argument("conv2d: expected x[h,w,c], k[kh,kw,cin,cout], got " +
                                shape_str(x.shape()) + " and " + shape_str(k.shape()));
  int kh = k.dim(0), kw = k.dim(1);
  if (kh != kw || (kh != 1 && kh != 3))
    throw std::invalid_argument("conv2d: unsupported kernel size " + shape_str(k.shape()) +
                                " (only 1x1 and 3x3)");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: unsupported stride " + std::to_string(stride));
  if (k.dim(2) != x.dim(2))
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) + " vs kernel " +
                                shape_str(k.shape()));
  int cout = k.dim(3);
  if (b.size() != cout) throw std::invalid_argument("conv2d: bias shape mismatch");
  ConvGeom g = conv_geom(x.dim(0), x.dim(1), x.dim(2), kh, stride);
  const int kk = g.k * g.k * g.c;
  auto cols = std::make_shared<Vec>(g.oh * g.ow * kk);
  im2col(x.data().data(), g, cols->data());
  Vec out(g.oh * g.ow * cout);
  {
    CMatMap mc(cols->data(), g.oh * g.ow, kk);
    CMatMap mk(k.data().data(), kk, cout);
    MatMap mo(out.data(), g.oh * g.ow, cout);
    mo.noalias() = mc * mk;
    mo.rowwise() += b.data().transpose();
  }
  Node* px = x.node().get();
  Node* pk = k.node().get();
  Node* pb = b.node().get();
  return make_op({g.oh, g.ow, cout}, std::move(out), {x, k, b},
                 [px, pk, pb, g, kk, cout, cols](Node& out_node) {
    CMatMap gy(out_node.grad.data(), g.oh * g.ow, cout);
    if (pb->track) {
      pb->ensure_grad();
      pb->grad += gy.colwise().sum().transpose();
    }
    if (pk->track) {
      pk->ensure_grad();
      CMatMap mc(cols->data(), g.oh * g.ow, kk);
      MatMap gk(pk->grad.data(), kk, cout);
      gk.noalias() += mc.transpose() * gy;
    }
    if (px->track) {
      px->ensure_grad();
      CMatMap mk(pk->data.data(), kk, cout);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcols =
          gy * mk.transpose();
      col2im(gcols.data(), g, px->grad.data());
    }
  });
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& k, const Tensor& b) {
  if (x.rank() != 3 || k.rank() != 4 || k.dim(0) != 3 || k.dim(1) != 3)
    throw std::invalid_argument("transposed_conv2d: expected x[h,w,cin], k[3,3,cout,cin], got " +
                                shape_str(x.shape()) + " and " + shape_str(k.shape()));
  int cin = x.dim(2), cout = k.dim(2);
  if (k.dim(3) != cin)
    throw std::invalid_argument("transposed_conv2d: channel mismatch " + shape_str(x.shape()) +
                                " vs kernel " + shape_str(k.shape()));
  if (b.size() != cout) throw std::invalid_argument("transposed_conv2d: bias shape mismatch");
  int h = x.dim(0), w = x.dim(1);
  // Geometry of the conv this op is adjoint to: [2h,2w,cout] -> [h,w,cin], k=3, stride 2.
  ConvGeom g = conv_geom(2 * h, 2 * w, cout, 3, 2);
  const int kk = 9 * cout;
  Vec out = Vec::Zero(2 * h * 2 * w * cout);
  {
    CMatMap mx(x.data().data(), h * w, cin);
    CMatMap mk(k.data().data(), kk, cin);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcols =
        mx * mk.transpose();
    col2im(gcols.data(), g, out.data());
    MatMap mo(out.data(), 2 * h * 2 * w, cout);
    mo.rowwise() += b.data().transpose();
  }
  Node* px = x.node().get();
  Node* pk = k.node().get();
  Node* pb = b.node().get();
  return make_op({2 * h, 2 * w, cout}, std::move(out), {x, k, b},
                 [px, pk, pb, g, kk, cin, cout, h, w](Node& out_node) {
    if (pb->track) {
      pb->ensure_grad();
      CMatMap gy(out_node.grad.data(), 2 * h * 2 * w, cout);
      pb->grad += gy.colwise().sum().transpose();
    }
    if (px->track || pk->track) {
      Vec cols(h * w * kk);
      im2col(out_node.grad.data(), g, cols.data());
      CMatMap mc(cols.data(), h * w, kk);
      if (px->track) {
        px->ensure_grad();
        CMatMap mk(pk->data.data(), kk, cin);
        MatMap gx(px->grad.data(), h * w, cin);
        gx.noalias() += mc * mk;
      }
      if (pk->track) {
        pk->ensure_grad();
        CMatMap mx(px->data.data(), h * w, cin);
        MatMap gk(pk->grad.data(), kk, cin);
        gk.noalias() += mc.transpose() * mx;
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& k, const Tensor& b) {
  if (x.rank() != 2 || k.rank() != 3 || k.dim(0) != 3)
    throw std::invalid_argument("conv1d: expected x[n_ch,len], k[3,n_ch,c_out], got " +
                                shape_str(x.shape()) + " and " + shape_str(k.shape()));
  int n_ch = x.dim(0), len = x.dim(1), cout = k.dim(2);
  if (k.dim(1) != n_ch)
    throw std::invalid_argument("conv1d: channel mismatch " + shape_str(x.shape()) + " vs kernel " +
                                shape_str(k.shape()));
  if (b.size() != cout) throw std::invalid_argument("conv1d: bias shape mismatch");
  // cols: [len, 3*n_ch] with column ordering (dt, ch), same padding.
  Vec cols = Vec::Zero(len * 3 * n_ch);
  for (int t = 0; t < len; ++t)
    for (int dt = 0; dt < 3; ++dt) {
      int it = t - 1 + dt;
      if (it < 0 || it >= len) continue;
      for (int ch = 0; ch < n_ch; ++ch)
        cols[(t * 3 + dt) * n_ch + ch] = x.data()[ch * len + it];
    }
  // y[t, cout] then transposed to [cout, len].
  Vec out(cout * len);
  {
    CMatMap mc(cols.data(), len, 3 * n_ch);
    CMatMap mk(k.data().data(), 3 * n_ch, cout);
    MatMap mo(out.data(), cout, len);
    mo.noalias() = (mc * mk).transpose();
    mo.colwise() += b.data();
  }
  Node* px = x.node().get();
  Node* pk = k.node().get();
  Node* pb = b.node().get();
  return make_op({cout, len}, std::move(out), {x, k, b},
                 [px, pk, pb, n_ch, len, cout, cols](Node& out_node) {
    CMatMap gy_t(out_node.grad.data(), cout, len);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gy =
        gy_t.transpose();  // [len, cout]
    if (pb->track) {
      pb->ensure_grad();
      pb->grad += gy.colwise().sum().transpose();
    }
    if (pk->track) {
      pk->ensure_grad();
      CMatMap mc(cols.data(), len, 3 * n_ch);
      MatMap gk(pk->grad.data(), 3 * n_ch, cout);
      gk.noalias() += mc.transpose() * gy;
    }
    if (px->track) {
      px->ensure_grad();
      CMatMap mk(pk->data.data(), 3 * n_ch, cout);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcols =
          gy * mk.transpose();  // [len, 3*n_ch]
      for (int t = 0; t < len; ++t)
        for (int dt = 0; dt < 3; ++dt) {
          int it = t - 1 + dt;
          if (it < 0 || it >= len) continue;
          for (int ch = 0; ch < n_ch; ++ch)
            px->grad[ch * len + it] += gcols(t, dt * n_ch + ch);
        }
    }
  });
}

// --- autodiff driver ---

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  // Iterative post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  Node* root = loss.node().get();
  if (!root->track) return;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->track && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Leaves accumulate across calls; interior nodes must start each pass clean
  // or a reused graph would re-propagate stale gradients.
  for (Node* n : order)
    if (!n->parents.empty() && n->grad.size() == n->data.size()) n->grad.setZero();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() == n->data.size()) n->backprop(*n);
  }
}

static double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({1e-3, std::abs(a), std::abs(n)});
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double step, double tol) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  backward(y);
  Vec analytic = x.grad();
  GradCheckReport rep;
  for (int i = 0; i < x.size(); ++i) {
    double saved = x.data()[i];
    x.data()[i] = saved + step;
    double fp = f(x).item();
    x.data()[i] = saved - step;
    double fm = f(x).item();
    x.data()[i] = saved;
    double numeric = (fp - fm) / (2.0 * step);
    double e = rel_err(analytic[i], numeric);
    if (e > rep.max_rel_err) {
      rep.max_rel_err = e;
      rep.worst = "entry " + std::to_string(i) + ": analytic " + std::to_string(analytic[i]) +
                  " vs numeric " + std::to_string(numeric);
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

// --- parameters ---

Tensor ParamStore::insert(const std::string& path, Tensor t) {
  if (params_.count(path))
    throw std::logic_error("ParamStore: duplicate parameter path '" + path + "'");
  t.set_requires_grad(true);
  params_.emplace(path, t);
  return t;
}

Tensor ParamStore::create_weight(const std::string& path, const Shape& s, int fan_in, int fan_out) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t = Tensor::zeros(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = dist(rng_);
  return insert(path, t);
}

Tensor ParamStore::create_zeros(const std::string& path, const Shape& s) {
  return insert(path, Tensor::zeros(s));
}

Tensor ParamStore::create_ones(const std::string& path, const Shape& s) {
  return insert(path, Tensor::full(s, 1.0));
}

Tensor ParamStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::logic_error("ParamStore: unknown parameter '" + path + "'");
  return it->second;
}

int ParamStore::total_size() const {
  int n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, t] : params_) t.zero_grad();
}

namespace {
template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_raw(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}
}  // namespace

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write("PDDM", 4);
  write_raw<uint8_t>(os, 1);
  write_raw<uint32_t>(os, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    write_raw<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (int e : t.shape()) write_raw<uint32_t>(os, static_cast<uint32_t>(e));
    for (int i = 0; i < t.size(); ++i) write_raw<float>(os, static_cast<float>(t.data()[i]));
  }
}

void ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PDDM", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  uint8_t version;
  read_raw(is, version);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  uint32_t count;
  read_raw(is, count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len;
    read_raw(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank;
    read_raw(is, rank);
    Shape s(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t e;
      read_raw(is, e);
      s[d] = static_cast<int>(e);
    }
    int numel = shape_numel(s);
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::runtime_error("checkpoint: parameter '" + name + "' not present in this model");
    if (it->second.shape() != s)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(s) + " vs model " + shape_str(it->second.shape()));
    for (int j = 0; j < numel; ++j) {
      float v;
      read_raw(is, v);
      it->second.data()[j] = static_cast<double>(v);
    }
  }
}

GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  double step, double tol, int max_entries_per_param,
                                  uint64_t seed) {
  params.zero_grads();
  backward(loss_fn());
  std::map<std::string, Vec> analytic;
  for (const auto& [name, t] : params.all())
    analytic[name] = t.has_grad() ? Tensor(t).grad() : Vec::Zero(t.size());
  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  for (const auto& [name, t_const] : params.all()) {
    Tensor t = t_const;
    std::vector<int> entries;
    if (max_entries_per_param <= 0 || t.size() <= max_entries_per_param) {
      entries.resize(static_cast<size_t>(t.size()));
      for (int i = 0; i < t.size(); ++i) entries[static_cast<size_t>(i)] = i;
    } else {
      std::vector<int> all_idx(static_cast<size_t>(t.size()));
      for (int i = 0; i < t.size(); ++i) all_idx[static_cast<size_t>(i)] = i;
      std::shuffle(all_idx.begin(), all_idx.end(), rng);
      entries.assign(all_idx.begin(), all_idx.begin() + max_entries_per_param);
    }
    for (int i : entries) {
      double saved = t.data()[i];
      t.data()[i] = saved + step;
      double fp = loss_fn().item();
      t.data()[i] = saved - step;
      double fm = loss_fn().item();
      t.data()[i] = saved;
      double numeric = (fp - fm) / (2.0 * step);
      double e = rel_err(analytic[name][i], numeric);
      if (e > rep.max_rel_err) {
        rep.max_rel_err = e;
        rep.worst = name + "[" + std::to_string(i) + "]: analytic " +
                    std::to_string(analytic[name][i]) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace pddm
