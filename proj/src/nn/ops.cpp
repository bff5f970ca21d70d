#include "urgr/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "urgr/error.hpp"
#include "urgr/imaging.hpp"

namespace urgr::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

// Parent gradient buffer, or null when that parent is a constant.
Tensor* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

const Tensor& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          to_string(a.shape()));
  }
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw InvalidArgument("axis out of range");
  return axis;
}

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Tensor out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(std::move(out), {x}, [df](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    if (!gx) return;
    const Tensor& in = parent_value(self, 0);
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += self.grad[i] * df(in[i], self.value[i]);
  });
}

constexpr double kSeluLambda = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Dense resampling matrix [out, in] from bicubic taps.
MatR resample_matrix(int in_size, int out_size) {
  MatR m = MatR::Zero(out_size, in_size);
  const auto rows = imaging::bicubic_weights(in_size, out_size);
  for (int o = 0; o < out_size; ++o) {
    for (std::size_t k = 0; k < rows[o].index.size(); ++k) m(o, rows[o].index[k]) += rows[o].weight[k];
  }
  return m;
}

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* cols) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* x) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (Tensor* g = parent_grad(self, i)) g->add_(self.grad);
    }
  });
}

Var add_broadcast(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw InvalidArgument("add_broadcast: " + to_string(sb) + " is not a suffix of " + to_string(sa));
  }
  const std::size_t inner = b.value().size();
  const std::size_t outer = a.value().size() / inner;
  Tensor out = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [outer, inner](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) g->add_(self.grad);
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) (*g)[i] += self.grad[o * inner + i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) g->add_(self.grad);
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = parent_value(self, 0);
    const Tensor& bv = parent_value(self, 1);
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

Var sum(const Var& a) {
  return make_result(Tensor::scalar(a.value().sum()), {a}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      const double d = self.grad[0];
      for (double& v : g->values()) v += d;
    }
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_result(Tensor::scalar(a.value().sum() / n), {a}, [n](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      const double d = self.grad[0] / n;
      for (double& v : g->values()) v += d;
    }
  });
}

Var weighted_sum(const Var& a, const Tensor& w) {
  if (w.size() != a.value().size()) throw InvalidArgument("weighted_sum: weight size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += a.value()[i] * w[i];
  return make_result(Tensor::scalar(acc), {a}, [w](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      const double d = self.grad[0];
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += d * w[i];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var permute(const Var& a, const std::vector<int>& perm) {
  const Shape& in_shape = a.shape();
  const int r = static_cast<int>(in_shape.size());
  if (static_cast<int>(perm.size()) != r) throw InvalidArgument("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) throw InvalidArgument("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  // Input stride for each output axis.
  std::vector<std::size_t> gather(r);
  for (int i = 0; i < r; ++i) gather[i] = in_strides[perm[i]];

  // Source offset of every output element, in output order.
  const std::size_t n = numel(out_shape);
  auto offsets = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<int> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*offsets)[o] = src;
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      src += gather[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= gather[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  Tensor out(out_shape);
  const Tensor& in = a.value();
  for (std::size_t o = 0; o < n; ++o) out[o] = in[(*offsets)[o]];
  return make_result(std::move(out), {a}, [offsets](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < offsets->size(); ++o) (*g)[(*offsets)[o]] += self.grad[o];
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const Shape& first = parts.front().shape();
  const int r = static_cast<int>(first.size());
  axis = normalize_axis(axis, r);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != r) throw InvalidArgument("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && s[i] != first[i]) {
        throw InvalidArgument("concat: shape " + to_string(s) + " incompatible with " + to_string(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[i];
  for (int i = axis + 1; i < r; ++i) inner *= first[i];
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) chunk[p] = parts[p].shape()[axis] * inner;
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& in = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in.data() + o * chunk[p], chunk[p], out.data() + o * out_row + offset);
    }
    offset += chunk[p];
  }
  return make_result(std::move(out), parts, [chunk, outer, out_row](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < chunk.size(); ++p) {
      if (Tensor* g = parent_grad(self, p)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * out_row + offset;
          double* dst = g->data() + o * chunk[p];
          for (std::size_t i = 0; i < chunk[p]; ++i) dst[i] += src[i];
        }
      }
      offset += chunk[p];
    }
  });
}

Var mean_axis(const Var& a, int axis) {
  const Shape& s = a.shape();
  const int r = static_cast<int>(s.size());
  axis = normalize_axis(axis, r);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  const int len = s[axis];
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape, 0.0);
  const Tensor& in = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int k = 0; k < len; ++k) {
      const double* src = in.data() + (o * len + k) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out.values()) v /= len;
  return make_result(std::move(out), {a}, [outer, inner, len](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (int k = 0; k < len; ++k) {
          double* dst = g->data() + (o * len + k) * inner;
          const double* src = self.grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] / len;
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(w, 2, "linear weight");
  const int k = w.shape()[0];
  const int n = w.shape()[1];
  if (x.value().rank() < 1 || x.shape().back() != k) {
    throw InvalidArgument("linear: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (b.defined() && b.shape() != Shape{n}) throw InvalidArgument("linear: bias shape " + to_string(b.shape()));
  const int m = static_cast<int>(x.value().size() / k);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  MapR(out.data(), m, n).noalias() = CMapR(x.value().data(), m, k) * CMapR(w.value().data(), k, n);
  if (b.defined()) MapR(out.data(), m, n).rowwise() += CVecMap(b.value().data(), n).transpose();

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result(std::move(out), parents, [m, k, n](Node& self) {
    CMapR dy(self.grad.data(), m, n);
    if (Tensor* gx = parent_grad(self, 0)) {
      MapR(gx->data(), m, k).noalias() += dy * CMapR(parent_value(self, 1).data(), k, n).transpose();
    }
    if (Tensor* gw = parent_grad(self, 1)) {
      MapR(gw->data(), k, n).noalias() += CMapR(parent_value(self, 0).data(), m, k).transpose() * dy;
    }
    if (self.parents.size() > 2) {
      if (Tensor* gb = parent_grad(self, 2)) {
        for (Eigen::Index r = 0; r < m; ++r)
          for (Eigen::Index j = 0; j < n; ++j) (*gb)[static_cast<std::size_t>(j)] += dy(r, j);
      }
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  require_rank(a, 3, "bmm lhs");
  require_rank(b, 3, "bmm rhs");
  const int batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const int n = transpose_b ? b.shape()[1] : b.shape()[2];
  const int bk = transpose_b ? b.shape()[2] : b.shape()[1];
  if (b.shape()[0] != batch || bk != k) {
    throw InvalidArgument("bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out(Shape{batch, m, n});
  for (int i = 0; i < batch; ++i) {
    CMapR av(a.value().data() + static_cast<std::size_t>(i) * m * k, m, k);
    MapR ov(out.data() + static_cast<std::size_t>(i) * m * n, m, n);
    if (transpose_b) {
      ov.noalias() = av * CMapR(b.value().data() + static_cast<std::size_t>(i) * n * k, n, k).transpose();
    } else {
      ov.noalias() = av * CMapR(b.value().data() + static_cast<std::size_t>(i) * k * n, k, n);
    }
  }
  return make_result(std::move(out), {a, b}, [batch, m, k, n, transpose_b](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    Tensor* gb = parent_grad(self, 1);
    const Tensor& av = parent_value(self, 0);
    const Tensor& bv = parent_value(self, 1);
    for (int i = 0; i < batch; ++i) {
      CMapR dy(self.grad.data() + static_cast<std::size_t>(i) * m * n, m, n);
      CMapR a_i(av.data() + static_cast<std::size_t>(i) * m * k, m, k);
      if (transpose_b) {
        CMapR b_i(bv.data() + static_cast<std::size_t>(i) * n * k, n, k);
        if (ga) MapR(ga->data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() += dy * b_i;
        if (gb) MapR(gb->data() + static_cast<std::size_t>(i) * n * k, n, k).noalias() += dy.transpose() * a_i;
      } else {
        CMapR b_i(bv.data() + static_cast<std::size_t>(i) * k * n, k, n);
        if (ga) MapR(ga->data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() += dy * b_i.transpose();
        if (gb) MapR(gb->data() + static_cast<std::size_t>(i) * k * n, k, n).noalias() += a_i.transpose() * dy;
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int o = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != c || w.shape()[3] != k) {
    throw InvalidArgument("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (b.defined() && b.shape() != Shape{o}) throw InvalidArgument("conv2d: bias shape " + to_string(b.shape()));
  if (stride < 1 || pad < 0) throw InvalidArgument("conv2d: invalid stride/padding");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw InvalidArgument("conv2d: kernel larger than padded input");
  const int ckk = c * k * k;
  const int plane = ho * wo;

  Tensor out(Shape{batch, o, ho, wo});
  std::vector<double> cols(static_cast<std::size_t>(ckk) * plane);
  CMapR wm(w.value().data(), o, ckk);
  for (int n = 0; n < batch; ++n) {
    im2col(x.value().data() + static_cast<std::size_t>(n) * c * h * wd, c, h, wd, k, stride, pad, ho, wo, cols.data());
    MapR om(out.data() + static_cast<std::size_t>(n) * o * plane, o, plane);
    om.noalias() = wm * CMapR(cols.data(), ckk, plane);
    if (b.defined()) om.colwise() += CVecMap(b.value().data(), o);
  }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result(std::move(out), parents, [=](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gw = parent_grad(self, 1);
    Tensor* gb = self.parents.size() > 2 ? parent_grad(self, 2) : nullptr;
    const Tensor& xv = parent_value(self, 0);
    CMapR wm(parent_value(self, 1).data(), o, ckk);
    std::vector<double> cols(static_cast<std::size_t>(ckk) * plane);
    MatR dcols;
    for (int n = 0; n < batch; ++n) {
      CMapR dy(self.grad.data() + static_cast<std::size_t>(n) * o * plane, o, plane);
      if (gw) {
        im2col(xv.data() + static_cast<std::size_t>(n) * c * h * wd, c, h, wd, k, stride, pad, ho, wo, cols.data());
        MapR(gw->data(), o, ckk).noalias() += dy * CMapR(cols.data(), ckk, plane).transpose();
      }
      if (gb) {
        // Plain loop: vectorised row reductions depend on buffer alignment.
        for (int ch = 0; ch < o; ++ch) {
          double acc = 0.0;
          for (Eigen::Index i = 0; i < plane; ++i) acc += dy(ch, i);
          (*gb)[static_cast<std::size_t>(ch)] += acc;
        }
      }
      if (gx) {
        dcols.noalias() = wm.transpose() * dy;
        col2im(dcols.data(), c, h, wd, k, stride, pad, ho, wo, gx->data() + static_cast<std::size_t>(n) * c * h * wd);
      }
    }
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Var& running_mean, Var& running_var, bool training,
                 BatchNormOptions opts) {
  require_rank(x, 4, "batch_norm2d");
  const int batch = x.shape()[0], c = x.shape()[1];
  const std::size_t plane = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
  for (const Var* v : {&gamma, &beta, static_cast<const Var*>(&running_mean), static_cast<const Var*>(&running_var)}) {
    if (v->shape() != Shape{c}) throw InvalidArgument("batch_norm2d: per-channel tensor shape mismatch");
  }
  const double count = static_cast<double>(batch) * plane;
  std::vector<double> mu(c), inv_std(c);
  const Tensor& in = x.value();
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int n = 0; n < batch; ++n) {
        const double* p = in.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / count;
      double var = 0.0;
      for (int n = 0; n < batch; ++n) {
        const double* p = in.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - m) * (p[i] - m);
      }
      var /= count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + opts.eps);
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      running_mean.mutable_value()[ch] = (1.0 - opts.momentum) * running_mean.value()[ch] + opts.momentum * m;
      running_var.mutable_value()[ch] = (1.0 - opts.momentum) * running_var.value()[ch] + opts.momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean.value()[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var.value()[ch] + opts.eps);
    }
  }
  Tensor out(x.shape());
  auto xhat = std::make_shared<Tensor>(x.shape());
  for (int n = 0; n < batch; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (in[base + i] - mu[ch]) * inv_std[ch];
        (*xhat)[base + i] = xh;
        out[base + i] = gamma.value()[ch] * xh + beta.value()[ch];
      }
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gg = parent_grad(self, 1);
    Tensor* gb = parent_grad(self, 2);
    const Tensor& gam = parent_value(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (int n = 0; n < batch; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += self.grad[base + i];
          sum_dy_xh += self.grad[base + i] * (*xhat)[base + i];
        }
      }
      if (gg) (*gg)[ch] += sum_dy_xh;
      if (gb) (*gb)[ch] += sum_dy;
      if (!gx) continue;
      const double g = gam[ch];
      for (int n = 0; n < batch; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (training) {
            (*gx)[base + i] += g * inv_std[ch] / count *
                               (count * self.grad[base + i] - sum_dy - (*xhat)[base + i] * sum_dy_xh);
          } else {
            (*gx)[base + i] += g * inv_std[ch] * self.grad[base + i];
          }
        }
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) throw InvalidArgument("layer_norm: affine shape");
  const std::size_t rows = x.value().size() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Tensor& in = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = in.data() + r * d;
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += p[i];
    m /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (p[i] - m) * (p[i] - m);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int i = 0; i < d; ++i) {
      const double xh = (p[i] - m) * is;
      (*xhat)[r * d + i] = xh;
      out[r * d + i] = gamma.value()[i] * xh + beta.value()[i];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gg = parent_grad(self, 1);
    Tensor* gb = parent_grad(self, 2);
    const Tensor& gam = parent_value(self, 1);
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = self.grad.data() + r * d;
      const double* xh = xhat->data() + r * d;
      double s1 = 0.0, s2 = 0.0;
      for (int i = 0; i < d; ++i) {
        if (gg) (*gg)[i] += dy[i] * xh[i];
        if (gb) (*gb)[i] += dy[i];
        dxh[i] = dy[i] * gam[i];
        s1 += dxh[i];
        s2 += dxh[i] * xh[i];
      }
      if (!gx) continue;
      for (int i = 0; i < d; ++i) {
        (*gx)[r * d + i] += (*inv_std)[r] / d * (d * dxh[i] - s1 - xh[i] * s2);
      }
    }
  });
}

namespace {
thread_local KinkTrace* g_kink_trace = nullptr;
}

KinkTrace::KinkTrace() : previous_(g_kink_trace) { g_kink_trace = this; }
KinkTrace::~KinkTrace() { g_kink_trace = previous_; }

void KinkTrace::record(bool positive) {
  hash_ = (hash_ ^ (positive ? 0x9fu : 0x3du)) * 0x100000001b3ULL;
}

Var selu(const Var& x) {
  if (g_kink_trace) {
    for (double v : x.value().values()) g_kink_trace->record(v > 0.0);
  }
  return unary(
      x,
      [](double v) { return v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v); },
      [](double v, double) { return v > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(v); });
}

Var sigmoid(const Var& x) {
  return unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var softmax(const Var& x) {
  const int d = x.shape().back();
  const std::size_t rows = x.value().size() / d;
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = in.data() + r * d;
    double* q = out.data() + r * d;
    const double mx = *std::max_element(p, p + d);
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      q[i] = std::exp(p[i] - mx);
      s += q[i];
    }
    for (int i = 0; i < d; ++i) q[i] /= s;
  }
  return make_result(std::move(out), {x}, [d, rows](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += dy[i] * y[i];
      for (int i = 0; i < d; ++i) (*g)[r * d + i] += y[i] * (dy[i] - dot);
    }
  });
}

Var glu(const Var& x) {
  const int c = x.shape().back();
  if (c % 2 != 0) throw InvalidArgument("glu: channel count " + std::to_string(c) + " is odd");
  const int half = c / 2;
  const std::size_t rows = x.value().size() / c;
  Shape out_shape = x.shape();
  out_shape.back() = half;
  Tensor out(out_shape);
  const Tensor& in = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (int i = 0; i < half; ++i) {
      out[r * half + i] = in[r * c + i] * sigmoid_scalar(in[r * c + half + i]);
    }
  }
  return make_result(std::move(out), {x}, [c, half, rows](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    const Tensor& in = parent_value(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (int i = 0; i < half; ++i) {
        const double a = in[r * c + i];
        const double s = sigmoid_scalar(in[r * c + half + i]);
        const double dy = self.grad[r * half + i];
        (*g)[r * c + i] += dy * s;
        (*g)[r * c + half + i] += dy * a * s * (1.0 - s);
      }
    }
  });
}

Var dropout(const Var& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must lie in [0,1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    out[i] = x.value()[i] * (*mask)[i];
  }
  return make_result(std::move(out), {x}, [mask](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (*mask)[i];
    }
  });
}

Var avg_pool2d(const Var& x, int k) {
  require_rank(x, 4, "avg_pool2d");
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (k < 1 || h % k != 0 || w % k != 0) {
    throw InvalidArgument("avg_pool2d: window " + std::to_string(k) + " does not tile " + to_string(x.shape()));
  }
  if (k == 1) return x;
  const int ho = h / k, wo = w / k;
  const double inv = 1.0 / (k * k);
  Tensor out(Shape{batch, c, ho, wo}, 0.0);
  const Tensor& in = x.value();
  const std::size_t planes = static_cast<std::size_t>(batch) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out[(p * ho + y / k) * wo + xx / k] += in[(p * h + y) * w + xx] * inv;
      }
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) (*g)[(p * h + y) * w + xx] += self.grad[(p * ho + y / k) * wo + xx / k] * inv;
      }
    }
  });
}

Var upsample_nearest2d(const Var& x, int factor) {
  require_rank(x, 4, "upsample_nearest2d");
  if (factor < 1) throw InvalidArgument("upsample factor must be >= 1");
  if (factor == 1) return x;
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = h * factor, wo = w * factor;
  Tensor out(Shape{batch, c, ho, wo});
  const Tensor& in = x.value();
  const std::size_t planes = static_cast<std::size_t>(batch) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) out[(p * ho + y) * wo + xx] = in[(p * h + y / factor) * w + xx / factor];
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) (*g)[(p * h + y / factor) * w + xx / factor] += self.grad[(p * ho + y) * wo + xx];
      }
    }
  });
}

Var resize_bicubic2d(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "resize_bicubic2d");
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (out_h == h && out_w == w) return x;
  auto ry = std::make_shared<MatR>(resample_matrix(h, out_h));
  auto rx = std::make_shared<MatR>(resample_matrix(w, out_w));
  const std::size_t planes = static_cast<std::size_t>(batch) * c;
  Tensor out(Shape{batch, c, out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    MapR(out.data() + p * out_h * out_w, out_h, out_w).noalias() =
        (*ry) * CMapR(x.value().data() + p * h * w, h, w) * rx->transpose();
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      MapR(g->data() + p * h * w, h, w).noalias() +=
          ry->transpose() * CMapR(self.grad.data() + p * out_h * out_w, out_h, out_w) * (*rx);
    }
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  return make_result(Tensor::scalar(acc / n), {pred, target}, [n](Node& self) {
    const Tensor& p = parent_value(self, 0);
    const Tensor& t = parent_value(self, 1);
    const double s = 2.0 * self.grad[0] / n;
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*g)[i] += s * (p[i] - t[i]);
    }
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) (*g)[i] -= s * (p[i] - t[i]);
    }
  });
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy_logits");
  const int rows = logits.shape()[0], classes = logits.shape()[1];
  if (static_cast<int>(labels.size()) != rows) throw InvalidArgument("cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(logits.value().size());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int label = labels[r];
    if (label < 0 || label >= classes) throw InvalidArgument("cross_entropy: label out of range");
    const double* z = logits.value().data() + static_cast<std::size_t>(r) * classes;
    const double mx = *std::max_element(z, z + classes);
    double s = 0.0;
    for (int i = 0; i < classes; ++i) s += std::exp(z[i] - mx);
    const double lse = mx + std::log(s);
    loss += lse - z[label];
    for (int i = 0; i < classes; ++i) (*probs)[static_cast<std::size_t>(r) * classes + i] = std::exp(z[i] - lse);
  }
  return make_result(Tensor::scalar(loss / rows), {logits}, [probs, labels, rows, classes](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    const double s = self.grad[0] / rows;
    for (int r = 0; r < rows; ++r) {
      for (int i = 0; i < classes; ++i) {
        const std::size_t idx = static_cast<std::size_t>(r) * classes + i;
        (*g)[idx] += s * ((*probs)[idx] - (i == labels[r] ? 1.0 : 0.0));
      }
    }
  });
}

}  // namespace urgr::nn
