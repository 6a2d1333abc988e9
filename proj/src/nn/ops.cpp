#include "mrsv/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mrsv::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

bool needs_grad(const Node& self, std::size_t parent) {
  return parent < self.parents.size() && self.parents[parent]->requires_grad;
}

std::vector<double>& parent_grad(Node& self, std::size_t parent) {
  Node& p = *self.parents[parent];
  p.ensure_grad();
  return p.grad;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

// Shape viewed as (outer, n, inner) around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("broadcast needs equal ranks: " + shape_str(a) + " vs " +
                                shape_str(b));
  BroadcastPlan p;
  p.same = a == b;
  const std::size_t r = a.size();
  p.out.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " +
                                  shape_str(b));
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa;
    p.stride_b[i] = b[i] == 1 ? 0 : sb;
    sa *= a[i];
    sb *= b[i];
  }
  return p;
}

template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<int> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        ia += p.stride_a[d];
        ib += p.stride_b[d];
        break;
      }
      ia -= p.stride_a[d] * (p.out[d] - 1);
      ib -= p.stride_b[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, Fwd fwd, Dfdx dfdx) {
  std::vector<double> y(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(y), {x}, [dfdx](Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> y(numel(plan.out));
  const auto av = a.data(), bv = b.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    y[i] = av[ia] + bv[ib];
  });
  return make_result(plan.out, std::move(y), {a, b}, [plan](Node& self) {
    const bool ga = needs_grad(self, 0), gb = needs_grad(self, 1);
    std::vector<double>* gav = ga ? &parent_grad(self, 0) : nullptr;
    std::vector<double>* gbv = gb ? &parent_grad(self, 1) : nullptr;
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (gav) (*gav)[ia] += self.grad[i];
      if (gbv) (*gbv)[ib] += self.grad[i];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> y(numel(plan.out));
  const auto av = a.data(), bv = b.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    y[i] = av[ia] * bv[ib];
  });
  return make_result(plan.out, std::move(y), {a, b}, [plan](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    std::vector<double>* gav = needs_grad(self, 0) ? &parent_grad(self, 0) : nullptr;
    std::vector<double>* gbv = needs_grad(self, 1) ? &parent_grad(self, 1) : nullptr;
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (gav) (*gav)[ia] += self.grad[i] * bv[ib];
      if (gbv) (*gbv)[ib] += self.grad[i] * av[ia];
    });
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double v) {
  return unary(
      x, [v](double u) { return u + v; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return v < floor ? floor : v; },
      [floor](double v, double) { return v < floor ? 0.0 : 1.0; });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), axis);
  Shape out = x.shape();
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  std::vector<double> y(v.outer * v.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.n; ++k)
      for (std::size_t i = 0; i < v.inner; ++i)
        y[o * v.inner + i] += xv[(o * v.n + k) * v.inner + i];
  return make_result(std::move(out), std::move(y), {x}, [v](Node& self) {
    auto& gx = parent_grad(self, 0);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t k = 0; k < v.n; ++k)
        for (std::size_t i = 0; i < v.inner; ++i)
          gx[(o * v.n + k) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const int n = x.dim(axis);
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    auto& gx = parent_grad(self, 0);
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> y(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.n * v.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < v.n; ++k) mx = std::max(mx, xv[base + k * v.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(xv[base + k * v.inner] - mx);
        y[base + k * v.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) y[base + k * v.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(y), {x}, [v](Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.n * v.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.n; ++k)
          dot += self.grad[base + k * v.inner] * y[base + k * v.inner];
        for (std::size_t k = 0; k < v.n; ++k) {
          const std::size_t j = base + k * v.inner;
          gx[j] += y[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  axis = normalize_axis(axis, parts[0].rank());
  Shape out = parts[0].shape();
  out[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (static_cast<int>(s.size()) != parts[0].rank())
      throw std::invalid_argument("concat rank mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis && s[d] != parts[0].shape()[d])
        throw std::invalid_argument("concat shape mismatch: " + shape_str(s) + " vs " +
                                    shape_str(parts[0].shape()));
    out[axis] += s[axis];
  }
  const AxisView v = axis_view(out, axis);
  for (const Tensor& p : parts) widths.push_back(static_cast<std::size_t>(p.dim(axis)) * v.inner);
  const std::size_t row = v.n * v.inner;
  std::vector<double> y(numel(out));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pv = parts[pi].data();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(pv.begin() + o * widths[pi], widths[pi], y.begin() + o * row + offset);
    offset += widths[pi];
  }
  return make_result(out, std::move(y), parts, [v, widths, row](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      if (needs_grad(self, pi)) {
        auto& g = parent_grad(self, pi);
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t j = 0; j < widths[pi]; ++j)
            g[o * widths[pi] + j] += self.grad[o * row + offset + j];
      }
      offset += widths[pi];
    }
  });
}

Tensor narrow(const Tensor& x, int axis, int start, int length) {
  axis = normalize_axis(axis, x.rank());
  if (start < 0 || length < 0 || start + length > x.dim(axis))
    throw std::out_of_range("narrow out of range on shape " + shape_str(x.shape()));
  const AxisView v = axis_view(x.shape(), axis);
  Shape out = x.shape();
  out[axis] = length;
  const std::size_t in_row = v.n * v.inner;
  const std::size_t out_row = static_cast<std::size_t>(length) * v.inner;
  const std::size_t off = static_cast<std::size_t>(start) * v.inner;
  std::vector<double> y(v.outer * out_row);
  const auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(xv.begin() + o * in_row + off, out_row, y.begin() + o * out_row);
  return make_result(std::move(out), std::move(y), {x},
                     [v, in_row, out_row, off](Node& self) {
                       auto& g = parent_grad(self, 0);
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t j = 0; j < out_row; ++j)
                           g[o * in_row + off + j] += self.grad[o * out_row + j];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> y(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(y), {x}, [](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor expand(const Tensor& x, int axis, int n) {
  axis = normalize_axis(axis, x.rank());
  if (x.dim(axis) != 1) throw std::invalid_argument("expand needs a size-1 axis");
  const AxisView v = axis_view(x.shape(), axis);
  Shape out = x.shape();
  out[axis] = n;
  std::vector<double> y(v.outer * n * v.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (int k = 0; k < n; ++k)
      std::copy_n(xv.begin() + o * v.inner, v.inner, y.begin() + (o * n + k) * v.inner);
  return make_result(std::move(out), std::move(y), {x}, [v, n](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (int k = 0; k < n; ++k)
        for (std::size_t i = 0; i < v.inner; ++i)
          g[o * v.inner + i] += self.grad[(o * n + k) * v.inner + i];
  });
}

int conv1d_output_length(int input_length, int kernel, const Conv1dOptions& opt) {
  const int span = opt.dilation * (kernel - 1) + 1;
  const int padded = input_length + opt.pad_left + opt.pad_right;
  if (padded < span) return 0;
  return (padded - span) / opt.stride + 1;
}

namespace {

struct ConvGeometry {
  int batch, cin, cout, kernel, tin, tout, groups;
  Conv1dOptions opt;
};

// col[(c*K + k), b*Tout + t] = x[b, c, t*stride + k*dilation - pad_left]
std::vector<double> im2col(std::span<const double> x, const ConvGeometry& g) {
  const std::size_t cols = static_cast<std::size_t>(g.batch) * g.tout;
  std::vector<double> col(static_cast<std::size_t>(g.cin) * g.kernel * cols, 0.0);
  for (int c = 0; c < g.cin; ++c)
    for (int k = 0; k < g.kernel; ++k) {
      double* row = col.data() + (static_cast<std::size_t>(c) * g.kernel + k) * cols;
      for (int b = 0; b < g.batch; ++b) {
        const double* xb = x.data() + (static_cast<std::size_t>(b) * g.cin + c) * g.tin;
        double* out = row + static_cast<std::size_t>(b) * g.tout;
        const int shift = k * g.opt.dilation - g.opt.pad_left;
        for (int t = 0; t < g.tout; ++t) {
          const int pos = t * g.opt.stride + shift;
          if (pos >= 0 && pos < g.tin) out[t] = xb[pos];
        }
      }
    }
  return col;
}

void col2im_add(const std::vector<double>& col, std::vector<double>& gx, const ConvGeometry& g) {
  const std::size_t cols = static_cast<std::size_t>(g.batch) * g.tout;
  for (int c = 0; c < g.cin; ++c)
    for (int k = 0; k < g.kernel; ++k) {
      const double* row = col.data() + (static_cast<std::size_t>(c) * g.kernel + k) * cols;
      for (int b = 0; b < g.batch; ++b) {
        double* gxb = gx.data() + (static_cast<std::size_t>(b) * g.cin + c) * g.tin;
        const double* in = row + static_cast<std::size_t>(b) * g.tout;
        const int shift = k * g.opt.dilation - g.opt.pad_left;
        for (int t = 0; t < g.tout; ++t) {
          const int pos = t * g.opt.stride + shift;
          if (pos >= 0 && pos < g.tin) gxb[pos] += in[t];
        }
      }
    }
}

Tensor conv1d_dense(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    const ConvGeometry& g) {
  std::vector<double> col = im2col(x.data(), g);
  const Eigen::Index ck = static_cast<Eigen::Index>(g.cin) * g.kernel;
  const Eigen::Index cols = static_cast<Eigen::Index>(g.batch) * g.tout;
  ConstMatMap w(weight.data().data(), g.cout, ck);
  ConstMatMap c(col.data(), ck, cols);
  RowMatrix prod = w * c;
  std::vector<double> y(static_cast<std::size_t>(g.batch) * g.cout * g.tout);
  for (int b = 0; b < g.batch; ++b)
    for (int o = 0; o < g.cout; ++o) {
      const double bo = bias.defined() ? bias.data()[o] : 0.0;
      const double* src = prod.data() + static_cast<std::size_t>(o) * cols +
                          static_cast<std::size_t>(b) * g.tout;
      double* dst = y.data() + (static_cast<std::size_t>(b) * g.cout + o) * g.tout;
      for (int t = 0; t < g.tout; ++t) dst[t] = src[t] + bo;
    }
  Shape out{g.batch, g.cout, g.tout};
  auto saved = std::make_shared<std::vector<double>>(std::move(col));
  return make_result(std::move(out), std::move(y), {x, weight, bias},
                     [g, saved](Node& self) {
                       const Eigen::Index ck = static_cast<Eigen::Index>(g.cin) * g.kernel;
                       const Eigen::Index cols = static_cast<Eigen::Index>(g.batch) * g.tout;
                       RowMatrix grad_out(g.cout, cols);
                       for (int b = 0; b < g.batch; ++b)
                         for (int o = 0; o < g.cout; ++o)
                           std::copy_n(self.grad.data() +
                                           (static_cast<std::size_t>(b) * g.cout + o) * g.tout,
                                       g.tout, grad_out.data() + o * cols + b * g.tout);
                       if (needs_grad(self, 1)) {
                         auto& gw = parent_grad(self, 1);
                         MatMap gwm(gw.data(), g.cout, ck);
                         gwm.noalias() += grad_out * ConstMatMap(saved->data(), ck, cols).transpose();
                       }
                       if (needs_grad(self, 2)) {
                         auto& gb = parent_grad(self, 2);
                         for (int o = 0; o < g.cout; ++o) gb[o] += grad_out.row(o).sum();
                       }
                       if (needs_grad(self, 0)) {
                         const auto& wv = self.parents[1]->value;
                         RowMatrix gcol = ConstMatMap(wv.data(), g.cout, ck).transpose() * grad_out;
                         std::vector<double> tmp(gcol.data(), gcol.data() + gcol.size());
                         col2im_add(tmp, parent_grad(self, 0), g);
                       }
                     });
}

Tensor conv1d_grouped(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      const ConvGeometry& g) {
  const int cin_g = g.cin / g.groups, cout_g = g.cout / g.groups;
  std::vector<double> y(static_cast<std::size_t>(g.batch) * g.cout * g.tout);
  const auto xv = x.data(), wv = weight.data();
  for (int b = 0; b < g.batch; ++b)
    for (int o = 0; o < g.cout; ++o) {
      const int grp = o / cout_g;
      double* dst = y.data() + (static_cast<std::size_t>(b) * g.cout + o) * g.tout;
      const double bo = bias.defined() ? bias.data()[o] : 0.0;
      for (int t = 0; t < g.tout; ++t) dst[t] = bo;
      for (int ci = 0; ci < cin_g; ++ci) {
        const int c = grp * cin_g + ci;
        const double* xb = xv.data() + (static_cast<std::size_t>(b) * g.cin + c) * g.tin;
        for (int k = 0; k < g.kernel; ++k) {
          const double wk = wv[(static_cast<std::size_t>(o) * cin_g + ci) * g.kernel + k];
          const int shift = k * g.opt.dilation - g.opt.pad_left;
          for (int t = 0; t < g.tout; ++t) {
            const int pos = t * g.opt.stride + shift;
            if (pos >= 0 && pos < g.tin) dst[t] += wk * xb[pos];
          }
        }
      }
    }
  Shape out{g.batch, g.cout, g.tout};
  return make_result(std::move(out), std::move(y), {x, weight, bias}, [g](Node& self) {
    const int cin_g = g.cin / g.groups, cout_g = g.cout / g.groups;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    std::vector<double>* gx = needs_grad(self, 0) ? &parent_grad(self, 0) : nullptr;
    std::vector<double>* gw = needs_grad(self, 1) ? &parent_grad(self, 1) : nullptr;
    std::vector<double>* gb = needs_grad(self, 2) ? &parent_grad(self, 2) : nullptr;
    for (int b = 0; b < g.batch; ++b)
      for (int o = 0; o < g.cout; ++o) {
        const int grp = o / cout_g;
        const double* go = self.grad.data() + (static_cast<std::size_t>(b) * g.cout + o) * g.tout;
        if (gb)
          for (int t = 0; t < g.tout; ++t) (*gb)[o] += go[t];
        for (int ci = 0; ci < cin_g; ++ci) {
          const int c = grp * cin_g + ci;
          const std::size_t xoff = (static_cast<std::size_t>(b) * g.cin + c) * g.tin;
          for (int k = 0; k < g.kernel; ++k) {
            const std::size_t widx = (static_cast<std::size_t>(o) * cin_g + ci) * g.kernel + k;
            const int shift = k * g.opt.dilation - g.opt.pad_left;
            double acc = 0.0;
            for (int t = 0; t < g.tout; ++t) {
              const int pos = t * g.opt.stride + shift;
              if (pos < 0 || pos >= g.tin) continue;
              acc += go[t] * xv[xoff + pos];
              if (gx) (*gx)[xoff + pos] += go[t] * wv[widx];
            }
            if (gw) (*gw)[widx] += acc;
          }
        }
      }
  });
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opt) {
  if (x.rank() != 3 || weight.rank() != 3)
    throw std::invalid_argument("conv1d expects [B,C,T] input and [O,I,K] weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), weight.dim(0), weight.dim(2), x.dim(2), 0, opt.groups, opt};
  if (opt.groups < 1 || g.cin % opt.groups || g.cout % opt.groups ||
      weight.dim(1) * opt.groups != g.cin)
    throw std::invalid_argument("conv1d channel mismatch: input " + shape_str(x.shape()) +
                                ", weight " + shape_str(weight.shape()) + ", groups " +
                                std::to_string(opt.groups));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
    throw std::invalid_argument("conv1d bias shape mismatch");
  if (opt.stride < 1 || opt.dilation < 1 || opt.pad_left < 0 || opt.pad_right < 0)
    throw std::invalid_argument("conv1d invalid stride/dilation/padding");
  g.tout = conv1d_output_length(g.tin, g.kernel, opt);
  if (g.tout <= 0)
    throw std::invalid_argument("conv1d input of length " + std::to_string(g.tin) +
                                " is shorter than the kernel span");
  return opt.groups == 1 ? conv1d_dense(x, weight, bias, g) : conv1d_grouped(x, weight, bias, g);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
  if (x.rank() != 2 && x.rank() != 3)
    throw std::invalid_argument("batch_norm expects [B,C] or [B,C,T]");
  const int B = x.dim(0), C = x.dim(1), T = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("batch_norm channel mismatch");
  const auto xv = x.data();
  const double count = static_cast<double>(B) * T;
  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) s += xv[(static_cast<std::size_t>(b) * C + c) * T + t];
      const double m = s / count;
      double ss = 0.0;
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
          const double d = xv[(static_cast<std::size_t>(b) * C + c) * T + t] - m;
          ss += d * d;
        }
      const double var = ss / count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      rm[c] = (1.0 - momentum) * rm[c] + momentum * m;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[c] = running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.data()[c] + eps);
    }
  }
  std::vector<double> y(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  const auto gv = gamma.data(), bv = beta.data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        const std::size_t i = (static_cast<std::size_t>(b) * C + c) * T + t;
        (*xhat)[i] = (xv[i] - mu[c]) * inv_std[c];
        y[i] = (*xhat)[i] * gv[c] + bv[c];
      }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [B, C, T, training, xhat, inv_std, count](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                       for (int b = 0; b < B; ++b)
                         for (int c = 0; c < C; ++c)
                           for (int t = 0; t < T; ++t) {
                             const std::size_t i = (static_cast<std::size_t>(b) * C + c) * T + t;
                             sum_g[c] += self.grad[i];
                             sum_gx[c] += self.grad[i] * (*xhat)[i];
                           }
                       if (needs_grad(self, 1)) {
                         auto& gg = parent_grad(self, 1);
                         for (int c = 0; c < C; ++c) gg[c] += sum_gx[c];
                       }
                       if (needs_grad(self, 2)) {
                         auto& gb = parent_grad(self, 2);
                         for (int c = 0; c < C; ++c) gb[c] += sum_g[c];
                       }
                       if (!needs_grad(self, 0)) return;
                       auto& gx = parent_grad(self, 0);
                       for (int b = 0; b < B; ++b)
                         for (int c = 0; c < C; ++c)
                           for (int t = 0; t < T; ++t) {
                             const std::size_t i = (static_cast<std::size_t>(b) * C + c) * T + t;
                             const double k = gv[c] * inv_std[c];
                             if (training) {
                               gx[i] += k * (self.grad[i] - sum_g[c] / count -
                                             (*xhat)[i] * sum_gx[c] / count);
                             } else {
                               gx[i] += k * self.grad[i];
                             }
                           }
                     });
}

Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 3) throw std::invalid_argument("global_layer_norm expects [B,C,T]");
  const int B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (gain.size() != static_cast<std::size_t>(C) || bias.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("global_layer_norm affine size mismatch");
  const std::size_t per = static_cast<std::size_t>(C) * T;
  const auto xv = x.data(), gv = gain.data(), bv = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> inv_std(B);
  std::vector<double> y(x.size());
  for (int b = 0; b < B; ++b) {
    const double* xb = xv.data() + b * per;
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += xb[i];
    const double m = s / per;
    double ss = 0.0;
    for (std::size_t i = 0; i < per; ++i) ss += (xb[i] - m) * (xb[i] - m);
    inv_std[b] = 1.0 / std::sqrt(ss / per + eps);
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        const std::size_t i = b * per + static_cast<std::size_t>(c) * T + t;
        (*xhat)[i] = (xv[i] - m) * inv_std[b];
        y[i] = (*xhat)[i] * gv[c] + bv[c];
      }
  }
  return make_result(x.shape(), std::move(y), {x, gain, bias},
                     [B, C, T, per, xhat, inv_std](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       std::vector<double>* gg = needs_grad(self, 1) ? &parent_grad(self, 1) : nullptr;
                       std::vector<double>* gb = needs_grad(self, 2) ? &parent_grad(self, 2) : nullptr;
                       std::vector<double>* gx = needs_grad(self, 0) ? &parent_grad(self, 0) : nullptr;
                       for (int b = 0; b < B; ++b) {
                         double mean_g = 0.0, mean_gx = 0.0;
                         for (int c = 0; c < C; ++c)
                           for (int t = 0; t < T; ++t) {
                             const std::size_t i = b * per + static_cast<std::size_t>(c) * T + t;
                             const double gh = self.grad[i] * gv[c];
                             mean_g += gh;
                             mean_gx += gh * (*xhat)[i];
                             if (gg) (*gg)[c] += self.grad[i] * (*xhat)[i];
                             if (gb) (*gb)[c] += self.grad[i];
                           }
                         if (!gx) continue;
                         mean_g /= per;
                         mean_gx /= per;
                         for (int c = 0; c < C; ++c)
                           for (int t = 0; t < T; ++t) {
                             const std::size_t i = b * per + static_cast<std::size_t>(c) * T + t;
                             const double gh = self.grad[i] * gv[c];
                             (*gx)[i] += inv_std[b] * (gh - mean_g - (*xhat)[i] * mean_gx);
                           }
                       }
                     });
}

Tensor adaptive_avg_pool1d(const Tensor& x, int output_length) {
  if (x.rank() != 3) throw std::invalid_argument("adaptive_avg_pool1d expects [B,C,T]");
  const int rows = x.dim(0) * x.dim(1), tin = x.dim(2);
  if (output_length < 1 || output_length > tin)
    throw std::invalid_argument("adaptive_avg_pool1d: target length " +
                                std::to_string(output_length) + " not in [1, " +
                                std::to_string(tin) + "]");
  std::vector<int> start(output_length), end(output_length);
  for (int t = 0; t < output_length; ++t) {
    start[t] = static_cast<int>(static_cast<long long>(t) * tin / output_length);
    end[t] = static_cast<int>((static_cast<long long>(t + 1) * tin + output_length - 1) /
                              output_length);
  }
  std::vector<double> y(static_cast<std::size_t>(rows) * output_length);
  const auto xv = x.data();
  for (int r = 0; r < rows; ++r)
    for (int t = 0; t < output_length; ++t) {
      double s = 0.0;
      for (int k = start[t]; k < end[t]; ++k) s += xv[static_cast<std::size_t>(r) * tin + k];
      y[static_cast<std::size_t>(r) * output_length + t] = s / (end[t] - start[t]);
    }
  Shape out{x.dim(0), x.dim(1), output_length};
  return make_result(std::move(out), std::move(y), {x},
                     [rows, tin, output_length, start, end](Node& self) {
                       auto& g = parent_grad(self, 0);
                       for (int r = 0; r < rows; ++r)
                         for (int t = 0; t < output_length; ++t) {
                           const double share =
                               self.grad[static_cast<std::size_t>(r) * output_length + t] /
                               (end[t] - start[t]);
                           for (int k = start[t]; k < end[t]; ++k)
                             g[static_cast<std::size_t>(r) * tin + k] += share;
                         }
                     });
}

Tensor weighted_layer_sum(const Tensor& stack, const Tensor& weights) {
  if (weights.rank() != 1 || stack.rank() < 1 || stack.dim(0) != weights.dim(0))
    throw std::invalid_argument("weighted_layer_sum: " + std::to_string(weights.size()) +
                                " weights for stack " + shape_str(stack.shape()));
  const int K = stack.dim(0);
  Shape out(stack.shape().begin() + 1, stack.shape().end());
  if (out.empty()) out = {1};
  const std::size_t n = stack.size() / K;
  std::vector<double> y(n, 0.0);
  const auto sv = stack.data(), wv = weights.data();
  for (int k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i) y[i] += wv[k] * sv[k * n + i];
  return make_result(std::move(out), std::move(y), {stack, weights}, [K, n](Node& self) {
    const auto& sv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (needs_grad(self, 1)) {
      auto& gw = parent_grad(self, 1);
      for (int k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += self.grad[i] * sv[k * n + i];
        gw[k] += acc;
      }
    }
    if (needs_grad(self, 0)) {
      auto& gs = parent_grad(self, 0);
      for (int k = 0; k < K; ++k)
        for (std::size_t i = 0; i < n; ++i) gs[k * n + i] += wv[k] * self.grad[i];
    }
  });
}

}  // namespace mrsv::nn
