#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "adjoint.hpp"
#include "prospr/autodiff.hpp"
#include "prospr/error.hpp"

namespace prospr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b, std::string_view why = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + std::string(why) + ")";
  throw ShapeError(msg);
}

Graph& same_graph(std::string_view op, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw GraphError(std::string(op) + ": invalid variable");
  if (&a.graph() != &b.graph()) throw GraphError(std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

Graph& graph_of(std::string_view op, const Var& a) {
  if (!a.valid()) throw GraphError(std::string(op) + ": invalid variable");
  return a.graph();
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

// [outer, n, inner] view of a shape around `axis`.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

struct ConvGeometry {
  std::size_t batch, in_ch, h, w, out_ch, kh, kw, out_h, out_w, stride, pad;
};

ConvGeometry conv_geometry(std::string_view op, const Shape& x, const Shape& k, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || k.size() != 4) shape_fail(op, x, k, "expected rank-4 input and kernel");
  if (x[1] != k[1]) shape_fail(op, x, k, "input channels differ");
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (x[2] + 2 * pad < k[2] || x[3] + 2 * pad < k[3]) shape_fail(op, x, k, "kernel larger than padded input");
  ConvGeometry g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], 0, 0, stride, pad};
  g.out_h = (g.h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// cols[(c*kh+i)*kw+j, oy*out_w+ox] = x[c, oy*s+i-p, ox*s+j-p]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.out_w + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            x[(c * g.h + iy) * g.w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const ConvGeometry& g, const Tensor& x, const Tensor& k) {
  Tensor out({g.batch, g.out_ch, g.out_h, g.out_w});
  const std::size_t ckk = g.in_ch * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> cols(ckk * plane);
  ConstMap kernel(k.data().data(), g.out_ch, ckk);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, x.data().data() + b * g.in_ch * g.h * g.w, cols.data());
    MutMap ob(out.data().data() + b * g.out_ch * plane, g.out_ch, plane);
    ob.noalias() = kernel * ConstMap(cols.data(), ckk, plane);
  }
  return out;
}

Tensor conv_input_grad(const ConvGeometry& g, const Tensor& gy, const Tensor& k) {
  Tensor out({g.batch, g.in_ch, g.h, g.w});
  const std::size_t ckk = g.in_ch * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  RowMat cols(ckk, plane);
  ConstMap kernel(k.data().data(), g.out_ch, ckk);
  for (std::size_t b = 0; b < g.batch; ++b) {
    cols.noalias() = kernel.transpose() * ConstMap(gy.data().data() + b * g.out_ch * plane, g.out_ch, plane);
    col2im_add(g, cols.data(), out.data().data() + b * g.in_ch * g.h * g.w);
  }
  return out;
}

Tensor conv_weight_grad(const ConvGeometry& g, const Tensor& x, const Tensor& gy) {
  Tensor out({g.out_ch, g.in_ch, g.kh, g.kw});
  const std::size_t ckk = g.in_ch * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> cols(ckk * plane);
  MutMap dk(out.data().data(), g.out_ch, ckk);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, x.data().data() + b * g.in_ch * g.h * g.w, cols.data());
    dk.noalias() += ConstMap(gy.data().data() + b * g.out_ch * plane, g.out_ch, plane) *
                    ConstMap(cols.data(), ckk, plane).transpose();
  }
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Graph& g = same_graph("add", a, b);
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  return g.record(OpKind::add, {a.id(), b.id()}, {}, zip(a.value(), b.value(), [](double x, double y) { return x + y; }));
}

Var sub(const Var& a, const Var& b) {
  Graph& g = same_graph("sub", a, b);
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  return g.record(OpKind::sub, {a.id(), b.id()}, {}, zip(a.value(), b.value(), [](double x, double y) { return x - y; }));
}

Var mul(const Var& a, const Var& b) {
  Graph& g = same_graph("mul", a, b);
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  return g.record(OpKind::mul, {a.id(), b.id()}, {}, zip(a.value(), b.value(), [](double x, double y) { return x * y; }));
}

Var scale(const Var& a, double s) {
  Graph& g = graph_of("scale", a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  OpAttrs attrs;
  attrs.scalar = s;
  return g.record(OpKind::scale, {a.id()}, std::move(attrs), std::move(out));
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  Graph& g = same_graph("matmul", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) shape_fail("matmul", sa, sb, "expected rank-2 operands");
  const std::size_t m = trans_a ? sa[1] : sa[0];
  const std::size_t k = trans_a ? sa[0] : sa[1];
  const std::size_t k2 = trans_b ? sb[1] : sb[0];
  const std::size_t n = trans_b ? sb[0] : sb[1];
  if (k != k2) shape_fail("matmul", sa, sb, "inner dimensions differ");

  Tensor out({m, n});
  ConstMap ma(a.value().data().data(), sa[0], sa[1]);
  ConstMap mb(b.value().data().data(), sb[0], sb[1]);
  MutMap mo(out.data().data(), m, n);
  if (!trans_a && !trans_b) {
    mo.noalias() = ma * mb;
  } else if (trans_a && !trans_b) {
    mo.noalias() = ma.transpose() * mb;
  } else if (!trans_a && trans_b) {
    mo.noalias() = ma * mb.transpose();
  } else {
    mo.noalias() = ma.transpose() * mb.transpose();
  }
  OpAttrs attrs;
  attrs.trans_a = trans_a;
  attrs.trans_b = trans_b;
  return g.record(OpKind::matmul, {a.id(), b.id()}, std::move(attrs), std::move(out));
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  Graph& g = same_graph("conv2d", x, w);
  const auto geo = conv_geometry("conv2d", x.shape(), w.shape(), stride, pad);
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.pad = pad;
  return g.record(OpKind::conv2d, {x.id(), w.id()}, std::move(attrs), conv_forward(geo, x.value(), w.value()));
}

Var conv2d_input_grad(const Var& gy, const Var& w, const Shape& x_shape, std::size_t stride, std::size_t pad) {
  Graph& g = same_graph("conv2d_input_grad", gy, w);
  const auto geo = conv_geometry("conv2d_input_grad", x_shape, w.shape(), stride, pad);
  const Shape expect{geo.batch, geo.out_ch, geo.out_h, geo.out_w};
  if (gy.shape() != expect) shape_fail("conv2d_input_grad", gy.shape(), expect, "output gradient shape");
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.pad = pad;
  attrs.shape = x_shape;
  return g.record(OpKind::conv2d_input_grad, {gy.id(), w.id()}, std::move(attrs),
                  conv_input_grad(geo, gy.value(), w.value()));
}

Var conv2d_weight_grad(const Var& x, const Var& gy, const Shape& w_shape, std::size_t stride, std::size_t pad) {
  Graph& g = same_graph("conv2d_weight_grad", x, gy);
  const auto geo = conv_geometry("conv2d_weight_grad", x.shape(), w_shape, stride, pad);
  const Shape expect{geo.batch, geo.out_ch, geo.out_h, geo.out_w};
  if (gy.shape() != expect) shape_fail("conv2d_weight_grad", gy.shape(), expect, "output gradient shape");
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.pad = pad;
  attrs.shape = w_shape;
  return g.record(OpKind::conv2d_weight_grad, {x.id(), gy.id()}, std::move(attrs),
                  conv_weight_grad(geo, x.value(), gy.value()));
}

Var avg_pool2d(const Var& x, std::size_t window) {
  Graph& g = graph_of("avg_pool2d", x);
  const Shape& s = x.shape();
  if (s.size() != 4 || window == 0 || s[2] % window != 0 || s[3] % window != 0) {
    throw ShapeError("avg_pool2d: input " + shape_str(s) + " not divisible into " + std::to_string(window) + "x" +
                     std::to_string(window) + " windows");
  }
  const std::size_t oh = s[2] / window, ow = s[3] / window;
  Tensor out({s[0], s[1], oh, ow});
  const double inv = 1.0 / static_cast<double>(window * window);
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
    for (std::size_t y = 0; y < s[2]; ++y) {
      for (std::size_t xx = 0; xx < s[3]; ++xx) {
        o[(p * oh + y / window) * ow + xx / window] += in[(p * s[2] + y) * s[3] + xx];
      }
    }
  }
  for (double& v : o) v *= inv;
  OpAttrs attrs;
  attrs.window = window;
  return g.record(OpKind::avg_pool2d, {x.id()}, std::move(attrs), std::move(out));
}

Var avg_pool2d_grad(const Var& gy, std::size_t window, const Shape& x_shape) {
  Graph& g = graph_of("avg_pool2d_grad", gy);
  if (x_shape.size() != 4 || window == 0 || x_shape[2] % window != 0 || x_shape[3] % window != 0) {
    throw ShapeError("avg_pool2d_grad: bad input shape " + shape_str(x_shape));
  }
  const Shape expect{x_shape[0], x_shape[1], x_shape[2] / window, x_shape[3] / window};
  if (gy.shape() != expect) shape_fail("avg_pool2d_grad", gy.shape(), expect);
  Tensor out(x_shape);
  const double inv = 1.0 / static_cast<double>(window * window);
  auto in = gy.value().data();
  auto o = out.data();
  const std::size_t oh = expect[2], ow = expect[3];
  for (std::size_t p = 0; p < x_shape[0] * x_shape[1]; ++p) {
    for (std::size_t y = 0; y < x_shape[2]; ++y) {
      for (std::size_t xx = 0; xx < x_shape[3]; ++xx) {
        o[(p * x_shape[2] + y) * x_shape[3] + xx] = in[(p * oh + y / window) * ow + xx / window] * inv;
      }
    }
  }
  OpAttrs attrs;
  attrs.window = window;
  attrs.shape = x_shape;
  return g.record(OpKind::avg_pool2d_grad, {gy.id()}, std::move(attrs), std::move(out));
}

Var relu(const Var& x) {
  Graph& g = graph_of("relu", x);
  if (auto* fp = ActivationFingerprint::active()) fp->fold(x.value().data());
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.record(OpKind::relu, {x.id()}, {}, std::move(out));
}

Var relu_mask(const Var& grad, const Var& x) {
  Graph& g = same_graph("relu_mask", grad, x);
  if (grad.shape() != x.shape()) shape_fail("relu_mask", grad.shape(), x.shape());
  return g.record(OpKind::relu_mask, {grad.id(), x.id()}, {},
                  zip(grad.value(), x.value(), [](double gv, double xv) { return xv > 0.0 ? gv : 0.0; }));
}

Var reshape(const Var& x, Shape shape) {
  Graph& g = graph_of("reshape", x);
  if (shape_numel(shape) != x.value().size()) shape_fail("reshape", x.shape(), shape, "element counts differ");
  OpAttrs attrs;
  attrs.shape = shape;
  return g.record(OpKind::reshape, {x.id()}, std::move(attrs), x.value().reshaped(std::move(shape)));
}

Var broadcast_axis(const Var& v, Shape shape, std::size_t axis) {
  Graph& g = graph_of("broadcast_axis", v);
  if (axis >= shape.size() || v.shape().size() != 1 || v.shape()[0] != shape[axis]) {
    shape_fail("broadcast_axis", v.shape(), shape, "vector length must equal target extent at axis " + std::to_string(axis));
  }
  const auto view = axis_view(shape, axis);
  Tensor out(shape);
  auto in = v.value().data();
  auto o = out.data();
  for (std::size_t a = 0; a < view.outer; ++a) {
    for (std::size_t k = 0; k < view.n; ++k) {
      std::fill_n(o.begin() + static_cast<std::ptrdiff_t>((a * view.n + k) * view.inner), view.inner, in[k]);
    }
  }
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.shape = std::move(shape);
  return g.record(OpKind::broadcast_axis, {v.id()}, std::move(attrs), std::move(out));
}

Var reduce_axis(const Var& x, std::size_t axis) {
  Graph& g = graph_of("reduce_axis", x);
  if (axis >= x.shape().size()) throw ShapeError("reduce_axis: axis out of range for " + shape_str(x.shape()));
  const auto view = axis_view(x.shape(), axis);
  Tensor out({view.n});
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t a = 0; a < view.outer; ++a) {
    for (std::size_t k = 0; k < view.n; ++k) {
      const double* p = in.data() + (a * view.n + k) * view.inner;
      double s = 0.0;
      for (std::size_t i = 0; i < view.inner; ++i) s += p[i];
      o[k] += s;
    }
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return g.record(OpKind::reduce_axis, {x.id()}, std::move(attrs), std::move(out));
}

Var expand_scalar(const Var& s, Shape shape) {
  Graph& g = graph_of("expand_scalar", s);
  if (s.value().size() != 1) shape_fail("expand_scalar", s.shape(), shape, "source must hold one element");
  Tensor out(shape, s.value()[0]);
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return g.record(OpKind::expand_scalar, {s.id()}, std::move(attrs), std::move(out));
}

Var sum_all(const Var& x) {
  Graph& g = graph_of("sum_all", x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.record(OpKind::sum_all, {x.id()}, {}, Tensor::scalar(s));
}

Var softmax(const Var& logits) {
  Graph& g = graph_of("softmax", logits);
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("softmax: expected [batch, classes], got " + shape_str(s));
  Tensor out = logits.value();
  auto o = out.data();
  for (std::size_t b = 0; b < s[0]; ++b) {
    double* row = o.data() + b * s[1];
    const double mx = *std::max_element(row, row + s[1]);
    double z = 0.0;
    for (std::size_t k = 0; k < s[1]; ++k) {
      row[k] = std::exp(row[k] - mx);
      z += row[k];
    }
    for (std::size_t k = 0; k < s[1]; ++k) row[k] /= z;
  }
  return g.record(OpKind::softmax, {logits.id()}, {}, std::move(out));
}

Var softmax_cross_entropy(const Var& logits, std::shared_ptr<const std::vector<int>> labels) {
  Graph& g = graph_of("softmax_cross_entropy", logits);
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("softmax_cross_entropy: expected [batch, classes], got " + shape_str(s));
  if (!labels || labels->size() != s[0]) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels ? labels->size() : 0) +
                     " labels for logits " + shape_str(s));
  }
  auto z = logits.value().data();
  double total = 0.0;
  for (std::size_t b = 0; b < s[0]; ++b) {
    const int y = (*labels)[b];
    if (y < 0 || static_cast<std::size_t>(y) >= s[1]) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(s[1]) + ")");
    }
    const double* row = z.data() + b * s[1];
    const double mx = *std::max_element(row, row + s[1]);
    double sum = 0.0;
    for (std::size_t k = 0; k < s[1]; ++k) sum += std::exp(row[k] - mx);
    total += mx + std::log(sum) - row[y];
  }
  OpAttrs attrs;
  attrs.labels = std::move(labels);
  return g.record(OpKind::softmax_cross_entropy, {logits.id()}, std::move(attrs),
                  Tensor::scalar(total / static_cast<double>(s[0])));
}

namespace detail {

void adjoint_rule(Graph& graph, NodeId id, const Var& g, std::span<const char> need,
                  std::vector<std::pair<std::size_t, Var>>& out) {
  const Node& node = graph.node(id);
  const OpAttrs& at = node.attrs;
  auto in = [&](std::size_t slot) { return graph.var(node.inputs[slot]); };
  auto emit = [&](std::size_t slot, Var v) { out.emplace_back(slot, v); };

  switch (node.kind) {
    case OpKind::leaf:
    case OpKind::constant:
    case OpKind::severed:
      return;
    case OpKind::add:
      if (need[0]) emit(0, g);
      if (need[1]) emit(1, g);
      return;
    case OpKind::sub:
      if (need[0]) emit(0, g);
      if (need[1]) emit(1, scale(g, -1.0));
      return;
    case OpKind::mul:
      if (need[0]) emit(0, mul(g, in(1)));
      if (need[1]) emit(1, mul(g, in(0)));
      return;
    case OpKind::scale:
      emit(0, scale(g, at.scalar));
      return;
    case OpKind::matmul: {
      // C = A' B' with A' = op(A), B' = op(B).
      const Var a = in(0), b = in(1);
      if (need[0]) emit(0, at.trans_a ? matmul(b, g, at.trans_b, true) : matmul(g, b, false, !at.trans_b));
      if (need[1]) emit(1, at.trans_b ? matmul(g, a, true, at.trans_a) : matmul(a, g, !at.trans_a, false));
      return;
    }
    case OpKind::conv2d: {
      const Var x = in(0), w = in(1);
      if (need[0]) emit(0, conv2d_input_grad(g, w, x.shape(), at.stride, at.pad));
      if (need[1]) emit(1, conv2d_weight_grad(x, g, w.shape(), at.stride, at.pad));
      return;
    }
    case OpKind::conv2d_input_grad: {
      // Bilinear in (gy, w); g has the input's shape.
      const Var gy = in(0), w = in(1);
      if (need[0]) emit(0, conv2d(g, w, at.stride, at.pad));
      if (need[1]) emit(1, conv2d_weight_grad(g, gy, w.shape(), at.stride, at.pad));
      return;
    }
    case OpKind::conv2d_weight_grad: {
      const Var x = in(0), gy = in(1);
      if (need[0]) emit(0, conv2d_input_grad(gy, g, x.shape(), at.stride, at.pad));
      if (need[1]) emit(1, conv2d(x, g, at.stride, at.pad));
      return;
    }
    case OpKind::avg_pool2d:
      emit(0, avg_pool2d_grad(g, at.window, in(0).shape()));
      return;
    case OpKind::avg_pool2d_grad:
      emit(0, avg_pool2d(g, at.window));
      return;
    case OpKind::relu:
      emit(0, relu_mask(g, in(0)));
      return;
    case OpKind::relu_mask:
      // The step function has zero derivative almost everywhere.
      if (need[0]) emit(0, relu_mask(g, in(1)));
      return;
    case OpKind::reshape:
      emit(0, reshape(g, in(0).shape()));
      return;
    case OpKind::broadcast_axis:
      emit(0, reduce_axis(g, at.axis));
      return;
    case OpKind::reduce_axis:
      emit(0, broadcast_axis(g, in(0).shape(), at.axis));
      return;
    case OpKind::expand_scalar:
      emit(0, sum_all(g));
      return;
    case OpKind::sum_all:
      emit(0, expand_scalar(g, in(0).shape()));
      return;
    case OpKind::softmax: {
      // dz = s * (g - rowsum(g * s))
      const Var s = graph.var(id);
      const Var rows = broadcast_axis(reduce_axis(mul(g, s), 0), s.shape(), 0);
      emit(0, mul(s, sub(g, rows)));
      return;
    }
    case OpKind::softmax_cross_entropy: {
      const Var z = in(0);
      const Shape& zs = z.shape();
      Tensor onehot(zs);
      for (std::size_t b = 0; b < zs[0]; ++b) {
        onehot[b * zs[1] + static_cast<std::size_t>((*at.labels)[b])] = 1.0;
      }
      const Var diff = sub(softmax(z), graph.constant(std::move(onehot)));
      emit(0, mul(expand_scalar(g, zs), scale(diff, 1.0 / static_cast<double>(zs[0]))));
      return;
    }
  }
}

}  // namespace detail

}  // namespace prospr::ad
