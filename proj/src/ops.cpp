#include "ucdg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace ucdg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_matrix(Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data() + offset, Eigen::Index(rows), Eigen::Index(cols));
}
ConstMatMap as_matrix(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data() + offset, Eigen::Index(rows), Eigen::Index(cols));
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(a.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class F>
Var unary(Var a, F&& forward, Tape::BackwardFn backward) {
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = forward(in[i]);
  return a.tape().record(std::move(out), {a}, std::move(backward));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t.grad_target(a), g);
    accumulate(t.grad_target(b), g);
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t.grad_target(a), g);
    if (Tensor* gb = t.grad_target(b)) {
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const auto y = b.value().data();
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
    }
    if (Tensor* gb = t.grad_target(b)) {
      const auto x = a.value().data();
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; },
      [a, factor](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) {
          auto d = ga->data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
        }
      });
}

Var relu(Var a) {
  return unary(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [a](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) {
          const auto x = a.value().data();
          auto d = ga->data();
          for (std::size_t i = 0; i < d.size(); ++i) {
            if (x[i] > 0.0) d[i] += g[i];
          }
        }
      });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  Tensor out(a.shape());
  const auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(x[i]);
  // The backward rule reads the output value back through the tape.
  auto holder = std::make_shared<Var>();
  Var result = a.tape().record(std::move(out), {a}, [a, holder](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const auto s = holder->value().data();
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * s[i] * (1.0 - s[i]);
    }
  });
  *holder = result;
  return result;
}

Var absolute(Var a) {
  return unary(
      a, [](double v) { return std::abs(v); },
      [a](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) {
          const auto x = a.value().data();
          auto d = ga->data();
          for (std::size_t i = 0; i < d.size(); ++i) {
            if (x[i] > 0.0) d[i] += g[i];
            else if (x[i] < 0.0) d[i] -= g[i];
          }
        }
      });
}

Var sum(Var a) {
  const auto x = a.value().data();
  double s = 0.0;
  for (double v : x) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      const double gv = g[0];
      for (double& d : ga->data()) d += gv;
    }
  });
}

Var mean(Var a) {
  const double n = double(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_over(Var a, std::vector<std::size_t> axes) {
  const Shape& in = a.shape();
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    if (ax >= in.size()) throw ShapeError("mean_over: axis " + std::to_string(ax) + " out of range for " + shape_string(in));
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) count *= in[i];
    else out_shape.push_back(in[i]);
  }
  // Map each input element to its output slot.
  const std::size_t n = a.value().size();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(in.size(), 0);
  const auto out_strides = strides_of(out_shape);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t o = 0, k = 0;
    for (std::size_t ax = 0; ax < in.size(); ++ax) {
      if (!reduced[ax]) o += counter[ax] * out_strides[k++];
    }
    (*index)[flat] = o;
    for (std::size_t ax = in.size(); ax-- > 0;) {
      if (++counter[ax] < in[ax]) break;
      counter[ax] = 0;
    }
  }
  Tensor out(out_shape);
  const auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[(*index)[i]] += x[i];
  const double inv = 1.0 / double(count);
  for (double& v : o) v *= inv;
  return a.tape().record(std::move(out), {a}, [a, index, inv](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[(*index)[i]] * inv;
    }
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) throw_shape_error("reshape", a.shape(), shape);
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var permute(Var a, const std::vector<std::size_t>& order) {
  const Shape& in = a.shape();
  if (order.size() != in.size()) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) + " for shape " + shape_string(in));
  }
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.size() || seen[order[i]]) throw ShapeError("permute: invalid axis order");
    seen[order[i]] = true;
    out_shape[i] = in[order[i]];
  }
  const auto in_strides = strides_of(in);
  const std::size_t n = a.value().size();
  // source[out_flat] = in_flat
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(in.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t ax = 0; ax < in.size(); ++ax) s += counter[ax] * in_strides[order[ax]];
    (*source)[flat] = s;
    for (std::size_t ax = in.size(); ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) break;
      counter[ax] = 0;
    }
  }
  Tensor out(out_shape);
  const auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = x[(*source)[i]];
  return a.tape().record(std::move(out), {a}, [a, source](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_target(a)) {
      auto d = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[(*source)[i]] += g[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw_shape_error("concat", first, s);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;

  Tensor out(out_shape);
  auto o = out.data();
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    const auto x = p.value().data();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(x.begin() + r * block, block, o.begin() + r * out_block + offset);
    }
    offset += block;
  }
  return parts.front().tape().record(std::move(out), parts, [parts, outer, inner, out_block, axis](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t block = p.shape()[axis] * inner;
      if (Tensor* gp = t.grad_target(p)) {
        auto d = gp->data();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t k = 0; k < block; ++k) d[r * block + k] += g[r * out_block + offset + k];
        }
      }
      offset += block;
    }
  });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) throw_shape_error("matmul", a.shape(), b.shape());
  Tensor out({n, m});
  as_matrix(out, 0, n, m).noalias() = as_matrix(a.value(), 0, n, k) * as_matrix(b.value(), 0, k, m);
  return a.tape().record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    auto G = as_matrix(g, 0, n, m);
    if (Tensor* ga = t.grad_target(a)) as_matrix(*ga, 0, n, k).noalias() += G * as_matrix(b.value(), 0, k, m).transpose();
    if (Tensor* gb = t.grad_target(b)) as_matrix(*gb, 0, k, m).noalias() += as_matrix(a.value(), 0, n, k).transpose() * G;
  });
}

Var channel_affine(Var x, Var weight, std::optional<Var> bias) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("channel_affine: input needs a batch and channel axis, got " + shape_string(xs));
  require_rank("channel_affine(weight)", weight, 2);
  const std::size_t batch = xs[0], in_ch = xs[1], out_ch = weight.dim(0);
  if (weight.dim(1) != in_ch) throw_shape_error("channel_affine", xs, weight.shape());
  if (bias && bias->shape() != Shape{out_ch}) throw_shape_error("channel_affine(bias)", weight.shape(), bias->shape());
  const std::size_t rest = x.value().size() / (batch * in_ch);

  Shape out_shape = xs;
  out_shape[1] = out_ch;
  Tensor out(out_shape);
  const auto W = as_matrix(weight.value(), 0, out_ch, in_ch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto Y = as_matrix(out, b * out_ch * rest, out_ch, rest);
    Y.noalias() = W * as_matrix(x.value(), b * in_ch * rest, in_ch, rest);
    if (bias) {
      const auto bv = bias->value().data();
      for (std::size_t o = 0; o < out_ch; ++o) Y.row(Eigen::Index(o)).array() += bv[o];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [x, weight, bias, batch, in_ch, out_ch, rest](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_target(x);
    Tensor* gw = t.grad_target(weight);
    Tensor* gb = bias ? t.grad_target(*bias) : nullptr;
    const auto W = as_matrix(weight.value(), 0, out_ch, in_ch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto G = as_matrix(g, b * out_ch * rest, out_ch, rest);
      if (gx) as_matrix(*gx, b * in_ch * rest, in_ch, rest).noalias() += W.transpose() * G;
      if (gw) as_matrix(*gw, 0, out_ch, in_ch).noalias() += G * as_matrix(x.value(), b * in_ch * rest, in_ch, rest).transpose();
      if (gb) {
        auto d = gb->data();
        for (std::size_t o = 0; o < out_ch; ++o) d[o] += G.row(Eigen::Index(o)).sum();
      }
    }
  });
}

Var mix_last(Var x, const Tensor& matrix) {
  const Shape& xs = x.shape();
  if (xs.empty() || matrix.rank() != 2 || matrix.dim(0) != xs.back()) throw_shape_error("mix_last", xs, matrix.shape());
  const std::size_t n = xs.back(), k = matrix.dim(1), rows = x.value().size() / n;
  Shape out_shape = xs;
  out_shape.back() = k;
  Tensor out(out_shape);
  as_matrix(out, 0, rows, k).noalias() = as_matrix(x.value(), 0, rows, n) * as_matrix(matrix, 0, n, k);
  auto m = std::make_shared<const Tensor>(matrix);
  return x.tape().record(std::move(out), {x}, [x, m, rows, n, k](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) {
      as_matrix(*gx, 0, rows, n).noalias() += as_matrix(g, 0, rows, k) * as_matrix(*m, 0, n, k).transpose();
    }
  });
}

Var batched_mix_last(Var x, Var a, bool transpose) {
  const Shape& xs = x.shape();
  require_rank("batched_mix_last(matrix)", a, 3);
  if (xs.size() < 2) throw_shape_error("batched_mix_last", xs, a.shape());
  const std::size_t batch = xs[0], n = xs.back();
  if (a.dim(0) != batch || a.dim(1) != n || a.dim(2) != n) throw_shape_error("batched_mix_last", xs, a.shape());
  const std::size_t rows = x.value().size() / (batch * n);
  Tensor out(xs);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto X = as_matrix(x.value(), b * rows * n, rows, n);
    const auto A = as_matrix(a.value(), b * n * n, n, n);
    auto Y = as_matrix(out, b * rows * n, rows, n);
    if (transpose) Y.noalias() = X * A.transpose();
    else Y.noalias() = X * A;
  }
  return x.tape().record(std::move(out), {x, a}, [x, a, transpose, batch, rows, n](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_target(x);
    Tensor* ga = t.grad_target(a);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto G = as_matrix(g, b * rows * n, rows, n);
      const auto A = as_matrix(a.value(), b * n * n, n, n);
      if (gx) {
        auto GX = as_matrix(*gx, b * rows * n, rows, n);
        if (transpose) GX.noalias() += G * A;
        else GX.noalias() += G * A.transpose();
      }
      if (ga) {
        const auto X = as_matrix(x.value(), b * rows * n, rows, n);
        auto GA = as_matrix(*ga, b * n * n, n, n);
        if (transpose) GA.noalias() += G.transpose() * X;
        else GA.noalias() += X.transpose() * G;
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, length, nodes, kernel, stride, pad, out_length;
};

// Column buffer (C*K) x (T_out*N) for sample b.
void im2col(const Tensor& x, const ConvGeometry& c, std::size_t b, RowMat& col) {
  col.setZero(Eigen::Index(c.in_ch * c.kernel), Eigen::Index(c.out_length * c.nodes));
  const auto xv = x.data();
  for (std::size_t ch = 0; ch < c.in_ch; ++ch) {
    const std::size_t base = (b * c.in_ch + ch) * c.length * c.nodes;
    for (std::size_t kk = 0; kk < c.kernel; ++kk) {
      double* row = col.data() + (ch * c.kernel + kk) * c.out_length * c.nodes;
      for (std::size_t to = 0; to < c.out_length; ++to) {
        const long ti = long(to * c.stride + kk) - long(c.pad);
        if (ti < 0 || ti >= long(c.length)) continue;
        std::copy_n(xv.begin() + base + std::size_t(ti) * c.nodes, c.nodes, row + to * c.nodes);
      }
    }
  }
}

void col2im_add(const RowMat& col, const ConvGeometry& c, std::size_t b, Tensor& gx) {
  auto d = gx.data();
  for (std::size_t ch = 0; ch < c.in_ch; ++ch) {
    const std::size_t base = (b * c.in_ch + ch) * c.length * c.nodes;
    for (std::size_t kk = 0; kk < c.kernel; ++kk) {
      const double* row = col.data() + (ch * c.kernel + kk) * c.out_length * c.nodes;
      for (std::size_t to = 0; to < c.out_length; ++to) {
        const long ti = long(to * c.stride + kk) - long(c.pad);
        if (ti < 0 || ti >= long(c.length)) continue;
        for (std::size_t n = 0; n < c.nodes; ++n) d[base + std::size_t(ti) * c.nodes + n] += row[to * c.nodes + n];
      }
    }
  }
}

}  // namespace

Var conv_time(Var x, Var weight, std::optional<Var> bias, std::size_t stride) {
  require_rank("conv_time", x, 4);
  require_rank("conv_time(weight)", weight, 3);
  const Shape& xs = x.shape();
  if (weight.dim(1) != xs[1]) throw_shape_error("conv_time", xs, weight.shape());
  if (weight.dim(2) % 2 == 0) throw ShapeError("conv_time: kernel size must be odd, got " + std::to_string(weight.dim(2)));
  if (stride == 0) throw ShapeError("conv_time: stride must be positive");
  ConvGeometry c{xs[0], xs[1], weight.dim(0), xs[2], xs[3], weight.dim(2), stride, (weight.dim(2) - 1) / 2, 0};
  c.out_length = (c.length + stride - 1) / stride;
  if (bias && bias->shape() != Shape{c.out_ch}) throw_shape_error("conv_time(bias)", weight.shape(), bias->shape());

  Tensor out({c.batch, c.out_ch, c.out_length, c.nodes});
  const auto W = as_matrix(weight.value(), 0, c.out_ch, c.in_ch * c.kernel);
  const std::size_t cols = c.out_length * c.nodes;
  RowMat col;
  for (std::size_t b = 0; b < c.batch; ++b) {
    im2col(x.value(), c, b, col);
    auto Y = as_matrix(out, b * c.out_ch * cols, c.out_ch, cols);
    Y.noalias() = W * col;
    if (bias) {
      const auto bv = bias->value().data();
      for (std::size_t o = 0; o < c.out_ch; ++o) Y.row(Eigen::Index(o)).array() += bv[o];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [x, weight, bias, c, cols](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_target(x);
    Tensor* gw = t.grad_target(weight);
    Tensor* gb = bias ? t.grad_target(*bias) : nullptr;
    const auto W = as_matrix(weight.value(), 0, c.out_ch, c.in_ch * c.kernel);
    RowMat col, dcol;
    for (std::size_t b = 0; b < c.batch; ++b) {
      const auto G = as_matrix(g, b * c.out_ch * cols, c.out_ch, cols);
      if (gw) {
        im2col(x.value(), c, b, col);
        as_matrix(*gw, 0, c.out_ch, c.in_ch * c.kernel).noalias() += G * col.transpose();
      }
      if (gx) {
        dcol.noalias() = W.transpose() * G;
        col2im_add(dcol, c, b, *gx);
      }
      if (gb) {
        auto d = gb->data();
        for (std::size_t o = 0; o < c.out_ch; ++o) d[o] += G.row(Eigen::Index(o)).sum();
      }
    }
  });
}

Var interp_time(Var x, std::size_t length) {
  require_rank("interp_time", x, 4);
  if (length == 0) throw ShapeError("interp_time: target length must be positive");
  const Shape& xs = x.shape();
  const std::size_t outer = xs[0] * xs[1], tin = xs[2], n = xs[3];
  struct Tap {
    std::size_t lo, hi;
    double w;
  };
  auto taps = std::make_shared<std::vector<Tap>>(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double pos = (length == 1 || tin == 1) ? 0.0 : double(t) * double(tin - 1) / double(length - 1);
    std::size_t lo = std::min(std::size_t(std::floor(pos)), tin - 1);
    std::size_t hi = std::min(lo + 1, tin - 1);
    (*taps)[t] = {lo, hi, pos - double(lo)};
  }
  Tensor out({xs[0], xs[1], length, n});
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t t = 0; t < length; ++t) {
      const Tap& tp = (*taps)[t];
      for (std::size_t j = 0; j < n; ++j) {
        const double a = xv[(r * tin + tp.lo) * n + j];
        const double b = xv[(r * tin + tp.hi) * n + j];
        o[(r * length + t) * n + j] = tp.w == 0.0 ? a : a + tp.w * (b - a);
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [x, taps, outer, tin, n, length](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) {
      auto d = gx->data();
      for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t s = 0; s < length; ++s) {
          const Tap& tp = (*taps)[s];
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[(r * length + s) * n + j];
            d[(r * tin + tp.lo) * n + j] += gv * (1.0 - tp.w);
            d[(r * tin + tp.hi) * n + j] += gv * tp.w;
          }
        }
      }
    }
  });
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must be in [0, 1)");
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& m : *mask) m = u(rng) < p ? 0.0 : keep_scale;
  Tensor out(x.shape());
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * (*mask)[i];
  return x.tape().record(std::move(out), {x}, [x, mask](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) {
      auto d = gx->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (*mask)[i];
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + shape_string(xs));
  const std::size_t batch = xs[0], ch = xs[1], rest = x.value().size() / (batch * ch);
  if (gamma.shape() != Shape{ch}) throw_shape_error("batch_norm(gamma)", xs, gamma.shape());
  if (beta.shape() != Shape{ch}) throw_shape_error("batch_norm(beta)", xs, beta.shape());
  const double count = double(batch * rest);
  const auto xv = x.value().data();

  auto inv_std = std::make_shared<std::vector<double>>(ch);
  auto xhat = std::make_shared<Tensor>(xs);
  std::vector<double> mu(ch, 0.0), var(ch, 0.0);
  if (state.training) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t r = 0; r < rest; ++r) mu[c] += xv[(b * ch + c) * rest + r];
    for (auto& m : mu) m /= count;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t r = 0; r < rest; ++r) {
          const double d = xv[(b * ch + c) * rest + r] - mu[c];
          var[c] += d * d;
        }
    for (auto& v : var) v /= count;
    if (state.running_mean && state.running_var) {
      auto rm = state.running_mean->data();
      auto rv = state.running_var->data();
      const double unbiased = count > 1.0 ? count / (count - 1.0) : 1.0;
      for (std::size_t c = 0; c < ch; ++c) {
        rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mu[c];
        rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * var[c] * unbiased;
      }
    }
  } else {
    if (!state.running_mean || !state.running_var) throw std::invalid_argument("batch_norm: inference needs running statistics");
    const auto rm = state.running_mean->data();
    const auto rv = state.running_var->data();
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = rm[c];
      var[c] = rv[c];
    }
  }
  for (std::size_t c = 0; c < ch; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + state.eps);

  Tensor out(xs);
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  auto xh = xhat->data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t r = 0; r < rest; ++r) {
        const std::size_t i = (b * ch + c) * rest + r;
        xh[i] = (xv[i] - mu[c]) * (*inv_std)[c];
        o[i] = gv[c] * xh[i] + bv[c];
      }
  const bool training = state.training;
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, batch, ch, rest, count, training](Tape& t, const Tensor& g) {
    const auto xh = xhat->data();
    std::vector<double> sum_g(ch, 0.0), sum_gx(ch, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t r = 0; r < rest; ++r) {
          const std::size_t i = (b * ch + c) * rest + r;
          sum_g[c] += g[i];
          sum_gx[c] += g[i] * xh[i];
        }
    if (Tensor* gg = t.grad_target(gamma)) {
      for (std::size_t c = 0; c < ch; ++c) (*gg)[c] += sum_gx[c];
    }
    if (Tensor* gb = t.grad_target(beta)) {
      for (std::size_t c = 0; c < ch; ++c) (*gb)[c] += sum_g[c];
    }
    if (Tensor* gx = t.grad_target(x)) {
      const auto gam = gamma.value().data();
      auto d = gx->data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          const double k = gam[c] * (*inv_std)[c];
          const double mg = sum_g[c] / count, mgx = sum_gx[c] / count;
          for (std::size_t r = 0; r < rest; ++r) {
            const std::size_t i = (b * ch + c) * rest + r;
            d[i] += training ? k * (g[i] - mg - xh[i] * mgx) : k * g[i];
          }
        }
    }
  });
}

Var l2_norm_last(Var x) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("l2_norm_last: scalar input");
  const std::size_t d = xs.back(), rows = x.value().size() / d;
  Shape out_shape(xs.begin(), xs.end() - 1);
  Tensor out(out_shape);
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xv[r * d + k] * xv[r * d + k];
    out[r] = std::sqrt(s);
  }
  auto norms = std::make_shared<Tensor>(out);
  return x.tape().record(std::move(out), {x}, [x, norms, rows, d](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) {
      const auto xv = x.value().data();
      auto dst = gx->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double nr = (*norms)[r];
        if (nr == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) dst[r * d + k] += g[r] * xv[r * d + k] / nr;
      }
    }
  });
}

Var time_diff(Var x, std::size_t axis, std::size_t delta) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw ShapeError("time_diff: axis out of range for " + shape_string(xs));
  if (delta == 0 || delta >= xs[axis]) {
    throw ShapeError("time_diff: offset " + std::to_string(delta) + " invalid for axis length " + std::to_string(xs[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[axis], out_len = len - delta;
  Shape out_shape = xs;
  out_shape[axis] = out_len;
  Tensor out(out_shape);
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t k = 0; k < inner; ++k)
        o[(r * out_len + t) * inner + k] = xv[(r * len + t + delta) * inner + k] - xv[(r * len + t) * inner + k];
  return x.tape().record(std::move(out), {x}, [x, outer, inner, len, out_len, delta](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_target(x)) {
      auto d = gx->data();
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t s = 0; s < out_len; ++s)
          for (std::size_t k = 0; k < inner; ++k) {
            const double gv = g[(r * out_len + s) * inner + k];
            d[(r * len + s + delta) * inner + k] += gv;
            d[(r * len + s) * inner + k] -= gv;
          }
    }
  });
}

}  // namespace ucdg
