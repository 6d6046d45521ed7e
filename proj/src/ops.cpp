#include "lfcx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfcx/errors.hpp"
#include "lfcx/kernels.hpp"

namespace lfcx::ops {

namespace kp = kernels::parallel;

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

bool wants(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }
Tensor& gbuf(Node& n, std::size_t i) { return n.parents[i]->grad_buffer(); }
const Tensor& pval(const Node& n, std::size_t i) { return n.parents[i]->value; }

// Splits a shape around `axis` into (outer, len, inner).
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

template <typename F, typename DF>
Var unary(const Var& x, const char* op, F f, DF df) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  return make_node(std::move(out), op, {x}, [df](Node& n) {
    const Tensor& xv = pval(n, 0);
    Tensor& gx = gbuf(n, 0);
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += n.grad[i] * df(xv[i], n.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_node(std::move(out), "add", {a, b}, [](Node& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (wants(n, p)) {
        Tensor& g = gbuf(n, p);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
      }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_node(std::move(out), "sub", {a, b}, [](Node& n) {
    if (wants(n, 0)) {
      Tensor& g = gbuf(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      Tensor& g = gbuf(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_node(std::move(out), "mul", {a, b}, [](Node& n) {
    const Tensor& av = pval(n, 0);
    const Tensor& bv = pval(n, 1);
    if (wants(n, 0)) {
      Tensor& g = gbuf(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      Tensor& g = gbuf(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_node(std::move(out), "div", {a, b}, [](Node& n) {
    const Tensor& bv = pval(n, 1);
    if (wants(n, 0)) {
      Tensor& g = gbuf(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (wants(n, 1)) {
      Tensor& g = gbuf(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i] * n.value[i] / bv[i];
    }
  });
}

// Ties route the gradient to the first argument.
Var minimum(const Var& a, const Var& b) {
  check_same(a, b, "minimum");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(a.value()[i], b.value()[i]);
  return make_node(std::move(out), "minimum", {a, b}, [](Node& n) {
    const Tensor& av = pval(n, 0);
    const Tensor& bv = pval(n, 1);
    for (std::size_t i = 0; i < n.value.numel(); ++i) {
      const std::size_t p = av[i] <= bv[i] ? 0 : 1;
      if (wants(n, p)) gbuf(n, p)[i] += n.grad[i];
    }
  });
}

Var maximum(const Var& a, const Var& b) {
  check_same(a, b, "maximum");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a.value()[i], b.value()[i]);
  return make_node(std::move(out), "maximum", {a, b}, [](Node& n) {
    const Tensor& av = pval(n, 0);
    const Tensor& bv = pval(n, 1);
    for (std::size_t i = 0; i < n.value.numel(); ++i) {
      const std::size_t p = av[i] >= bv[i] ? 0 : 1;
      if (wants(n, p)) gbuf(n, p)[i] += n.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& x) {
  return unary(x, "log", [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return unary(x, "abs", [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_node(Tensor::scalar(s), "sum", {x}, [](Node& n) {
    Tensor& g = gbuf(n, 0);
    const double d = n.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += d;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  Tensor out({m, nn});
  kp::gemm(kernels::Trans::kNo, kernels::Trans::kNo, m, nn, k, a.value().ptr(), b.value().ptr(),
           out.ptr(), false);
  MacCounterScope::add(m * nn * k);
  return make_node(std::move(out), "matmul", {a, b}, [m, k, nn](Node& n) {
    if (wants(n, 0))
      kp::gemm(kernels::Trans::kNo, kernels::Trans::kYes, m, k, nn, n.grad.ptr(),
               pval(n, 1).ptr(), gbuf(n, 0).ptr(), true);
    if (wants(n, 1))
      kp::gemm(kernels::Trans::kYes, kernels::Trans::kNo, k, nn, m, pval(n, 0).ptr(),
               n.grad.ptr(), gbuf(n, 1).ptr(), true);
  });
}

Var bmm(const Var& a, const Var& b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
  Tensor out({bs, m, nn});
  for (std::size_t i = 0; i < bs; ++i)
    kp::gemm(kernels::Trans::kNo, kernels::Trans::kNo, m, nn, k, a.value().ptr() + i * m * k,
             b.value().ptr() + i * k * nn, out.ptr() + i * m * nn, false);
  MacCounterScope::add(bs * m * nn * k);
  return make_node(std::move(out), "bmm", {a, b}, [bs, m, k, nn](Node& n) {
    for (std::size_t i = 0; i < bs; ++i) {
      const double* gi = n.grad.ptr() + i * m * nn;
      if (wants(n, 0))
        kp::gemm(kernels::Trans::kNo, kernels::Trans::kYes, m, k, nn, gi,
                 pval(n, 1).ptr() + i * k * nn, gbuf(n, 0).ptr() + i * m * k, true);
      if (wants(n, 1))
        kp::gemm(kernels::Trans::kYes, kernels::Trans::kNo, k, nn, m,
                 pval(n, 0).ptr() + i * m * k, gi, gbuf(n, 1).ptr() + i * k * nn, true);
    }
  });
}

Var transpose(const Var& x) {
  const auto r = x.value().rank();
  if (r != 2 && r != 3) throw DimensionError("transpose: rank must be 2 or 3, got " + shape_str(x.shape()));
  const std::size_t bs = r == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.dim(r - 2), cols = x.dim(r - 1);
  Shape s = x.shape();
  std::swap(s[r - 2], s[r - 1]);
  Tensor out(s);
  const double* src = x.value().ptr();
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out[b * rows * cols + j * rows + i] = src[b * rows * cols + i * cols + j];
  return make_node(std::move(out), "transpose", {x}, [bs, rows, cols](Node& n) {
    Tensor& g = gbuf(n, 0);
    for (std::size_t b = 0; b < bs; ++b)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          g[b * rows * cols + i * cols + j] += n.grad[b * rows * cols + j * rows + i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_node(std::move(out), "reshape", {x}, [](Node& n) {
    Tensor& g = gbuf(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size() && axis < s.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) ok = false;
    if (!ok)
      throw DimensionError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s) +
                           " along axis " + std::to_string(axis));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor out(out_shape);
  const AxisView v = axis_view(out_shape, axis, "concat");
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().ptr();
    const std::size_t chunk = lens[p] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.ptr() + o * v.len * v.inner + off * v.inner);
    off += lens[p];
  }
  return make_node(std::move(out), "concat", parts, [v, lens](Node& n) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      const std::size_t chunk = lens[p] * v.inner;
      if (wants(n, p)) {
        double* dst = gbuf(n, p).ptr();
        for (std::size_t o = 0; o < v.outer; ++o) {
          const double* src = n.grad.ptr() + o * v.len * v.inner + off * v.inner;
          for (std::size_t i = 0; i < chunk; ++i) dst[o * chunk + i] += src[i];
        }
      }
      off += lens[p];
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t len) {
  const AxisView v = axis_view(x.shape(), axis, "slice");
  if (len == 0 || start + len > v.len)
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " + shape_str(x.shape()));
  Shape s = x.shape();
  s[axis] = len;
  Tensor out(s);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy(x.value().ptr() + (o * v.len + start) * v.inner,
              x.value().ptr() + (o * v.len + start + len) * v.inner,
              out.ptr() + o * len * v.inner);
  return make_node(std::move(out), "slice", {x}, [v, start, len](Node& n) {
    double* dst = gbuf(n, 0).ptr();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < len * v.inner; ++i)
        dst[(o * v.len + start) * v.inner + i] += n.grad[o * len * v.inner + i];
  });
}

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, Conv2dArgs args) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3])
    throw DimensionError("conv2d: expected x [B,C,H,W] and w [O,C/g,k,k], got " + shape_str(xs) +
                         " and " + shape_str(ws));
  if (args.groups == 0 || xs[1] % args.groups != 0 || ws[0] % args.groups != 0 ||
      ws[1] * args.groups != xs[1])
    throw DimensionError("conv2d: channel mismatch between input " + shape_str(xs) +
                         " and weight " + shape_str(ws) + " (groups " +
                         std::to_string(args.groups) + ")");
  if (bias && bias->shape() != Shape{ws[0]})
    throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()) + " for weight " +
                         shape_str(ws));
  kernels::ConvGeom g;
  g.batch = xs[0];
  g.in_c = xs[1];
  g.in_h = xs[2];
  g.in_w = xs[3];
  g.out_c = ws[0];
  g.k = ws[2];
  g.stride = args.stride;
  g.pad = args.padding;
  g.groups = args.groups;
  if (g.in_h + 2 * g.pad < g.k || g.in_w + 2 * g.pad < g.k || g.stride == 0)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(xs));
  Tensor out({g.batch, g.out_c, g.out_h(), g.out_w()});
  kp::conv2d_forward(g, x.value().ptr(), w.value().ptr(), bias ? bias->value().ptr() : nullptr,
                     out.ptr());
  MacCounterScope::add(g.macs());
  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_node(std::move(out), "conv2d", parents, [g, has_bias](Node& n) {
    if (wants(n, 0)) kp::conv2d_backward_input(g, n.grad.ptr(), pval(n, 1).ptr(), gbuf(n, 0).ptr());
    double* dw = wants(n, 1) ? gbuf(n, 1).ptr() : nullptr;
    double* db = (has_bias && wants(n, 2)) ? gbuf(n, 2).ptr() : nullptr;
    if (dw || db) kp::conv2d_backward_params(g, pval(n, 0).ptr(), n.grad.ptr(), dw, db);
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state,
              bool training) {
  const Shape& xs = x.shape();
  if (xs.size() < 2)
    throw DimensionError("batchnorm: expected [B x C x ...], got " + shape_str(xs));
  const std::size_t bs = xs[0], c = xs[1];
  const std::size_t inner = x.value().numel() / (bs * c);
  const Shape cs{c};
  if (gamma.shape() != cs || beta.shape() != cs || !state.running_mean || !state.running_var ||
      state.running_mean->shape() != cs || state.running_var->shape() != cs)
    throw DimensionError("batchnorm: per-channel parameters must have shape " + shape_str(cs));
  const double count = static_cast<double>(bs * inner);
  std::vector<double> mu(c), inv_std(c);
  const double* xv = x.value().ptr();
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t i = 0; i < inner; ++i) s += xv[(b * c + ch) * inner + i];
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = xv[(b * c + ch) * inner + i] - m;
          ss += d * d;
        }
      const double var = ss / count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      (*state.running_mean)[ch] = (1 - state.momentum) * (*state.running_mean)[ch] + state.momentum * m;
      (*state.running_var)[ch] =
          (1 - state.momentum) * (*state.running_var)[ch] + state.momentum * unbiased;
    } else {
      mu[ch] = (*state.running_mean)[ch];
      inv_std[ch] = 1.0 / std::sqrt((*state.running_var)[ch] + state.eps);
    }
  }
  Tensor out(xs);
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (b * c + ch) * inner + i;
        out[idx] = gm * (xv[idx] - mu[ch]) * inv_std[ch] + bt;
      }
    }
  return make_node(std::move(out), "batchnorm", {x, gamma, beta},
                   [bs, c, inner, count, mu, inv_std, training](Node& n) {
    const double* xv = pval(n, 0).ptr();
    const Tensor& gm = pval(n, 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (b * c + ch) * inner + i;
          const double xhat = (xv[idx] - mu[ch]) * inv_std[ch];
          sum_dy += n.grad[idx];
          sum_dy_xhat += n.grad[idx] * xhat;
        }
      if (wants(n, 1)) gbuf(n, 1)[ch] += sum_dy_xhat;
      if (wants(n, 2)) gbuf(n, 2)[ch] += sum_dy;
      if (!wants(n, 0)) continue;
      Tensor& gx = gbuf(n, 0);
      const double k = gm[ch] * inv_std[ch];
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (b * c + ch) * inner + i;
          if (training) {
            const double xhat = (xv[idx] - mu[ch]) * inv_std[ch];
            gx[idx] += k * (n.grad[idx] - sum_dy / count - xhat * sum_dy_xhat / count);
          } else {
            gx[idx] += k * n.grad[idx];
          }
        }
    }
  });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, std::size_t axis, double eps) {
  const AxisView v = axis_view(x.shape(), axis, "layernorm");
  const Shape ps{v.len};
  if (gamma.shape() != ps || beta.shape() != ps)
    throw DimensionError("layernorm: affine parameters must have shape " + shape_str(ps) +
                         ", got " + shape_str(gamma.shape()));
  const double len = static_cast<double>(v.len);
  const std::size_t rows = v.outer * v.inner;
  std::vector<double> mu(rows), inv_std(rows);
  const double* xv = x.value().ptr();
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t r = o * v.inner + in;
      const double* base = xv + o * v.len * v.inner + in;
      double s = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) s += base[j * v.inner];
      const double m = s / len;
      double ss = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) {
        const double d = base[j * v.inner] - m;
        ss += d * d;
      }
      mu[r] = m;
      inv_std[r] = 1.0 / std::sqrt(ss / len + eps);
      double* ob = out.ptr() + o * v.len * v.inner + in;
      for (std::size_t j = 0; j < v.len; ++j)
        ob[j * v.inner] = gamma.value()[j] * (base[j * v.inner] - m) * inv_std[r] + beta.value()[j];
    }
  return make_node(std::move(out), "layernorm", {x, gamma, beta}, [v, len, mu, inv_std](Node& n) {
    const double* xv = pval(n, 0).ptr();
    const Tensor& gm = pval(n, 1);
    std::vector<double> dxhat(v.len), xhat(v.len);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t r = o * v.inner + in;
        const std::size_t base = o * v.len * v.inner + in;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < v.len; ++j) {
          const std::size_t idx = base + j * v.inner;
          xhat[j] = (xv[idx] - mu[r]) * inv_std[r];
          dxhat[j] = n.grad[idx] * gm[j];
          s1 += dxhat[j];
          s2 += dxhat[j] * xhat[j];
          if (wants(n, 1)) gbuf(n, 1)[j] += n.grad[idx] * xhat[j];
          if (wants(n, 2)) gbuf(n, 2)[j] += n.grad[idx];
        }
        if (!wants(n, 0)) continue;
        Tensor& gx = gbuf(n, 0);
        for (std::size_t j = 0; j < v.len; ++j)
          gx[base + j * v.inner] += inv_std[r] * (dxhat[j] - s1 / len - xhat[j] * s2 / len);
      }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  const double* xv = x.value().ptr();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < v.len; ++j) mx = std::max(mx, xv[base + j * v.inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) {
        const double e = std::exp(xv[base + j * v.inner] - mx);
        out[base + j * v.inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < v.len; ++j) out[base + j * v.inner] /= s;
    }
  return make_node(std::move(out), "softmax", {x}, [v](Node& n) {
    Tensor& gx = gbuf(n, 0);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < v.len; ++j)
          dot += n.grad[base + j * v.inner] * n.value[base + j * v.inner];
        for (std::size_t j = 0; j < v.len; ++j) {
          const std::size_t idx = base + j * v.inner;
          gx[idx] += n.value[idx] * (n.grad[idx] - dot);
        }
      }
  });
}

Var gather_cells(const Var& x, const std::vector<std::size_t>& cells) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || cells.size() != xs[0])
    throw DimensionError("gather_cells: expected [B,C,H,W] with B indices, got " + shape_str(xs) +
                         " and " + std::to_string(cells.size()) + " indices");
  const std::size_t bs = xs[0], c = xs[1], hw = xs[2] * xs[3];
  for (auto cell : cells)
    if (cell >= hw) throw DimensionError("gather_cells: cell index out of range");
  Tensor out({bs, c});
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] = x.value()[(b * c + ch) * hw + cells[b]];
  return make_node(std::move(out), "gather_cells", {x}, [bs, c, hw, cells](Node& n) {
    Tensor& g = gbuf(n, 0);
    for (std::size_t b = 0; b < bs; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) g[(b * c + ch) * hw + cells[b]] += n.grad[b * c + ch];
  });
}

}  // namespace lfcx::ops
