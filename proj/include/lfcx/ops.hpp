#pragma once

// Differentiable operators. Shapes are checked eagerly; mismatches raise
// DimensionError naming both shapes. Nothing broadcasts except the per-channel
// bias inside conv2d and the affine terms of the norm layers.

#include <cstddef>
#include <optional>
#include <vector>

#include "lfcx/autograd.hpp"

namespace lfcx::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& x);
// Exact Gaussian-CDF form: 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

// [m x k] * [k x n]
Var matmul(const Var& a, const Var& b);
// Batched: [B x m x k] * [B x k x n]
Var bmm(const Var& a, const Var& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(const Var& x);
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t len);

struct Conv2dArgs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};
// x [B x C x H x W], w [O x C/groups x k x k], bias [O]. Cross-correlation.
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, Conv2dArgs args = {});

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};
// Per-channel normalisation of [B x C x ...]. Training mode normalises with
// batch statistics and updates the running stats in place; eval mode reads them.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state,
              bool training);

// Normalises along `axis`; gamma/beta have shape [x.dim(axis)].
Var layernorm(const Var& x, const Var& gamma, const Var& beta, std::size_t axis,
              double eps = 1e-5);

// Max-subtracted softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);

// x [B x C x H x W], one flat cell index per batch item -> [B x C].
Var gather_cells(const Var& x, const std::vector<std::size_t>& cells);

}  // namespace lfcx::ops
