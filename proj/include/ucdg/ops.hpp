#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "ucdg/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first argument and registers the matching backward rule. Operands must
// match exactly; there is no implicit broadcasting.
namespace ucdg {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

Var relu(Var a);
Var sigmoid(Var a);
Var absolute(Var a);

Var sum(Var a);
Var mean(Var a);
// Mean over the listed axes; the reduced axes are removed from the shape.
Var mean_over(Var a, std::vector<std::size_t> axes);

Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& order);
Var concat(const std::vector<Var>& parts, std::size_t axis);

// (n,k) x (k,m) -> (n,m)
Var matmul(Var a, Var b);

// x: (B, C, ...), weight: (O, C), bias: (O) -> (B, O, ...).
// y[b,o,r] = sum_c weight[o,c] x[b,c,r] + bias[o]
Var channel_affine(Var x, Var weight, std::optional<Var> bias = std::nullopt);

// x: (..., N), matrix: (N, K) held fixed -> (..., K).
Var mix_last(Var x, const Tensor& matrix);

// x: (B, ..., N), a: (B, N, N) -> (B, ..., N), per sample
// y[b,..,i] = sum_j x[b,..,j] a[b,j,i]   (transpose = false)
// y[b,..,i] = sum_j x[b,..,j] a[b,i,j]   (transpose = true)
Var batched_mix_last(Var x, Var a, bool transpose);

// 1D convolution (cross-correlation) along axis 2 of x: (B, C, T, N) with
// weight (O, C, K), K odd, zero padding (K-1)/2 on both sides.
// Output length ceil(T / stride).
Var conv_time(Var x, Var weight, std::optional<Var> bias, std::size_t stride);

// Linear interpolation along axis 2 of a rank-4 tensor to `length` samples,
// end points aligned.
Var interp_time(Var x, std::size_t length);

// Inverted dropout with drop probability p in [0, 1).
Var dropout(Var x, double p, std::mt19937_64& rng);

struct BatchNormState {
  Tensor* running_mean = nullptr;  // (C)
  Tensor* running_var = nullptr;   // (C)
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;
};

// Per-channel normalization of x: (B, C, ...) with statistics over every axis
// but 1. Training mode uses batch statistics and updates the running ones.
Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state);

// Euclidean norm over the last axis, which is removed.
Var l2_norm_last(Var x);

// out[.., t, ..] = x[.., t + delta, ..] - x[.., t, ..] along `axis`.
Var time_diff(Var x, std::size_t axis, std::size_t delta);

}  // namespace ucdg
