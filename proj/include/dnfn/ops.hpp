#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dnfn/tape.hpp"

// Recorded operations. Every value is viewed as a matrix of rows x cols
// (cols = last extent); results are 2-D unless noted.

namespace dnfn::ops {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// y = x * w^T + b, with w of shape out x in.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b);

/// Per-column normalization. Training mode normalizes with the batch
/// statistics over all rows and folds them into the running estimates
/// (running = momentum * running + (1 - momentum) * batch); eval mode uses the
/// running estimates.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var,
                  T eps = static_cast<T>(kBatchNormEpsilon),
                  T momentum = static_cast<T>(kBatchNormMomentum));

/// batch_norm followed by leaky_relu, computed in one pass.
template <typename T>
Var<T> batch_norm_leaky(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                        Tensor<T>& running_var, T slope,
                        T eps = static_cast<T>(kBatchNormEpsilon),
                        T momentum = static_cast<T>(kBatchNormMomentum));

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise (Hadamard) product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

/// [a | b] along the column axis.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);

/// out[r] = x[rows[r]]
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::uint32_t> rows);

/// Edge differences for groups of k neighbors per center row:
///   out[i*k + j] = p[nbr[i*k + j]] - p[i] + bias
template <typename T>
Var<T> edge_diff(Var<T> p, std::span<const std::uint32_t> nbr, std::size_t k,
                 std::optional<Var<T>> bias);

/// Column-wise max over consecutive blocks of `group` rows.
template <typename T>
Var<T> group_max(Var<T> x, std::size_t group);

/// Column-wise sum over consecutive blocks of `group` rows.
template <typename T>
Var<T> group_sum(Var<T> x, std::size_t group);

/// out[r, :] = w[r] * x[r, :], with w holding one scalar per row of x.
template <typename T>
Var<T> scale_rows(Var<T> x, Var<T> w);

/// Gathered dot products: out[i, j] = <d[i], d[nbr[i*k + j]]>, shape rows x k.
template <typename T>
Var<T> pair_dot(Var<T> d, std::span<const std::uint32_t> nbr, std::size_t k);

/// Softmax over the last axis of every row.
template <typename T>
Var<T> softmax_rows(Var<T> x);

/// Mean negative log-likelihood of the true class; scalar result.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

/// Inverted dropout. Identity in eval mode or at rate 0. The mask depends
/// only on the tape's dropout seed, step, and the call's stream index.
template <typename T>
Var<T> dropout(Var<T> x, double rate);

/// Scalar <x, c> with a constant weight tensor; used to probe gradients.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& c);

/// Uniform variate in [0, 1) from a counter-based hash.
double hash_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t stream,
                    std::uint64_t index);

}  // namespace dnfn::ops
