#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pmdef/tape.hpp"

// Differentiable primitives. Every op validates its shapes, computes the
// forward value eagerly and records a backward closure on the tape.
namespace pmdef::ops {

enum class Padding { valid, same };

// Lower clamp applied to q before the logarithm in KL terms.
inline constexpr double kProbabilityFloor = 1e-12;
// Row-sum tolerance for inputs treated as probability distributions.
inline constexpr double kDistributionTolerance = 1e-6;

Var matmul(Tape& tape, Var a, Var b);
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);
Var add_scalar(Tape& tape, Var a, double offset);

// x[..., k] + bias[k]
Var add_bias(Tape& tape, Var x, Var bias);

Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
Var tanh(Tape& tape, Var x);
Var exp(Tape& tape, Var x);
Var log(Tape& tape, Var x);
Var square(Tape& tape, Var x);
Var clamp(Tape& tape, Var x, double lo, double hi);
Var maximum(Tape& tape, Var x, double floor);

Var sum(Tape& tape, Var x);
Var mean(Tape& tape, Var x);
// [N, ...] -> [N]
Var row_sum(Tape& tape, Var x);

Var reshape(Tape& tape, Var x, Shape shape);
// [N, ...] -> [N, prod(...)]
Var flatten(Tape& tape, Var x);

Var softmax(Tape& tape, Var z, std::size_t axis);
Var softmax(Tape& tape, Var z);  // last axis
Var log_softmax(Tape& tape, Var z);

// x: N x H x W x C_in, filters: kh x kw x C_in x C_out (cross-correlation).
Var conv2d(Tape& tape, Var x, Var filters, std::size_t stride, Padding padding);
// Valid pooling over H and W; ties route the gradient to the first maximum.
Var maxpool2d(Tape& tape, Var x, std::size_t window, std::size_t stride);

// Mean over rows of sum_i p_i ln(p_i / max(q_i, floor)); 0 ln 0 = 0.
Var kl_divergence(Tape& tape, Var p, Var q);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

// [N, K] -> [N]: x[i, labels[i]]
Var pick(Tape& tape, Var x, std::span<const int> labels);
// [N, K] -> [N]: max_{j != labels[i]} x[i, j]
Var max_other(Tape& tape, Var x, std::span<const int> labels);

Var dropout(Tape& tape, Var x, double rate, std::mt19937_64& rng);

// Per-instance (x - mean) / max(std, 1e-6) over all non-batch axes.
Var standardize_per_image(Tape& tape, Var x);

}  // namespace pmdef::ops

namespace pmdef {

// Non-recording helpers over plain tensors.
Tensor softmax_rows(const Tensor& logits);
void validate_distribution_rows(const Tensor& p, const char* what);
// Per-row KL divergence with the same conventions as ops::kl_divergence.
std::vector<double> kl_rows(const Tensor& p, const Tensor& q);
double kl_row(std::span<const double> p, std::span<const double> q);

}  // namespace pmdef
