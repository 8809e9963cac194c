#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uniclin/ad/tape.hpp"

// Differentiable op vocabulary. Every op records onto the tape of its first
// argument; mixing tapes is a usage error.
namespace uniclin::ad {

// [m×p]·[p×n]
Var matmul(Var a, Var b);
// [m×p]·[n×p]ᵀ, i.e. a linear layer with an [out×in] weight.
Var matmul_nt(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// x[..., n] + row[n]
Var add_row(Var x, Var row);
// x[..., n] * row[n]
Var mul_row(Var x, Var row);
// x[A×B×C] + y[A×C], y repeated over the middle axis.
Var add_mid_broadcast(Var x, Var y);
// y[A×C] -> [A×B×C]
Var repeat_mid(Var y, std::size_t b);
Var scale(Var x, float s);
Var add_scalar(Var x, float s);

Var relu(Var x);
Var gelu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);

Var sum(Var x);
Var mean(Var x);

// Normalizes over the last axis (eps inside the sqrt), then gamma/beta.
Var layernorm(Var x, Var gamma, Var beta, float eps = 1e-5f);
// Row-wise softmax over the last axis with max subtraction.
Var softmax_rows(Var x);

// Scaled dot-product attention with q[Tq×h×dh], k,v[Tk×h×dh]. With
// `causal`, query i sees keys j <= i + (Tk - Tq).
Var attention(Var q, Var k, Var v, bool causal);
inline Var causal_attention(Var q, Var k, Var v) { return attention(q, k, v, true); }

struct Target {
  std::size_t position;
  std::size_t token;
};
// Mean over targets of -log softmax(logits[position])[token].
Var cross_entropy_at(Var logits, std::span<const Target> targets);
// Mean binary cross-entropy of logits[n] against targets in {0,1}.
Var bce_with_logits(Var logits, std::span<const float> targets);

Var embedding(Var table, std::span<const int> ids);
// Concatenates along axis 0; trailing dims must agree.
Var concat_rows(std::span<const Var> parts);
// Rows [start, start+count) along axis 0.
Var slice_rows(Var x, std::size_t start, std::size_t count);
// Columns [start, start+count) of the last axis.
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var reshape(Var x, Shape shape);
// Appends zero columns to the last axis up to `total_cols`. Gradient flows
// back through the original columns only.
Var pad_cols(Var x, std::size_t total_cols);

}  // namespace uniclin::ad
