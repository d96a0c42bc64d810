#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "petal/autograd.hpp"

// Differentiable primitives. 2-D operands are [rows x cols]; ops that work
// "per row" treat leading dimensions as flattened rows.
namespace petal::ops {

using Mask = std::vector<bool>;

enum class Padding { Same, Valid };

// out = x·w (+ b). x: [N x Din], w: [Din x Dout], b: [Dout] or invalid Var.
Var linear(Graph& g, Var x, Var w, Var b = {});
Var matmul(Graph& g, Var a, Var b);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double s);
// Elementwise product of equal-shaped tensors.
Var mul(Graph& g, Var a, Var b);
Var relu(Graph& g, Var x);

// Row-wise softmax over the last dim. `mask` (same numel as x, or empty)
// marks usable entries; masked entries get exactly zero weight.
Var softmax(Graph& g, Var x, const Mask& mask = {});

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps);

// x: [T x Din], w: [k x Din x Dout], b: [Dout] or invalid Var.
// Same padding gives ceil(T/stride) outputs, zero-padded symmetrically with
// the extra cell on the left when the total is odd.
Var conv1d(Graph& g, Var x, Var w, Var b, std::size_t stride, Padding padding);

// Per-channel strided convolution, windows anchored at t·stride and
// zero-padded on the right; output length ceil(T/stride).
// x: [T x D], w: [k x D], b: [D] or invalid Var.
Var depthwise_conv1d(Graph& g, Var x, Var w, Var b, std::size_t stride);

// Multi-head scaled dot-product attention over [N x D] projections.
// allowed[i*N + j]: query i may attend to key j. Rows with row_valid false
// produce zero output; a valid row with no allowed key is an InvalidMaskError.
// If weights_out is set it receives one [N x N] weight matrix per head.
Var attention(Graph& g, Var q, Var k, Var v, const Mask& allowed, const Mask& row_valid, std::size_t num_heads,
              std::vector<Tensor>* weights_out = nullptr);

// Zeroes rows whose keep flag is false.
Var mask_rows(Graph& g, Var x, const Mask& keep);

// Row r of a 2-D tensor as a [D] vector.
Var select_row(Graph& g, Var x, std::size_t r);
// Stacks [D] vectors (or [1 x D] rows) into [N x D].
Var stack_rows(Graph& g, const std::vector<Var>& rows);
// Mean over rows: [N x D] -> [D].
Var mean_rows(Graph& g, Var x);
Var sum(Graph& g, Var x);

// out[r] = sum_i weight_i * x[row_i] for each output row r. x is [N x D].
using RowTaps = std::vector<std::pair<std::size_t, double>>;
Var combine_rows(Graph& g, Var x, const std::vector<RowTaps>& taps);

std::size_t conv_out_len(std::size_t T, std::size_t k, std::size_t stride, Padding padding);

}  // namespace petal::ops
