#pragma once

#include <vector>

#include "tve/tensor.hpp"

namespace tve {

// All ops validate shapes up front (ValidationError naming both shapes),
// check outputs for NaN/Inf, and register backward closures when any operand
// requires grad. Reductions and normalizers accumulate in double.

// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);

// Same shape, or bias broadcast: [..., d] + [d].
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise a - b, same shape.
Tensor sub(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float c);

Tensor relu(const Tensor& a);

// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

// Row-wise layer norm over the last dim with learned gain/bias of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

// Row-wise softmax over the last dim. Outputs are strictly positive and each
// row sums to 1 within f32 rounding.
Tensor softmax(const Tensor& x);

// Natural log. Rejects non-positive inputs; clamp first.
Tensor log(const Tensor& x);

// max(x, c) elementwise; gradient passes only where x > c.
Tensor clamp_min(const Tensor& x, float c);

// Scalar mean over all elements of (a-b)^2.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// [n*g, d] -> [n, d], mean over each consecutive group of g rows.
Tensor mean_pool_groups(const Tensor& x, int64_t group);

// [n, d] -> [n*t, d]; row i repeated t times consecutively.
Tensor repeat_interleave_rows(const Tensor& x, int64_t times);

// Row gather: out[r] = x[idx[r]]. Gradient scatter-adds.
Tensor select_rows(const Tensor& x, const std::vector<int64_t>& idx);

// out[r] = x[r, idx[r]] for [n,m] x -> [n].
Tensor gather_per_row(const Tensor& x, const std::vector<int64_t>& idx);

// Column slice [begin, end) of a [n, m] tensor.
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end);

// Position-dependent linear embedding. x is [B*P, f] with rows grouped per
// instance in position order; weight [P, f, d] and bias [P, d] hold one
// linear map per position: out[b*P+p] = x[b*P+p] . weight[p] + bias[p].
Tensor per_position_embed(const Tensor& x, const Tensor& weight, const Tensor& bias);

} // namespace tve
