#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "blora/tensor.hpp"

// Differentiable operations. Every op records a reverse-pass entry on the
// current Tape when at least one input requires a gradient.
namespace blora {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

// x * s where s is a single-element tensor (gate values, learned scalars).
Tensor mul_by_scalar(const Tensor& x, const Tensor& s);
// x[n x m] * v[m], broadcast over rows.
Tensor mul_rowwise(const Tensor& x, const Tensor& v);
// x[n x m] + v[m], broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& v);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

// Forward rounds half to even; reverse pass is the identity.
Tensor round_ste(const Tensor& x);
// Clamp to [lo, hi]; gradient 1 on the closed interval, 0 outside.
Tensor clip(const Tensor& x, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Rows [row0, row0 + rows) and columns [col0, col0 + cols) of a matrix.
Tensor slice2d(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
               std::size_t cols);
// Single element of a flat view, as shape [1].
Tensor element(const Tensor& x, std::size_t index);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Joins single-element tensors into a vector.
Tensor stack_scalars(std::span<const Tensor> parts);

Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis
// Normalizes each row to zero mean and unit variance (no affine terms).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Mean negative log-likelihood of integer labels under row-wise logits.
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels);
Tensor mse(const Tensor& prediction, const Tensor& target);

}  // namespace blora
