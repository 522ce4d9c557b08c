#pragma once

// Differentiable tensor operations. Matrices are row-major (rows, cols);
// images are (channels, height, width).

#include <cstdint>
#include <span>
#include <vector>

#include "c2f/autograd.hpp"

namespace c2f::ag {

// Per-position validity flags; nonzero means "real".
using Mask = std::vector<std::uint8_t>;

Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k) x (k,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m,k) x (n,k)^T
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);  // (m,n) + (n)
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// Row-wise softmax. Columns with mask[c] == 0 get exactly zero weight.
// Throws NumericError if every column is masked.
Tensor masked_softmax_rows(const Tensor& logits, const Mask& column_mask = {});

// Per-column maximum over rows [begin, end) skipping masked rows; (1, n).
Tensor max_pool_rows(const Tensor& a, std::size_t begin, std::size_t end,
                     const Mask& row_mask = {});
Tensor mean_rows(const Tensor& a);  // (1, n)

// out[i][j] = a[i][j] * w[i]; w has m entries.
Tensor scale_rows(const Tensor& a, const Tensor& w);
// Zeroes rows whose mask entry is 0 (no gradient flows into them).
Tensor mask_rows(const Tensor& a, const Mask& row_mask);

// x: (C,H,W), weight: (O,C,k,k), bias: (O) or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Rows of `table` selected by ids; (ids.size(), d).
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);

Tensor sum(const Tensor& a);                       // scalar
Tensor sum_scalars(std::span<const Tensor> parts);  // scalar

// Sum over rows of -log softmax(logits[i])[labels[i]]. When `probabilities` is
// non-null it receives the (m, c) softmax values.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::int64_t> labels,
                          std::vector<double>* probabilities = nullptr);

}  // namespace c2f::ag
