#pragma once

#include <cstdint>

namespace sbc {

/// Read-only strided matrix: element (i, j) lives at data[i * row_stride + j * col_stride].
/// A transposed view is the same buffer with the strides swapped.
struct ConstMatrixView {
  const float* data;
  std::int64_t row_stride;
  std::int64_t col_stride;

  ConstMatrixView transposed() const noexcept { return {data, col_stride, row_stride}; }
};

/// Writable matrix with unit column stride.
struct MatrixView {
  float* data;
  std::int64_t row_stride;
};

inline ConstMatrixView row_major(const float* data, std::int64_t cols) noexcept { return {data, cols, 1}; }

/// C[m x n] = A[m x k] * B[k x n], or C += A * B when `accumulate` is set.
///
/// Packed, register-blocked kernel. Each output element is reduced over k in a fixed order,
/// and threads only partition output rows, so results are bitwise independent of the thread count.
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, ConstMatrixView a, ConstMatrixView b, MatrixView c,
          bool accumulate = false);

}  // namespace sbc
