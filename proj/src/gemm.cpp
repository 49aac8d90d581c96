#include "sbcformer/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "sbcformer/parallel.hpp"

namespace sbc {

namespace {

typedef float v8f __attribute__((vector_size(32)));

constexpr std::int64_t kMr = 6;
constexpr std::int64_t kNr = 16;
constexpr std::int64_t kKc = 256;
constexpr std::int64_t kMc = 96;
constexpr std::int64_t kNc = 1024;

inline v8f load8(const float* p) {
  v8f v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store8(float* p, v8f v) { std::memcpy(p, &v, sizeof(v)); }

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of A into kMr-row slivers, k-major within a sliver.
void pack_a(ConstMatrixView a, std::int64_t i0, std::int64_t mc, std::int64_t p0, std::int64_t kc, float* out) {
  for (std::int64_t ir = 0; ir < mc; ir += kMr) {
    const std::int64_t rows = std::min(kMr, mc - ir);
    for (std::int64_t p = 0; p < kc; ++p) {
      const float* src = a.data + (i0 + ir) * a.row_stride + (p0 + p) * a.col_stride;
      std::int64_t r = 0;
      for (; r < rows; ++r) out[r] = src[r * a.row_stride];
      for (; r < kMr; ++r) out[r] = 0.0f;
      out += kMr;
    }
  }
}

// Packs rows [p0, p0+kc) x cols [j0, j0+nc) of B into kNr-column slivers.
void pack_b(ConstMatrixView b, std::int64_t p0, std::int64_t kc, std::int64_t j0, std::int64_t nc, float* out) {
  for (std::int64_t jr = 0; jr < nc; jr += kNr) {
    const std::int64_t cols = std::min(kNr, nc - jr);
    for (std::int64_t p = 0; p < kc; ++p) {
      const float* src = b.data + (p0 + p) * b.row_stride + (j0 + jr) * b.col_stride;
      if (cols == kNr && b.col_stride == 1) {
        std::memcpy(out, src, kNr * sizeof(float));
      } else {
        std::int64_t c = 0;
        for (; c < cols; ++c) out[c] = src[c * b.col_stride];
        for (; c < kNr; ++c) out[c] = 0.0f;
      }
      out += kNr;
    }
  }
}

// 6x16 register tile: acc = Apack(6 x kc) * Bpack(kc x 16), then written or added into C.
void micro_kernel(std::int64_t kc, const float* ap, const float* bp, float* c, std::int64_t ldc, std::int64_t rows,
                  std::int64_t cols, bool accumulate) {
  v8f acc[kMr][2] = {};
  for (std::int64_t p = 0; p < kc; ++p) {
    const v8f b0 = load8(bp);
    const v8f b1 = load8(bp + 8);
    for (std::int64_t r = 0; r < kMr; ++r) {
      const float av = ap[r];
      acc[r][0] += b0 * av;
      acc[r][1] += b1 * av;
    }
    ap += kMr;
    bp += kNr;
  }
  if (rows == kMr && cols == kNr) {
    for (std::int64_t r = 0; r < kMr; ++r) {
      float* row = c + r * ldc;
      if (accumulate) {
        store8(row, load8(row) + acc[r][0]);
        store8(row + 8, load8(row + 8) + acc[r][1]);
      } else {
        store8(row, acc[r][0]);
        store8(row + 8, acc[r][1]);
      }
    }
    return;
  }
  float tile[kMr][kNr];
  for (std::int64_t r = 0; r < kMr; ++r) {
    store8(tile[r], acc[r][0]);
    store8(tile[r] + 8, acc[r][1]);
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    float* row = c + r * ldc;
    for (std::int64_t j = 0; j < cols; ++j) row[j] = accumulate ? row[j] + tile[r][j] : tile[r][j];
  }
}

}  // namespace

void gemm(std::int64_t m, std::int64_t n, std::int64_t k, ConstMatrixView a, ConstMatrixView b, MatrixView c,
          bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate) {
      for (std::int64_t i = 0; i < m; ++i) std::fill_n(c.data + i * c.row_stride, n, 0.0f);
    }
    return;
  }

  std::vector<float> bpack(static_cast<std::size_t>(kKc * ((std::min(kNc, n) + kNr - 1) / kNr) * kNr));
  const std::int64_t row_blocks = (m + kMc - 1) / kMc;

  for (std::int64_t jc = 0; jc < n; jc += kNc) {
    const std::int64_t nc = std::min(kNc, n - jc);
    for (std::int64_t pc = 0; pc < k; pc += kKc) {
      const std::int64_t kc = std::min(kKc, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(b, pc, kc, jc, nc, bpack.data());

      parallel::parallel_for(row_blocks, [&](std::int64_t blk_begin, std::int64_t blk_end) {
        std::vector<float> apack(static_cast<std::size_t>(kMc * kc));
        for (std::int64_t blk = blk_begin; blk < blk_end; ++blk) {
          const std::int64_t ic = blk * kMc;
          const std::int64_t mc = std::min(kMc, m - ic);
          pack_a(a, ic, mc, pc, kc, apack.data());
          for (std::int64_t jr = 0; jr < nc; jr += kNr) {
            const float* bp = bpack.data() + (jr / kNr) * kc * kNr;
            for (std::int64_t ir = 0; ir < mc; ir += kMr) {
              micro_kernel(kc, apack.data() + (ir / kMr) * kc * kMr, bp,
                           c.data + (ic + ir) * c.row_stride + jc + jr, c.row_stride, std::min(kMr, mc - ir),
                           std::min(kNr, nc - jr), acc);
            }
          }
        }
      });
    }
  }
}

}  // namespace sbc
