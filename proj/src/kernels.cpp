#include "sbcformer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sbcformer/error.hpp"
#include "sbcformer/gemm.hpp"
#include "sbcformer/parallel.hpp"

namespace sbc {

namespace {

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, cin_per_group, cout_per_group;
  std::int64_t oh, ow;
};

ConvGeometry check_conv(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  expect_rank(input, 4, "conv2d input");
  expect_rank(weight, 4, "conv2d weight");
  if (spec.stride < 1 || spec.padding < 0 || spec.groups < 1 || spec.kernel_h < 1 || spec.kernel_w < 1) {
    throw ConfigError("conv2d: invalid spec (kernel " + std::to_string(spec.kernel_h) + "x" +
                      std::to_string(spec.kernel_w) + ", stride " + std::to_string(spec.stride) + ", padding " +
                      std::to_string(spec.padding) + ", groups " + std::to_string(spec.groups) + ")");
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.cin_per_group = weight.dim(1);
  if (weight.dim(2) != spec.kernel_h || weight.dim(3) != spec.kernel_w) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not match kernel " +
                     std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w));
  }
  if (g.cin % spec.groups != 0 || g.cout % spec.groups != 0 || g.cin / spec.groups != g.cin_per_group) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " and weight " + to_string(weight.shape()) +
                     " disagree for groups=" + std::to_string(spec.groups));
  }
  g.cout_per_group = g.cout / spec.groups;
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match " + std::to_string(g.cout) +
                     " output channels");
  }
  g.oh = conv_output_extent(g.h, spec.kernel_h, spec.stride, spec.padding);
  g.ow = conv_output_extent(g.w, spec.kernel_w, spec.stride, spec.padding);
  return g;
}

// Output column range [lo, hi) whose input column ox*stride - pad + k lands inside [0, w).
inline void valid_range(std::int64_t out, std::int64_t in, int stride, int pad, int k, std::int64_t& lo,
                        std::int64_t& hi) {
  const std::int64_t off = pad - k;
  lo = off > 0 ? (off + stride - 1) / stride : 0;
  const std::int64_t last = in - 1 + off;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (hi < lo) hi = lo;
}

void add_bias_rows(float* out, const Tensor* bias, std::int64_t rows, std::int64_t cols, std::int64_t row0) {
  if (!bias) return;
  for (std::int64_t r = 0; r < rows; ++r) {
    const float b = (*bias)[row0 + r];
    float* p = out + r * cols;
    for (std::int64_t j = 0; j < cols; ++j) p[j] += b;
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * static_cast<std::int64_t>(padding) - kernel;
  if (span < 0 || stride < 1) {
    throw GeometryError("convolution of extent " + std::to_string(in) + " with kernel " + std::to_string(kernel) +
                        ", padding " + std::to_string(padding) + " has no valid output");
  }
  return span / stride + 1;
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul lhs");
  expect_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " do not agree");
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  gemm(m, n, k, row_major(a.data(), k), row_major(b.data(), n), {c.data(), n});
  return c;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weight, bias, spec);
  Tensor out({g.n, g.cout, g.oh, g.ow});
  const std::int64_t in_plane = g.h * g.w;
  const std::int64_t out_plane = g.oh * g.ow;
  const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride, p = spec.padding;

  parallel::parallel_for(g.n * g.cout, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      const std::int64_t n = job / g.cout;
      const std::int64_t oc = job % g.cout;
      const std::int64_t group = oc / g.cout_per_group;
      float* dst = out.data() + (n * g.cout + oc) * out_plane;
      std::fill_n(dst, out_plane, bias ? (*bias)[oc] : 0.0f);
      for (std::int64_t icg = 0; icg < g.cin_per_group; ++icg) {
        const std::int64_t ic = group * g.cin_per_group + icg;
        const float* src = input.data() + (n * g.cin + ic) * in_plane;
        const float* wk = weight.data() + (oc * g.cin_per_group + icg) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          std::int64_t oy0, oy1;
          valid_range(g.oh, g.h, s, p, ky, oy0, oy1);
          for (int kx = 0; kx < kw; ++kx) {
            const float wv = wk[ky * kw + kx];
            std::int64_t ox0, ox1;
            valid_range(g.ow, g.w, s, p, kx, ox0, ox1);
            for (std::int64_t oy = oy0; oy < oy1; ++oy) {
              const float* srow = src + (oy * s - p + ky) * g.w - p + kx;
              float* drow = dst + oy * g.ow;
              if (s == 1) {
                for (std::int64_t ox = ox0; ox < ox1; ++ox) drow[ox] += wv * srow[ox];
              } else {
                for (std::int64_t ox = ox0; ox < ox1; ++ox) drow[ox] += wv * srow[ox * s];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor im2col(const Tensor& input, std::int64_t n, int group, const ConvSpec& spec) {
  expect_rank(input, 4, "im2col input");
  const std::int64_t cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (spec.groups < 1 || cin % spec.groups != 0 || group < 0 || group >= spec.groups || n < 0 || n >= input.dim(0)) {
    throw ShapeError("im2col: invalid image/group selection for input " + to_string(input.shape()));
  }
  const std::int64_t cg = cin / spec.groups;
  const std::int64_t oh = conv_output_extent(h, spec.kernel_h, spec.stride, spec.padding);
  const std::int64_t ow = conv_output_extent(w, spec.kernel_w, spec.stride, spec.padding);
  const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride, p = spec.padding;
  Tensor cols({cg * kh * kw, oh * ow});
  for (std::int64_t c = 0; c < cg; ++c) {
    const float* src = input.data() + (n * cin + group * cg + c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      std::int64_t oy0, oy1;
      valid_range(oh, h, s, p, ky, oy0, oy1);
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = cols.data() + ((c * kh + ky) * kw + kx) * oh * ow;
        std::int64_t ox0, ox1;
        valid_range(ow, w, s, p, kx, ox0, ox1);
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          float* drow = dst + oy * ow;
          if (oy < oy0 || oy >= oy1) {
            std::fill_n(drow, ow, 0.0f);
            continue;
          }
          const float* srow = src + (oy * s - p + ky) * w - p + kx;
          std::fill_n(drow, ox0, 0.0f);
          for (std::int64_t ox = ox0; ox < ox1; ++ox) drow[ox] = srow[ox * s];
          std::fill(drow + ox1, drow + ow, 0.0f);
        }
      }
    }
  }
  return cols;
}

Tensor conv2d_im2col(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weight, bias, spec);
  Tensor out({g.n, g.cout, g.oh, g.ow});
  const std::int64_t kdim = g.cin_per_group * spec.kernel_h * spec.kernel_w;
  const std::int64_t cols = g.oh * g.ow;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (int group = 0; group < spec.groups; ++group) {
      const Tensor unfolded = im2col(input, n, group, spec);
      const std::int64_t oc0 = group * g.cout_per_group;
      float* dst = out.data() + (n * g.cout + oc0) * cols;
      gemm(g.cout_per_group, cols, kdim, row_major(weight.data() + oc0 * kdim, kdim),
           row_major(unfolded.data(), cols), {dst, cols});
      add_bias_rows(dst, bias, g.cout_per_group, cols, oc0);
    }
  }
  return out;
}

Tensor conv2d_auto(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weight, bias, spec);
  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0;
  if (pointwise && spec.groups == 1) {
    Tensor out({g.n, g.cout, g.oh, g.ow});
    const std::int64_t cols = g.h * g.w;
    for (std::int64_t n = 0; n < g.n; ++n) {
      float* dst = out.data() + n * g.cout * cols;
      gemm(g.cout, cols, g.cin, row_major(weight.data(), g.cin), row_major(input.data() + n * g.cin * cols, cols),
           {dst, cols});
      add_bias_rows(dst, bias, g.cout, cols, 0);
    }
    return out;
  }
  if (spec.groups > 1 && g.cin_per_group == 1) return conv2d(input, weight, bias, spec);
  return conv2d_im2col(input, weight, bias, spec);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int factor) {
  if (factor != 1 && factor != 2 && factor != 4) {
    throw ConfigError("conv_transpose2d: unsupported up-sampling factor " + std::to_string(factor) +
                      " (expected 1, 2 or 4)");
  }
  expect_rank(input, 4, "conv_transpose2d input");
  expect_rank(weight, 4, "conv_transpose2d weight");
  const std::int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (weight.dim(0) != cin || weight.dim(2) != factor || weight.dim(3) != factor) {
    throw ShapeError("conv_transpose2d: weight " + to_string(weight.shape()) + " does not fit input " +
                     to_string(input.shape()) + " at factor " + std::to_string(factor));
  }
  const std::int64_t cout = weight.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv_transpose2d: bias " + to_string(bias->shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  const std::int64_t taps = cout * factor * factor;
  const std::int64_t plane = h * w;
  const std::int64_t oh = h * factor, ow = w * factor;
  Tensor out({n, cout, oh, ow});
  Tensor scratch({taps, plane});
  // weight viewed as [Cin, Cout*f*f]; its transpose maps each input pixel to every output tap.
  const ConstMatrixView wt = ConstMatrixView{weight.data(), taps, 1}.transposed();
  for (std::int64_t b = 0; b < n; ++b) {
    const float* src = input.data() + b * cin * plane;
    float* dst = out.data() + b * cout * oh * ow;
    if (factor == 1) {
      gemm(cout, plane, cin, wt, row_major(src, plane), {dst, plane});
      add_bias_rows(dst, bias, cout, plane, 0);
      continue;
    }
    gemm(taps, plane, cin, wt, row_major(src, plane), {scratch.data(), plane});
    for (std::int64_t co = 0; co < cout; ++co) {
      const float bv = bias ? (*bias)[co] : 0.0f;
      float* oplane = dst + co * oh * ow;
      for (int ky = 0; ky < factor; ++ky) {
        for (int kx = 0; kx < factor; ++kx) {
          const float* tap = scratch.data() + ((co * factor + ky) * factor + kx) * plane;
          for (std::int64_t y = 0; y < h; ++y) {
            float* orow = oplane + (y * factor + ky) * ow + kx;
            const float* trow = tap + y * w;
            for (std::int64_t x = 0; x < w; ++x) orow[x * factor] = trow[x] + bv;
          }
        }
      }
    }
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  expect_rank(input, 4, "adaptive_avg_pool2d input");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw GeometryError("adaptive_avg_pool2d: cannot pool " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  if (out_h == h && out_w == w) return input;
  Tensor out({n, c, out_h, out_w});
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = input.data() + plane * h * w;
    float* dst = out.data() + plane * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const std::int64_t y0 = oy * h / out_h, y1 = ((oy + 1) * h + out_h - 1) / out_h;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const std::int64_t x0 = ox * w / out_w, x1 = ((ox + 1) * w + out_w - 1) / out_w;
        float sum = 0.0f;
        for (std::int64_t y = y0; y < y1; ++y) {
          for (std::int64_t x = x0; x < x1; ++x) sum += src[y * w + x];
        }
        dst[oy * out_w + ox] = sum / static_cast<float>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  expect_rank(input, 4, "global_avg_pool input");
  const std::int64_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const float* src = input.data() + i * plane;
    double sum = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) sum += src[j];
    out[i] = static_cast<float>(sum / static_cast<double>(plane));
  }
  return out;
}

void softmax_rows_inplace(Tensor& m) {
  expect_rank(m, 2, "softmax_rows input");
  const std::int64_t rows = m.dim(0), cols = m.dim(1);
  for (std::int64_t r = 0; r < rows; ++r) {
    float* row = m.data() + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (std::int64_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

Tensor softmax_rows(const Tensor& m) {
  Tensor out = m;
  softmax_rows_inplace(out);
  return out;
}

void activation_inplace(Activation kind, Tensor& x) {
  float* p = x.data();
  const std::int64_t n = x.numel();
  switch (kind) {
    case Activation::kGelu:
      for (std::int64_t i = 0; i < n; ++i) p[i] = gelu(p[i]);
      break;
    case Activation::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) p[i] = sigmoid(p[i]);
      break;
  }
}

Tensor activation(Activation kind, const Tensor& x) {
  Tensor out = x;
  activation_inplace(kind, out);
  return out;
}

Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                            const Tensor& var, float eps) {
  if (x.rank() != 4 && x.rank() != 2) {
    throw ShapeError("batch_norm_inference: expected [N,C,H,W] or [N,C], got " + to_string(x.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const Tensor* t : {&gamma, &beta, &mean, &var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batch_norm_inference: statistic " + to_string(t->shape()) + " does not match " +
                       std::to_string(c) + " channels");
    }
  }
  for (std::int64_t ch = 0; ch < c; ++ch) {
    if (!(var[ch] >= 0.0f)) {
      throw DataError("batch_norm_inference: negative variance " + std::to_string(var[ch]) + " in channel " +
                      std::to_string(ch));
    }
  }
  Tensor out(x.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float scale = gamma[ch] / std::sqrt(var[ch] + eps);
      const float shift = beta[ch] - mean[ch] * scale;
      const float* src = x.data() + (b * c + ch) * plane;
      float* dst = out.data() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  expect_rank(x, 2, "linear input");
  expect_rank(weight, 2, "linear weight");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " and weight " + to_string(weight.shape()) +
                     " disagree on the input dimension");
  }
  const std::int64_t n = x.dim(0), din = x.dim(1), dout = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != dout)) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " does not match " + std::to_string(dout) +
                     " outputs");
  }
  Tensor out({n, dout});
  gemm(n, dout, din, row_major(x.data(), din), row_major(weight.data(), din).transposed(), {out.data(), dout});
  if (bias) {
    for (std::int64_t i = 0; i < n; ++i) {
      float* row = out.data() + i * dout;
      for (std::int64_t j = 0; j < dout; ++j) row[j] += (*bias)[j];
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("add: shapes " + to_string(dst.shape()) + " and " + to_string(src.shape()) + " differ");
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

void mul_inplace(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("mul: shapes " + to_string(dst.shape()) + " and " + to_string(src.shape()) + " differ");
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::int64_t i = 0; i < dst.numel(); ++i) d[i] *= s[i];
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  expect_rank(a, 4, "concat_channels lhs");
  expect_rank(b, 4, "concat_channels rhs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ outside the channel axis");
  }
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(b.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

Tensor map_to_tokens(const Tensor& map) {
  expect_rank(map, 4, "map_to_tokens input");
  if (map.dim(0) != 1) throw ShapeError("map_to_tokens: batch must be 1, got " + to_string(map.shape()));
  const std::int64_t c = map.dim(1), hw = map.dim(2) * map.dim(3);
  Tensor tokens({hw, c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t t = 0; t < hw; ++t) tokens[t * c + ch] = map[ch * hw + t];
  }
  return tokens;
}

Tensor tokens_to_map(const Tensor& tokens, std::int64_t h, std::int64_t w) {
  expect_rank(tokens, 2, "tokens_to_map input");
  if (tokens.dim(0) != h * w) {
    throw ShapeError("tokens_to_map: " + std::to_string(tokens.dim(0)) + " tokens cannot form a " +
                     std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  const std::int64_t c = tokens.dim(1), hw = h * w;
  Tensor map({1, c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t t = 0; t < hw; ++t) map[ch * hw + t] = tokens[t * c + ch];
  }
  return map;
}

}  // namespace sbc
