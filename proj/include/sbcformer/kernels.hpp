#pragma once

#include <cstdint>
#include <optional>

#include "sbcformer/tensor.hpp"

namespace sbc {

/// Convolution geometry. groups == 1 is a standard convolution, groups == in_channels is depthwise.
struct ConvSpec {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  static ConvSpec pointwise() { return {}; }
  static ConvSpec square(int kernel, int stride, int padding, int groups = 1) {
    return {kernel, kernel, stride, padding, groups};
  }

  bool operator==(const ConvSpec&) const = default;
};

/// floor((in + 2 * padding - kernel) / stride) + 1; GeometryError when that is < 1.
std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int padding);

enum class Activation { kGelu, kSigmoid };

float gelu(float x);
float sigmoid(float x);

// Every function below is pure: inputs are never modified and the result is a fresh tensor.

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Direct convolution (cross-correlation). weight is [Cout, Cin/groups, kh, kw], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);

/// Patch unfolding followed by one GEMM per group; same contract as conv2d.
Tensor conv2d_im2col(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);

/// Unfolds image `n`, group `group` of `input` into a [Cin/groups * kh * kw, H' * W'] matrix.
Tensor im2col(const Tensor& input, std::int64_t n, int group, const ConvSpec& spec);

/// Picks the fastest path: plain GEMM for point-wise, direct for depthwise, im2col otherwise.
Tensor conv2d_auto(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);

/// Learnable up-sampler with kernel == stride == factor. weight is [Cin, Cout, factor, factor].
/// factor must be 1, 2 or 4; factor 1 is a point-wise convolution.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int factor);

/// Averages near-equal windows (PyTorch adaptive pooling boundaries).
Tensor adaptive_avg_pool2d(const Tensor& input, std::int64_t out_h, std::int64_t out_w);

/// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& input);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& m);
void softmax_rows_inplace(Tensor& m);

Tensor activation(Activation kind, const Tensor& x);
void activation_inplace(Activation kind, Tensor& x);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel (axis 1). DataError on negative variance.
Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                            const Tensor& var, float eps);

/// [n,din] x [dout,din]^T + b -> [n,dout].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);

// Layout helpers.

void add_inplace(Tensor& dst, const Tensor& src);
void mul_inplace(Tensor& dst, const Tensor& src);

/// Concatenates two [N,C*,H,W] tensors along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// [1,C,H,W] -> [H*W, C] with tokens in row-major spatial order.
Tensor map_to_tokens(const Tensor& map);

/// [H*W, C] -> [1,C,H,W].
Tensor tokens_to_map(const Tensor& tokens, std::int64_t h, std::int64_t w);

}  // namespace sbc
