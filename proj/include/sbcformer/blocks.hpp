#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sbcformer/kernels.hpp"
#include "sbcformer/tensor.hpp"

namespace sbc {

/// Receives the activation at each named block boundary, in execution order.
class BlockObserver {
 public:
  virtual ~BlockObserver() = default;
  virtual void on_block(std::string_view name, const Tensor& activation) = 0;
};

/// Inference-form batch normalization over axis 1.
struct BatchNorm {
  Tensor gamma, beta, mean, var;
  float eps = 1e-5f;

  static BatchNorm identity(std::int64_t channels);
  std::int64_t channels() const { return gamma.numel(); }
  Tensor apply(const Tensor& x) const;
};

/// Convolution optionally followed by batch normalization. After BN folding `bn` is empty and `bias` holds the
/// folded shift.
struct ConvBn {
  ConvSpec spec;
  Tensor weight;
  std::optional<Tensor> bias;
  std::optional<BatchNorm> bn;

  std::int64_t in_channels() const { return weight.dim(1) * spec.groups; }
  std::int64_t out_channels() const { return weight.dim(0); }
  Tensor forward(const Tensor& x) const;
};

struct LinearParams {
  Tensor weight;  // [dout, din]
  std::optional<Tensor> bias;

  Tensor forward(const Tensor& tokens) const;
};

/// Inverted residual: 1x1 expand + BN + GeLU, 3x3 depthwise + BN + GeLU, 1x1 project + BN, residual add.
struct InvResParams {
  ConvBn expand;
  ConvBn dw;
  ConvBn project;
  int expansion = 1;
};

/// Two consecutive InvRes blocks on the pooled map.
struct MixerParams {
  std::array<InvResParams, 2> blocks;
};

/// Where the learnable positional bias enters the score matrix. kPerKey adds b[j] to column j; kPerQuery adds
/// b[i] to row i, which is the literal b * 1^T form and leaves the softmax unchanged.
enum class BiasMode { kPerKey, kPerQuery };

/// Modified attention. One shared point-wise conv produces Y (query = key = Y), the value is
/// Y' = GeLU(DW(BN(Y))) + Y, and the head outputs go through a Linear back to the block width.
struct MAttnParams {
  BatchNorm norm;          // applied to the block input before the shared point-wise conv
  ConvBn shared_pw;        // C -> width, with bias
  BatchNorm value_norm;    // BN(Y)
  ConvBn value_dw;         // depthwise 3x3 on width channels, with bias
  Tensor pos_bias;         // [h*w]
  LinearParams out;        // width -> C
  LinearParams ffn_in;     // C -> r*C
  LinearParams ffn_out;    // r*C -> C
  int heads = 1;
  BiasMode bias_mode = BiasMode::kPerKey;

  std::int64_t width() const { return shared_pw.out_channels(); }
  std::int64_t head_dim() const { return width() / heads; }
};

/// Canonical transformer attention used by the standard-attention ablation.
struct StdAttnParams {
  BatchNorm norm;
  LinearParams q, k, v;
  LinearParams out;
  LinearParams ffn_in;
  LinearParams ffn_out;
  int heads = 1;

  std::int64_t head_dim() const { return q.weight.dim(0) / heads; }
};

using AttentionParams = std::variant<MAttnParams, StdAttnParams>;

/// Transposed conv with kernel == stride == factor. weight is [C, C, factor, factor].
struct ConvTParams {
  Tensor weight;
  Tensor bias;
  int factor = 1;
};

/// gate: Proj for the sigmoid weight map (absent without a local stream); merge: halving projection.
struct FuseParams {
  std::optional<ConvBn> gate;
  ConvBn merge;
};

struct StageParams {
  std::vector<InvResParams> invres;
  MixerParams mixer;
  std::vector<AttentionParams> attention;
  ConvTParams convt;
  FuseParams fuse;
  std::int64_t pooled_size = 7;
  bool local_stream = true;
};

struct StemParams {
  std::array<ConvBn, 3> convs;
};

Tensor invres_forward(const Tensor& x, const InvResParams& p);

/// Three stride-2 3x3 conv + BN + GeLU layers; extents must be divisible by 8.
Tensor stem_forward(const Tensor& img, const StemParams& p);

/// Stride-2 3x3 conv + BN between stages; extents must be even.
Tensor embedding_forward(const Tensor& x, const ConvBn& p);

Tensor mixer_forward(const Tensor& x, const MixerParams& p, std::int64_t map_size = 7);

/// Value path GeLU(DW(BN(Y))) + Y on the map form of Y.
Tensor value_branch(const Tensor& y_map, const MAttnParams& p);

/// Multi-head attention on tokens. y is [hw, width] (query and key), y_prime is [hw, width] (value).
/// When `weights` is given it receives the per-head [hw, hw] attention matrices.
Tensor mhsa(const Tensor& y, const Tensor& y_prime, const MAttnParams& p, std::vector<Tensor>* weights = nullptr);

/// Scaled dot-product attention core shared by both attention variants.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const Tensor* pos_bias,
                            BiasMode bias_mode, std::vector<Tensor>* weights = nullptr);

Tensor mattn_forward(const Tensor& x, const MAttnParams& p);
Tensor std_attention_forward(const Tensor& x, const StdAttnParams& p);
Tensor attention_forward(const Tensor& x, const AttentionParams& p);

Tensor convt_forward(const Tensor& x, const ConvTParams& p);

/// Pool -> Mixer -> attention stack -> ConvT; output has the input's shape.
Tensor global_stream(const Tensor& x_local, const StageParams& stage, BlockObserver* observer = nullptr,
                     std::string_view prefix = {});

/// gate = Sigmoid(Proj(x_g)); merge([x_l * gate, x_g]).
Tensor fuse_streams(const Tensor& x_local, const Tensor& x_global, const FuseParams& p);

/// InvRes stack, then the local pass-through and the global stream fused back together.
/// Without a local stream the global output alone feeds the merge projection.
Tensor sbcformer_block_forward(const Tensor& x, const StageParams& stage, BlockObserver* observer = nullptr,
                               std::string_view prefix = {});

}  // namespace sbc
