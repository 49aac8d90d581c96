#include "sbcformer/blocks.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "sbcformer/error.hpp"
#include "sbcformer/gemm.hpp"

namespace sbc {

namespace {

void notify(BlockObserver* observer, std::string_view prefix, std::string_view name, const Tensor& t) {
  if (!observer) return;
  std::string full(prefix);
  if (!full.empty()) full += '.';
  full += name;
  observer->on_block(full, t);
}

void expect_channels(const Tensor& x, std::int64_t channels, const char* what) {
  expect_rank(x, 4, what);
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     to_string(x.shape()));
  }
}

Tensor ffn_residual(const Tensor& tokens, const LinearParams& ffn_in, const LinearParams& ffn_out) {
  Tensor hidden = ffn_in.forward(tokens);
  activation_inplace(Activation::kGelu, hidden);
  Tensor out = ffn_out.forward(hidden);
  add_inplace(out, tokens);
  return out;
}

}  // namespace

BatchNorm BatchNorm::identity(std::int64_t channels) {
  return {Tensor::full({channels}, 1.0f), Tensor::zeros({channels}), Tensor::zeros({channels}),
          Tensor::full({channels}, 1.0f), 1e-5f};
}

Tensor BatchNorm::apply(const Tensor& x) const { return batch_norm_inference(x, gamma, beta, mean, var, eps); }

Tensor ConvBn::forward(const Tensor& x) const {
  Tensor y = conv2d_auto(x, weight, bias ? &*bias : nullptr, spec);
  if (bn) y = bn->apply(y);
  return y;
}

Tensor LinearParams::forward(const Tensor& tokens) const { return linear(tokens, weight, bias ? &*bias : nullptr); }

Tensor invres_forward(const Tensor& x, const InvResParams& p) {
  expect_channels(x, p.expand.in_channels(), "invres");
  Tensor h = p.expand.forward(x);
  activation_inplace(Activation::kGelu, h);
  h = p.dw.forward(h);
  activation_inplace(Activation::kGelu, h);
  Tensor out = p.project.forward(h);
  add_inplace(out, x);
  return out;
}

Tensor stem_forward(const Tensor& img, const StemParams& p) {
  expect_rank(img, 4, "stem");
  if (img.dim(2) % 8 != 0 || img.dim(3) % 8 != 0) {
    throw GeometryError("stem: input extents " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(3)) +
                        " are not divisible by 8");
  }
  Tensor x = img;
  for (const ConvBn& conv : p.convs) {
    x = conv.forward(x);
    activation_inplace(Activation::kGelu, x);
  }
  return x;
}

Tensor embedding_forward(const Tensor& x, const ConvBn& p) {
  expect_rank(x, 4, "embedding");
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw GeometryError("embedding: input extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                        " are not even");
  }
  return p.forward(x);
}

Tensor mixer_forward(const Tensor& x, const MixerParams& p, std::int64_t map_size) {
  expect_rank(x, 4, "mixer");
  if (x.dim(2) != map_size || x.dim(3) != map_size) {
    throw ShapeError("mixer: expected a " + std::to_string(map_size) + "x" + std::to_string(map_size) +
                     " map, got " + to_string(x.shape()));
  }
  return invres_forward(invres_forward(x, p.blocks[0]), p.blocks[1]);
}

Tensor value_branch(const Tensor& y_map, const MAttnParams& p) {
  expect_channels(y_map, p.width(), "value_branch");
  Tensor v = p.value_dw.forward(p.value_norm.apply(y_map));
  activation_inplace(Activation::kGelu, v);
  add_inplace(v, y_map);
  return v;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const Tensor* pos_bias,
                            BiasMode bias_mode, std::vector<Tensor>* weights) {
  expect_rank(q, 2, "attention query");
  expect_rank(k, 2, "attention key");
  expect_rank(v, 2, "attention value");
  const std::int64_t tokens = q.dim(0);
  if (k.shape() != q.shape() || v.dim(0) != tokens) {
    throw ShapeError("attention: query " + to_string(q.shape()) + ", key " + to_string(k.shape()) + ", value " +
                     to_string(v.shape()) + " do not agree");
  }
  if (heads < 1 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide widths " +
                      std::to_string(q.dim(1)) + " / " + std::to_string(v.dim(1)));
  }
  if (pos_bias && pos_bias->numel() != tokens) {
    throw ConfigError("attention: positional bias of length " + std::to_string(pos_bias->numel()) + " for " +
                      std::to_string(tokens) + " tokens");
  }
  const std::int64_t qk_width = q.dim(1), v_width = v.dim(1);
  const std::int64_t d = qk_width / heads, dv = v_width / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor out({tokens, v_width});
  Tensor scores({tokens, tokens});
  if (weights) weights->clear();
  for (int h = 0; h < heads; ++h) {
    const ConstMatrixView qh{q.data() + h * d, qk_width, 1};
    const ConstMatrixView kh{k.data() + h * d, qk_width, 1};
    gemm(tokens, tokens, d, qh, kh.transposed(), {scores.data(), tokens});
    for (std::int64_t i = 0; i < tokens; ++i) {
      float* row = scores.data() + i * tokens;
      for (std::int64_t j = 0; j < tokens; ++j) {
        float s = row[j] * scale;
        if (pos_bias) s += (*pos_bias)[bias_mode == BiasMode::kPerKey ? j : i];
        row[j] = s;
      }
    }
    softmax_rows_inplace(scores);
    if (weights) weights->push_back(scores);
    gemm(tokens, dv, tokens, row_major(scores.data(), tokens), {v.data() + h * dv, v_width, 1},
         {out.data() + h * dv, v_width});
  }
  return out;
}

Tensor mhsa(const Tensor& y, const Tensor& y_prime, const MAttnParams& p, std::vector<Tensor>* weights) {
  expect_rank(y, 2, "mhsa");
  if (p.pos_bias.numel() != y.dim(0)) {
    throw ConfigError("mhsa: positional bias has " + std::to_string(p.pos_bias.numel()) + " entries for " +
                      std::to_string(y.dim(0)) + " tokens");
  }
  if (y.dim(1) % p.heads != 0) {
    throw ConfigError("mhsa: width " + std::to_string(y.dim(1)) + " not divisible by " + std::to_string(p.heads) +
                      " heads");
  }
  return multi_head_attention(y, y, y_prime, p.heads, &p.pos_bias, p.bias_mode, weights);
}

Tensor mattn_forward(const Tensor& x, const MAttnParams& p) {
  expect_channels(x, p.shared_pw.in_channels(), "mattn");
  const std::int64_t h = x.dim(2), w = x.dim(3);
  const Tensor y_map = p.shared_pw.forward(p.norm.apply(x));
  const Tensor y_prime = map_to_tokens(value_branch(y_map, p));
  const Tensor attended = mhsa(map_to_tokens(y_map), y_prime, p);
  Tensor x1 = p.out.forward(attended);
  add_inplace(x1, map_to_tokens(x));
  return tokens_to_map(ffn_residual(x1, p.ffn_in, p.ffn_out), h, w);
}

Tensor std_attention_forward(const Tensor& x, const StdAttnParams& p) {
  expect_channels(x, p.q.weight.dim(1), "std_attention");
  const std::int64_t h = x.dim(2), w = x.dim(3);
  const Tensor normed = map_to_tokens(p.norm.apply(x));
  const Tensor attended = multi_head_attention(p.q.forward(normed), p.k.forward(normed), p.v.forward(normed),
                                               p.heads, nullptr, BiasMode::kPerKey);
  Tensor x1 = p.out.forward(attended);
  add_inplace(x1, map_to_tokens(x));
  return tokens_to_map(ffn_residual(x1, p.ffn_in, p.ffn_out), h, w);
}

Tensor attention_forward(const Tensor& x, const AttentionParams& p) {
  return std::visit(
      [&](const auto& params) -> Tensor {
        if constexpr (std::is_same_v<std::decay_t<decltype(params)>, MAttnParams>) {
          return mattn_forward(x, params);
        } else {
          return std_attention_forward(x, params);
        }
      },
      p);
}

Tensor convt_forward(const Tensor& x, const ConvTParams& p) {
  return conv_transpose2d(x, p.weight, &p.bias, p.factor);
}

Tensor global_stream(const Tensor& x_local, const StageParams& stage, BlockObserver* observer,
                     std::string_view prefix) {
  expect_rank(x_local, 4, "global_stream");
  const std::int64_t h = x_local.dim(2), w = x_local.dim(3);
  if (h != stage.pooled_size * stage.convt.factor || w != stage.pooled_size * stage.convt.factor) {
    throw ShapeError("global_stream: map " + to_string(x_local.shape()) + " cannot round-trip through a " +
                     std::to_string(stage.pooled_size) + "x" + std::to_string(stage.pooled_size) +
                     " pool and x" + std::to_string(stage.convt.factor) + " ConvT");
  }
  Tensor g = adaptive_avg_pool2d(x_local, stage.pooled_size, stage.pooled_size);
  g = mixer_forward(g, stage.mixer, stage.pooled_size);
  notify(observer, prefix, "mixer", g);
  for (std::size_t i = 0; i < stage.attention.size(); ++i) {
    g = attention_forward(g, stage.attention[i]);
    notify(observer, prefix, "mattn" + std::to_string(i), g);
  }
  g = convt_forward(g, stage.convt);
  notify(observer, prefix, "convt", g);
  return g;
}

Tensor fuse_streams(const Tensor& x_local, const Tensor& x_global, const FuseParams& p) {
  if (x_local.shape() != x_global.shape()) {
    throw ShapeError("fuse_streams: local " + to_string(x_local.shape()) + " and global " +
                     to_string(x_global.shape()) + " differ");
  }
  if (!p.gate) throw ConfigError("fuse_streams: parameters have no gate projection");
  Tensor gate = p.gate->forward(x_global);
  activation_inplace(Activation::kSigmoid, gate);
  mul_inplace(gate, x_local);
  return p.merge.forward(concat_channels(gate, x_global));
}

Tensor sbcformer_block_forward(const Tensor& x, const StageParams& stage, BlockObserver* observer,
                               std::string_view prefix) {
  Tensor local = x;
  for (std::size_t i = 0; i < stage.invres.size(); ++i) {
    local = invres_forward(local, stage.invres[i]);
    notify(observer, prefix, "invres" + std::to_string(i), local);
  }
  const Tensor global = global_stream(local, stage, observer, prefix);
  Tensor out = stage.local_stream ? fuse_streams(local, global, stage.fuse) : stage.fuse.merge.forward(global);
  notify(observer, prefix, "fuse", out);
  return out;
}

}  // namespace sbc
