#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sbcformer/blocks.hpp"
#include "sbcformer/error.hpp"
#include "sbcformer/model.hpp"

using namespace sbc;

namespace {

const Model& xs_model() {
  static const Model m = Model::build(VariantSpec::named("XS"), {}, Init::random(7, true));
  return m;
}

void zero(ConvBn& c) {
  c.weight = Tensor(c.weight.shape());
  if (c.bias) c.bias = Tensor(c.bias->shape());
  if (c.bn) c.bn = BatchNorm::identity(c.out_channels());
}

void zero(LinearParams& l) {
  l.weight = Tensor(l.weight.shape());
  if (l.bias) l.bias = Tensor(l.bias->shape());
}

ConvBn pointwise(Tensor w) {
  ConvBn c;
  c.spec = ConvSpec::pointwise();
  c.weight = std::move(w);
  return c;
}

Tensor step_conv(const ConvBn& c, const Tensor& x) {
  Tensor y = conv2d_auto(x, c.weight, c.bias ? &*c.bias : nullptr, c.spec);
  return c.bn ? batch_norm_inference(y, c.bn->gamma, c.bn->beta, c.bn->mean, c.bn->var, c.bn->eps) : y;
}

Tensor stepwise_invres(const InvResParams& p, const Tensor& x) {
  Tensor h = activation(Activation::kGelu, step_conv(p.expand, x));
  h = activation(Activation::kGelu, step_conv(p.dw, h));
  Tensor out = step_conv(p.project, h);
  add_inplace(out, x);
  return out;
}

MAttnParams tiny_mattn(std::int64_t tokens, std::int64_t width, int heads) {
  MAttnParams p;
  p.heads = heads;
  p.shared_pw = pointwise(Tensor({width, width, 1, 1}));
  p.pos_bias = Tensor({tokens});
  return p;
}

}  // namespace

TEST_CASE("invres: zero branch is the identity") {
  InvResParams p = xs_model().stage(0).invres[0];
  zero(p.expand);
  zero(p.dw);
  zero(p.project);
  const Tensor x = oracle::uniform({1, 96, 28, 28}, 1);
  CHECK(invres_forward(x, p) == x);

  InvResParams only_project = xs_model().stage(0).invres[0];
  zero(only_project.project);
  CHECK(invres_forward(x, only_project) == x);
}

TEST_CASE("invres: shape and stepwise composition") {
  const InvResParams& p = xs_model().stage(0).invres[1];
  const Tensor x = oracle::uniform({1, 96, 28, 28}, 2);
  const Tensor y = invres_forward(x, p);
  CHECK(y.shape() == Shape{1, 96, 28, 28});
  CHECK(bitwise_equal(y, stepwise_invres(p, x)));
  CHECK_THROWS_AS(invres_forward(Tensor({1, 95, 28, 28}), p), ShapeError);
}

TEST_CASE("stem") {
  const Tensor img = oracle::uniform({1, 3, 224, 224}, 3);
  CHECK(stem_forward(img, xs_model().stem()).shape() == Shape{1, 96, 28, 28});
  const Model l = Model::build(VariantSpec::named("L"), {}, Init::random(1));
  CHECK(stem_forward(img, l.stem()).shape() == Shape{1, 192, 28, 28});
  CHECK(stem_forward(Tensor({1, 3, 256, 256}), xs_model().stem()).shape() == Shape{1, 96, 32, 32});
  CHECK_THROWS_AS(stem_forward(Tensor({1, 3, 100, 100}), xs_model().stem()), GeometryError);
}

TEST_CASE("embedding") {
  const Tensor x = oracle::uniform({1, 96, 28, 28}, 4);
  const Tensor y = embedding_forward(x, xs_model().embed(0));
  CHECK(y.shape() == Shape{1, 160, 14, 14});
  CHECK(embedding_forward(y, xs_model().embed(1)).shape() == Shape{1, 288, 7, 7});
  CHECK_THROWS_AS(embedding_forward(Tensor({1, 96, 7, 7}), xs_model().embed(0)), GeometryError);

  ConvBn delta;
  delta.spec = ConvSpec::square(3, 2, 1);
  delta.weight = Tensor({5, 5, 3, 3});
  for (int c = 0; c < 5; ++c) delta.weight.at(c, c, 1, 1) = 1.0f;
  const Tensor small = oracle::uniform({1, 5, 8, 6}, 5);
  const Tensor sub = embedding_forward(small, delta);
  REQUIRE(sub.shape() == Shape{1, 5, 4, 3});
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) CHECK(sub.at(0, c, i, j) == small.at(0, c, 2 * i, 2 * j));
}

TEST_CASE("mixer") {
  const Tensor x = oracle::uniform({1, 96, 7, 7}, 6);
  const MixerParams& p = xs_model().stage(0).mixer;
  CHECK(bitwise_equal(mixer_forward(x, p), invres_forward(invres_forward(x, p.blocks[0]), p.blocks[1])));

  MixerParams z = p;
  for (auto& b : z.blocks) zero(b.project);
  CHECK(mixer_forward(x, z) == x);

  CHECK_THROWS_AS(mixer_forward(Tensor({1, 96, 14, 14}), p), ShapeError);
  for (const auto& name : VariantSpec::names()) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(2));
    for (int s = 0; s < 3; ++s) {
      const auto c = m.spec().stage_dims[static_cast<std::size_t>(s)];
      CHECK(mixer_forward(Tensor({1, c, 7, 7}, 0.1f), m.stage(s).mixer).shape() == Shape{1, c, 7, 7});
    }
  }
}

TEST_CASE("mhsa: degenerate and symmetric cases") {
  SUBCASE("single token returns the value row") {
    MAttnParams p = tiny_mattn(1, 4, 1);
    const Tensor y = oracle::uniform({1, 4}, 7), v = oracle::uniform({1, 4}, 8);
    CHECK(mhsa(y, v, p) == v);
  }
  SUBCASE("equal query rows and zero bias give uniform attention") {
    MAttnParams p = tiny_mattn(5, 4, 2);
    Tensor y({5, 4});
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 4; ++c) y.at(i, c) = 0.3f * static_cast<float>(c) - 0.2f;
    const Tensor v = oracle::uniform({5, 4}, 9);
    std::vector<Tensor> weights;
    const Tensor out = mhsa(y, v, p, &weights);
    REQUIRE(weights.size() == 2);
    for (float w : weights[0].values()) CHECK(w == doctest::Approx(0.2));
    for (int c = 0; c < 4; ++c) {
      double mean = 0;
      for (int i = 0; i < 5; ++i) mean += v.at(i, c);
      mean /= 5;
      for (int i = 0; i < 5; ++i) CHECK(std::fabs(out.at(i, c) - mean) <= 1e-6);
    }
  }
  SUBCASE("bias length must equal the token count") {
    MAttnParams p = tiny_mattn(3, 4, 1);
    CHECK_THROWS_AS(mhsa(Tensor({4, 4}), Tensor({4, 4}), p), ConfigError);
  }
}

TEST_CASE("mhsa: small case against the explicit oracle") {
  MAttnParams p = tiny_mattn(3, 4, 1);
  p.pos_bias = Tensor({3}, {0.3f, -0.7f, 1.1f});
  const Tensor y = oracle::uniform({3, 4}, 10), v = oracle::uniform({3, 4}, 11);
  const Tensor expected = oracle::attention(y, y, v, {0.3, -0.7, 1.1});
  CHECK(max_abs_diff(mhsa(y, v, p), expected) <= 1e-6f);

  // Two heads: each head sees its own column slice.
  MAttnParams p2 = tiny_mattn(3, 4, 2);
  p2.pos_bias = p.pos_bias;
  const Tensor out = mhsa(y, v, p2);
  for (int h = 0; h < 2; ++h) {
    Tensor yh({3, 2}), vh({3, 2});
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 2; ++c) {
        yh.at(i, c) = y.at(i, 2 * h + c);
        vh.at(i, c) = v.at(i, 2 * h + c);
      }
    const Tensor eh = oracle::attention(yh, yh, vh, {0.3, -0.7, 1.1});
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 2; ++c) CHECK(std::fabs(out.at(i, 2 * h + c) - eh.at(i, c)) <= 1e-6f);
  }
}

TEST_CASE("mhsa: attention rows sum to one on a real block") {
  const auto& p = std::get<MAttnParams>(xs_model().stage(1).attention[0]);
  const Tensor y = oracle::uniform({49, p.width()}, 12), v = oracle::uniform({49, p.width()}, 13);
  std::vector<Tensor> weights;
  mhsa(y, v, p, &weights);
  CHECK(weights.size() == static_cast<std::size_t>(p.heads));
  for (const Tensor& w : weights) {
    for (int i = 0; i < 49; ++i) {
      double s = 0;
      for (int j = 0; j < 49; ++j) s += w.at(i, j);
      CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("mhsa: bias orientation") {
  const Tensor y = oracle::uniform({6, 4}, 14), v = oracle::uniform({6, 4}, 15);
  MAttnParams p = tiny_mattn(6, 4, 2);
  const Tensor no_bias = mhsa(y, v, p);
  const Tensor b = oracle::uniform({6}, 16, -2.0f, 2.0f);
  Tensor b_shifted = b;
  for (float& x : b_shifted.values()) x += 3.0f;

  p.bias_mode = BiasMode::kPerQuery;
  p.pos_bias = b;
  const Tensor per_query = mhsa(y, v, p);
  p.pos_bias = b_shifted;
  CHECK(max_abs_diff(per_query, mhsa(y, v, p)) <= 1e-6f);
  CHECK(max_abs_diff(per_query, no_bias) <= 1e-6f);  // a per-row constant never reaches the output

  p.bias_mode = BiasMode::kPerKey;
  p.pos_bias = b;
  const Tensor per_key = mhsa(y, v, p);
  CHECK(max_abs_diff(per_key, no_bias) > 1e-3f);  // non-uniform per-key bias must matter
  p.pos_bias = b_shifted;
  CHECK(max_abs_diff(per_key, mhsa(y, v, p)) <= 1e-6f);  // a uniform shift still cancels
}

TEST_CASE("value_branch") {
  const auto& real = std::get<MAttnParams>(xs_model().stage(2).attention[0]);
  const Tensor y = oracle::uniform({1, real.width(), 7, 7}, 17);

  MAttnParams zeroed = real;
  zero(zeroed.value_dw);
  CHECK(value_branch(y, zeroed) == y);

  MAttnParams delta = real;
  delta.value_norm = BatchNorm::identity(real.width());
  delta.value_norm.eps = 0.0f;
  zero(delta.value_dw);
  for (std::int64_t c = 0; c < real.width(); ++c) delta.value_dw.weight.at(c, 0, 1, 1) = 1.0f;
  Tensor expected = activation(Activation::kGelu, y);
  add_inplace(expected, y);
  CHECK(value_branch(y, delta) == expected);

  const BatchNorm& bn = real.value_norm;
  Tensor composed = oracle::conv2d(oracle::batch_norm(y, bn.gamma, bn.beta, bn.mean, bn.var, bn.eps),
                                   real.value_dw.weight, &*real.value_dw.bias, real.value_dw.spec);
  for (std::int64_t i = 0; i < composed.numel(); ++i) composed[i] = static_cast<float>(oracle::gelu(composed[i]) + y[i]);
  CHECK(max_abs_diff(value_branch(y, real), composed) <= 1e-5f);
}

TEST_CASE("mattn: residual sub-layers") {
  const auto& real = std::get<MAttnParams>(xs_model().stage(0).attention[1]);
  const Tensor x = oracle::uniform({1, 96, 7, 7}, 18);

  MAttnParams both = real;
  zero(both.out);
  zero(both.ffn_out);
  CHECK(mattn_forward(x, both) == x);

  MAttnParams ffn_zero = real;
  zero(ffn_zero.ffn_out);
  const Tensor y_map = real.shared_pw.forward(real.norm.apply(x));
  Tensor x1 = real.out.forward(mhsa(map_to_tokens(y_map), map_to_tokens(value_branch(y_map, real)), real));
  add_inplace(x1, map_to_tokens(x));
  CHECK(bitwise_equal(mattn_forward(x, ffn_zero), tokens_to_map(x1, 7, 7)));

  MAttnParams out_zero = real;
  zero(out_zero.out);
  const Tensor tokens = map_to_tokens(x);
  Tensor hidden = real.ffn_in.forward(tokens);
  activation_inplace(Activation::kGelu, hidden);
  Tensor x2 = real.ffn_out.forward(hidden);
  add_inplace(x2, tokens);
  CHECK(bitwise_equal(mattn_forward(x, out_zero), tokens_to_map(x2, 7, 7)));

  CHECK(mattn_forward(x, real).shape() == x.shape());
}

TEST_CASE("global_stream") {
  const Model& m = xs_model();
  SUBCASE("stage 3: pool and ConvT keep the 7x7 extent") {
    const Tensor x = oracle::uniform({1, 288, 7, 7}, 19);
    CHECK(adaptive_avg_pool2d(x, 7, 7) == x);
    CHECK(global_stream(x, m.stage(2)).shape() == x.shape());
  }
  SUBCASE("stage 1: 7x7 inside, 28x28 restored") {
    struct Probe : BlockObserver {
      std::vector<Shape> shapes;
      void on_block(std::string_view, const Tensor& t) override { shapes.push_back(t.shape()); }
    } probe;
    const Tensor x = oracle::uniform({1, 96, 28, 28}, 20);
    CHECK(global_stream(x, m.stage(0), &probe).shape() == x.shape());
    REQUIRE(probe.shapes.size() == 4);  // mixer, mattn0, mattn1, convt
    for (std::size_t i = 0; i + 1 < probe.shapes.size(); ++i) CHECK(probe.shapes[i] == Shape{1, 96, 7, 7});
    CHECK(probe.shapes.back() == Shape{1, 96, 28, 28});
  }
  SUBCASE("no attention blocks reduces to ConvT(Mixer(Pool(x)))") {
    StageParams st = m.stage(1);
    st.attention.clear();
    const Tensor x = oracle::uniform({1, 160, 14, 14}, 21);
    const Tensor expected = convt_forward(mixer_forward(adaptive_avg_pool2d(x, 7, 7), st.mixer), st.convt);
    CHECK(bitwise_equal(global_stream(x, st), expected));
  }
  SUBCASE("resolution that cannot round-trip") {
    CHECK_THROWS_AS(global_stream(Tensor({1, 96, 14, 14}), m.stage(0)), ShapeError);
  }
}

TEST_CASE("fuse_streams") {
  const std::int64_t c = 6;
  const Tensor xl = oracle::uniform({1, c, 5, 5}, 22), xg = oracle::uniform({1, c, 5, 5}, 23);
  Tensor left({c, 2 * c, 1, 1}), right({c, 2 * c, 1, 1});
  for (std::int64_t i = 0; i < c; ++i) {
    left.at(i, i, 0, 0) = 1.0f;
    right.at(i, c + i, 0, 0) = 1.0f;
  }

  FuseParams p;
  p.gate = pointwise(Tensor({c, c, 1, 1}));
  p.gate->bn = BatchNorm::identity(c);
  SUBCASE("zero gate projection halves the local stream") {
    p.merge = pointwise(left);
    const Tensor out = fuse_streams(xl, xg, p);
    for (std::int64_t i = 0; i < xl.numel(); ++i) CHECK(out[i] == xl[i] * 0.5f);
  }
  SUBCASE("gate of exactly one with selector merges") {
    p.gate->bn->beta = Tensor({c}, 100.0f);
    p.merge = pointwise(left);
    CHECK(fuse_streams(xl, xg, p) == xl);
    p.merge = pointwise(right);
    CHECK(fuse_streams(xl, xg, p) == xg);
  }
  SUBCASE("random case against the formula") {
    p.gate = pointwise(oracle::uniform({c, c, 1, 1}, 24));
    p.gate->bn = BatchNorm{oracle::uniform({c}, 25), oracle::uniform({c}, 26), oracle::uniform({c}, 27),
                           oracle::uniform({c}, 28, 0.5f, 1.5f), 1e-5f};
    p.merge = pointwise(oracle::uniform({c, 2 * c, 1, 1}, 29));
    const Tensor out = fuse_streams(xl, xg, p);
    CHECK(out.shape() == xl.shape());
    const auto& bn = *p.gate->bn;
    Tensor g = oracle::batch_norm(oracle::conv2d(xg, p.gate->weight, nullptr, ConvSpec::pointwise()), bn.gamma,
                                  bn.beta, bn.mean, bn.var, bn.eps);
    Tensor cat({1, 2 * c, 5, 5});
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(g.at(0, ch, i, j))));
          cat.at(0, ch, i, j) = static_cast<float>(xl.at(0, ch, i, j) * s);
          cat.at(0, c + ch, i, j) = xg.at(0, ch, i, j);
        }
    CHECK(max_abs_diff(out, oracle::conv2d(cat, p.merge.weight, nullptr, ConvSpec::pointwise())) <= 1e-6f);
  }
  CHECK_THROWS_AS(fuse_streams(xl, Tensor({1, c, 4, 4}), p), ShapeError);
}

TEST_CASE("sbcformer block: shapes for every variant and stage") {
  for (const auto& name : VariantSpec::names()) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(3));
    for (int s = 0; s < 3; ++s) {
      const auto c = m.spec().stage_dims[static_cast<std::size_t>(s)];
      const auto r = m.spec().stage_resolution(s);
      const Tensor x = oracle::uniform({1, c, r, r}, 30 + s);
      CAPTURE(name);
      CAPTURE(s);
      CHECK(sbcformer_block_forward(x, m.stage(s)).shape() == Shape{1, c, r, r});
    }
  }
}

TEST_CASE("sbcformer block without the local stream merges the global stream alone") {
  const Model m = Model::build(VariantSpec::named("XS"), {true, false}, Init::random(4, true));
  const StageParams& st = m.stage(0);
  CHECK_FALSE(st.fuse.gate.has_value());
  const Tensor x = oracle::uniform({1, 96, 28, 28}, 40);
  Tensor local = x;
  for (const auto& ir : st.invres) local = invres_forward(local, ir);
  const Tensor expected = st.fuse.merge.forward(global_stream(local, st));
  CHECK(bitwise_equal(sbcformer_block_forward(x, st), expected));
}
