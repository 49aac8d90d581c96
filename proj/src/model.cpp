#include "sbcformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <map>
#include <set>
#include <sstream>

#include "sbcformer/error.hpp"

namespace sbc {

// ---------------------------------------------------------------------------------------------
// VariantSpec

VariantSpec VariantSpec::named(const std::string& name) {
  VariantSpec v;
  v.name = name;
  if (name == "XS") {
    v.stage_dims = {96, 160, 288};
    v.attention_counts = {2, 3, 2};
  } else if (name == "S") {
    v.stage_dims = {96, 192, 320};
    v.attention_counts = {2, 4, 3};
  } else if (name == "B") {
    v.stage_dims = {128, 256, 384};
    v.attention_counts = {2, 4, 3};
  } else if (name == "L") {
    v.stage_dims = {192, 288, 384};
    v.attention_counts = {2, 4, 3};
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected XS, S, B or L)");
  }
  return v;
}

void VariantSpec::validate() const {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError("variant " + (name.empty() ? std::string("<unnamed>") : name) + ": " + field + " " + why);
  };
  if (input_hw < 32 || input_hw % 32 != 0) fail("input_hw", "must be a positive multiple of 32");
  if (num_classes < 1) fail("num_classes", "must be >= 1");
  if (ffn_ratio < 1) fail("ffn_ratio", "must be >= 1");
  if (attn_ratio < 1) fail("attn_ratio", "must be >= 1");
  if (head_dim < 1) fail("head_dim", "must be >= 1");
  for (int s = 0; s < 3; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const std::string idx = "[" + std::to_string(s) + "]";
    if (stage_dims[i] < 1) fail("stage_dims" + idx, "must be >= 1");
    if (invres_counts[i] < 0) fail("invres_counts" + idx, "must be >= 0");
    if (attention_counts[i] < 0) fail("attention_counts" + idx, "must be >= 0");
    if (mixer_counts[i] != 1) fail("mixer_counts" + idx, "must be 1 (one Mixer of two InvRes blocks per stage)");
    if (expansion[i] < 1) fail("expansion" + idx, "must be >= 1");
    if ((stage_dims[i] * attn_ratio) % head_dim != 0) {
      fail("head_dim", "does not divide the attention width of stage " + std::to_string(s + 1));
    }
    if (stage_dims[i] % head_dim != 0) {
      fail("head_dim", "does not divide stage width " + std::to_string(stage_dims[i]));
    }
    if (stem_divisors[i] < 1 || stage_dims[0] % stem_divisors[i] != 0) {
      fail("stem_divisors" + idx, "must divide stage_dims[0]");
    }
  }
  if (stem_divisors[2] != 1) fail("stem_divisors[2]", "must be 1 (stem ends at the stage-1 width)");
}

std::string AblationFlags::label() const {
  if (no_local_stream && standard_attention) return "no-local+std-attn";
  if (no_local_stream) return "no-local";
  if (standard_attention) return "std-attn";
  return "none";
}

// ---------------------------------------------------------------------------------------------
// Construction

namespace {

class ParamFactory {
 public:
  explicit ParamFactory(const Init& init) : init_(init), rng_(init.seed) {}

  Tensor weight(Shape shape) {
    Tensor t(std::move(shape));
    if (init_.kind == Init::Kind::kRandom) {
      for (float& v : t.values()) v = truncated_normal(0.02);
    }
    return t;
  }

  Tensor bias(std::int64_t n) {
    Tensor t({n});
    if (perturbed()) {
      for (float& v : t.values()) v = static_cast<float>(uniform(-0.1, 0.1));
    }
    return t;
  }

  Tensor pos_bias(std::int64_t n) {
    Tensor t({n});
    if (perturbed()) {
      for (float& v : t.values()) v = static_cast<float>(uniform(-1.0, 1.0));
    }
    return t;
  }

  BatchNorm norm(std::int64_t c) {
    BatchNorm bn = BatchNorm::identity(c);
    if (perturbed()) {
      for (std::int64_t i = 0; i < c; ++i) {
        bn.gamma[i] = static_cast<float>(uniform(0.5, 1.5));
        bn.beta[i] = static_cast<float>(uniform(-0.2, 0.2));
        bn.mean[i] = static_cast<float>(uniform(-0.2, 0.2));
        bn.var[i] = static_cast<float>(uniform(0.5, 1.5));
      }
    }
    return bn;
  }

  ConvBn conv(std::int64_t cin, std::int64_t cout, ConvSpec spec, bool with_bias, bool with_bn) {
    ConvBn c;
    c.spec = spec;
    c.weight = weight({cout, cin / spec.groups, spec.kernel_h, spec.kernel_w});
    if (with_bias) c.bias = bias(cout);
    if (with_bn) c.bn = norm(cout);
    return c;
  }

  LinearParams linear(std::int64_t din, std::int64_t dout) {
    LinearParams l;
    l.weight = weight({dout, din});
    l.bias = bias(dout);
    return l;
  }

 private:
  bool perturbed() const { return init_.kind == Init::Kind::kRandom && init_.perturb; }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  // Rejection-sampled normal truncated at two standard deviations.
  float truncated_normal(double sigma) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (;;) {
      const double z = dist(rng_);
      if (std::fabs(z) <= 2.0) return static_cast<float>(z * sigma);
    }
  }

  Init init_;
  std::mt19937_64 rng_;
};

InvResParams make_invres(ParamFactory& f, std::int64_t c, int expansion) {
  const std::int64_t e = c * expansion;
  InvResParams p;
  p.expansion = expansion;
  p.expand = f.conv(c, e, ConvSpec::pointwise(), false, true);
  p.dw = f.conv(e, e, ConvSpec::square(3, 1, 1, static_cast<int>(e)), false, true);
  p.project = f.conv(e, c, ConvSpec::pointwise(), false, true);
  return p;
}

MAttnParams make_mattn(ParamFactory& f, const VariantSpec& v, std::int64_t c) {
  const std::int64_t width = c * v.attn_ratio;
  const std::int64_t tokens = static_cast<std::int64_t>(v.pooled_size()) * v.pooled_size();
  MAttnParams p;
  p.heads = static_cast<int>(width / v.head_dim);
  p.bias_mode = v.bias_mode;
  p.norm = f.norm(c);
  p.shared_pw = f.conv(c, width, ConvSpec::pointwise(), true, false);
  p.value_norm = f.norm(width);
  p.value_dw = f.conv(width, width, ConvSpec::square(3, 1, 1, static_cast<int>(width)), true, false);
  p.pos_bias = f.pos_bias(tokens);
  p.out = f.linear(width, c);
  p.ffn_in = f.linear(c, c * v.ffn_ratio);
  p.ffn_out = f.linear(c * v.ffn_ratio, c);
  return p;
}

StdAttnParams make_std_attention(ParamFactory& f, const VariantSpec& v, std::int64_t c) {
  StdAttnParams p;
  p.heads = static_cast<int>(c / v.head_dim);
  p.norm = f.norm(c);
  p.q = f.linear(c, c);
  p.k = f.linear(c, c);
  p.v = f.linear(c, c);
  p.out = f.linear(c, c);
  p.ffn_in = f.linear(c, c * v.ffn_ratio);
  p.ffn_out = f.linear(c * v.ffn_ratio, c);
  return p;
}

StageParams make_stage(ParamFactory& f, const VariantSpec& v, const AblationFlags& ablation, int s) {
  const auto i = static_cast<std::size_t>(s);
  const std::int64_t c = v.stage_dims[i];
  StageParams st;
  st.pooled_size = v.pooled_size();
  st.local_stream = !ablation.no_local_stream;
  for (int k = 0; k < v.invres_counts[i]; ++k) st.invres.push_back(make_invres(f, c, v.expansion[i]));
  for (auto& b : st.mixer.blocks) b = make_invres(f, c, v.expansion[i]);
  for (int k = 0; k < v.attention_counts[i]; ++k) {
    if (ablation.standard_attention) {
      st.attention.emplace_back(make_std_attention(f, v, c));
    } else {
      st.attention.emplace_back(make_mattn(f, v, c));
    }
  }
  const int factor = v.convt_factor(s);
  st.convt.factor = factor;
  st.convt.weight = f.weight({c, c, factor, factor});
  st.convt.bias = f.bias(c);
  if (st.local_stream) {
    st.fuse.gate = f.conv(c, c, ConvSpec::pointwise(), false, true);
    st.fuse.merge = f.conv(2 * c, c, ConvSpec::pointwise(), false, true);
  } else {
    st.fuse.merge = f.conv(c, c, ConvSpec::pointwise(), false, true);
  }
  return st;
}

// Visitors receive conv(prefix, ConvBn&), norm(prefix, BatchNorm&), linear(prefix, LinearParams&) and
// tensor(name, Tensor&, kind). DefaultVisit expands the composite nodes into tensors; derived visitors
// may hide any of them.
template <class Self>
struct DefaultVisit {
  Self& self() { return static_cast<Self&>(*this); }

  template <class C>
  void conv(const std::string& p, C& c) {
    self().tensor(p + ".w", c.weight, ParamKind::kWeight);
    if (c.bias) self().tensor(p + ".b", *c.bias, ParamKind::kBias);
    if (c.bn) self().norm(p + ".bn", *c.bn);
  }

  template <class B>
  void norm(const std::string& p, B& bn) {
    self().tensor(p + ".gamma", bn.gamma, ParamKind::kNormAffine);
    self().tensor(p + ".beta", bn.beta, ParamKind::kNormAffine);
    self().tensor(p + ".mean", bn.mean, ParamKind::kNormStat);
    self().tensor(p + ".var", bn.var, ParamKind::kNormStat);
  }

  template <class L>
  void linear(const std::string& p, L& l) {
    self().tensor(p + ".w", l.weight, ParamKind::kWeight);
    if (l.bias) self().tensor(p + ".b", *l.bias, ParamKind::kBias);
  }
};

template <class V, class I>
void visit_invres(V& v, const std::string& p, I& ir) {
  v.conv(p + ".expand", ir.expand);
  v.conv(p + ".dw", ir.dw);
  v.conv(p + ".project", ir.project);
}

template <class V, class A>
void visit_attention(V& v, const std::string& p, A& attention) {
  std::visit(
      [&](auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, MAttnParams>) {
          v.norm(p + ".pw.norm", a.norm);
          v.tensor(p + ".pw.w", a.shared_pw.weight, ParamKind::kWeight);
          v.tensor(p + ".pw.b", *a.shared_pw.bias, ParamKind::kBias);
          v.norm(p + ".dw.norm", a.value_norm);
          v.tensor(p + ".dw.w", a.value_dw.weight, ParamKind::kWeight);
          v.tensor(p + ".dw.b", *a.value_dw.bias, ParamKind::kBias);
          v.tensor(p + ".bias", a.pos_bias, ParamKind::kPosBias);
          v.linear(p + ".linear", a.out);
        } else {
          v.norm(p + ".norm", a.norm);
          v.linear(p + ".q", a.q);
          v.linear(p + ".k", a.k);
          v.linear(p + ".v", a.v);
          v.linear(p + ".linear", a.out);
        }
        v.linear(p + ".ffn.0", a.ffn_in);
        v.linear(p + ".ffn.1", a.ffn_out);
      },
      attention);
}

}  // namespace

/// Grants the traversal and binding helpers access to Model internals.
class ModelAccess {
 public:
  template <class M, class V>
  static void traverse(M& m, V& v) {
    for (std::size_t i = 0; i < m.stem_.convs.size(); ++i) v.conv("stem.conv" + std::to_string(i), m.stem_.convs[i]);
    for (std::size_t s = 0; s < m.stages_.size(); ++s) {
      const std::string p = "stage" + std::to_string(s + 1);
      auto& st = m.stages_[s];
      for (std::size_t k = 0; k < st.invres.size(); ++k) visit_invres(v, p + ".invres" + std::to_string(k), st.invres[k]);
      for (std::size_t j = 0; j < st.mixer.blocks.size(); ++j) {
        visit_invres(v, p + ".mixer." + std::to_string(j), st.mixer.blocks[j]);
      }
      for (std::size_t k = 0; k < st.attention.size(); ++k) {
        visit_attention(v, p + ".mattn" + std::to_string(k), st.attention[k]);
      }
      v.tensor(p + ".convt.w", st.convt.weight, ParamKind::kWeight);
      v.tensor(p + ".convt.b", st.convt.bias, ParamKind::kBias);
      if (st.fuse.gate) v.conv(p + ".fuse.gate", *st.fuse.gate);
      v.conv(p + ".fuse.merge", st.fuse.merge);
      if (s + 1 < m.stages_.size()) v.conv("embed" + std::to_string(s + 1), m.embeds_[s]);
    }
    v.linear("head.linear", m.head_);
  }

  static Model skeleton(const VariantSpec& variant, const AblationFlags& ablation, const Init& init) {
    variant.validate();
    ParamFactory f(init);
    Model m;
    m.spec_ = variant;
    m.ablation_ = ablation;
    const auto& dims = variant.stage_dims;
    std::int64_t cin = 3;
    for (int i = 0; i < 3; ++i) {
      const std::int64_t cout = variant.stem_width(i);
      m.stem_.convs[static_cast<std::size_t>(i)] = f.conv(cin, cout, ConvSpec::square(3, 2, 1), false, true);
      cin = cout;
    }
    for (int s = 0; s < 3; ++s) {
      m.stages_[static_cast<std::size_t>(s)] = make_stage(f, variant, ablation, s);
      if (s < 2) {
        m.embeds_[static_cast<std::size_t>(s)] =
            f.conv(dims[static_cast<std::size_t>(s)], dims[static_cast<std::size_t>(s) + 1],
                   ConvSpec::square(3, 2, 1), false, true);
      }
    }
    m.head_ = f.linear(dims[2], variant.num_classes);
    m.loaded_ = init.kind == Init::Kind::kRandom;
    return m;
  }

  static void set_loaded(Model& m) { m.loaded_ = true; }
};

namespace {

struct ConstParamVisitor : DefaultVisit<ConstParamVisitor> {
  const ParamFn* fn;
  void tensor(const std::string& name, const Tensor& t, ParamKind kind) { (*fn)(name, t, kind); }
};

struct ConvBnPrefixVisitor : DefaultVisit<ConvBnPrefixVisitor> {
  std::vector<std::string> prefixes;
  void conv(const std::string& p, const ConvBn& c) {
    if (c.bn) prefixes.push_back(p);
  }
  template <class B>
  void norm(const std::string&, B&) {}
  template <class L>
  void linear(const std::string&, L&) {}
  void tensor(const std::string&, const Tensor&, ParamKind) {}
};

class Binder : public DefaultVisit<Binder> {
 public:
  explicit Binder(const WeightStore& store) : store_(store) {}

  void conv(const std::string& p, ConvBn& c) {
    if (c.bn && !store_.contains(p + ".bn.gamma") && store_.contains(p + ".b") && !c.bias) {
      c.bn.reset();
      c.bias = Tensor({c.out_channels()});
    }
    DefaultVisit<Binder>::conv(p, c);
  }

  void tensor(const std::string& name, Tensor& t, ParamKind) {
    bound_.insert(name);
    const Tensor* src = store_.find(name);
    if (!src) {
      missing_.push_back(name);
      return;
    }
    if (src->shape() != t.shape()) {
      mismatched_.push_back(name + " " + to_string(src->shape()) + " != " + to_string(t.shape()));
      return;
    }
    t = *src;
  }

  void finish() const {
    std::vector<std::string> unexpected;
    for (const auto& e : store_.entries()) {
      if (!bound_.count(e.name)) unexpected.push_back(e.name);
    }
    if (missing_.empty() && mismatched_.empty() && unexpected.empty()) return;
    std::ostringstream os;
    os << "weight binding failed:";
    auto list = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      os << ' ' << names.size() << ' ' << label << " (";
      for (std::size_t i = 0; i < names.size() && i < 8; ++i) os << (i ? ", " : "") << names[i];
      if (names.size() > 8) os << ", ...";
      os << ')';
    };
    list("unbound", missing_);
    list("shape mismatches", mismatched_);
    list("unexpected", unexpected);
    throw ConfigError(os.str());
  }

 private:
  const WeightStore& store_;
  std::set<std::string> bound_;
  std::vector<std::string> missing_;
  std::vector<std::string> mismatched_;
};

}  // namespace

Model Model::build(const VariantSpec& variant, const AblationFlags& ablation, const Init& init) {
  return ModelAccess::skeleton(variant, ablation, init);
}

Model Model::from_store(const VariantSpec& variant, const AblationFlags& ablation, const WeightStore& store) {
  Model m = ModelAccess::skeleton(variant, ablation, Init::empty());
  Binder binder(store);
  ModelAccess::traverse(m, binder);
  binder.finish();
  ModelAccess::set_loaded(m);
  return m;
}

void Model::for_each_param(const ParamFn& fn) const {
  ConstParamVisitor v;
  v.fn = &fn;
  ModelAccess::traverse(*this, v);
}

std::vector<std::string> Model::conv_bn_prefixes() const {
  ConvBnPrefixVisitor v;
  ModelAccess::traverse(*this, v);
  return std::move(v.prefixes);
}

WeightStore Model::to_store() const {
  WeightStore store;
  for_each_param([&](const std::string& name, const Tensor& t, ParamKind) { store.insert(name, t); });
  return store;
}

namespace {

class PrefixedObserver {
 public:
  explicit PrefixedObserver(BlockObserver* inner) : inner_(inner) {}
  void emit(std::string_view name, const Tensor& t) const {
    if (inner_) inner_->on_block(name, t);
  }

 private:
  BlockObserver* inner_;
};

}  // namespace

Tensor Model::forward(const Tensor& image, BlockObserver* observer) const {
  if (!loaded_) throw StateError("forward: model parameters are not loaded");
  expect_rank(image, 4, "forward");
  if (image.dim(0) != 1 || image.dim(1) != 3 || image.dim(2) != spec_.input_hw || image.dim(3) != spec_.input_hw) {
    throw ShapeError("forward: expected input [1,3," + std::to_string(spec_.input_hw) + "," +
                     std::to_string(spec_.input_hw) + "], got " + to_string(image.shape()));
  }
  const PrefixedObserver obs(observer);
  Tensor x = stem_forward(image, stem_);
  obs.emit("stem", x);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    x = sbcformer_block_forward(x, stages_[s], observer, "stage" + std::to_string(s + 1));
    if (s + 1 < stages_.size()) {
      x = embedding_forward(x, embeds_[s]);
      obs.emit("embed" + std::to_string(s + 1), x);
    }
  }
  Tensor logits = head_.forward(global_avg_pool(x));
  obs.emit("head", logits);
  return logits;
}

std::int64_t count_params(const Model& model) {
  std::int64_t n = 0;
  model.for_each_param([&](const std::string&, const Tensor& t, ParamKind kind) {
    if (is_learnable(kind)) n += t.numel();
  });
  return n;
}

std::int64_t count_norm_stats(const Model& model) {
  std::int64_t n = 0;
  model.for_each_param([&](const std::string&, const Tensor& t, ParamKind kind) {
    if (!is_learnable(kind)) n += t.numel();
  });
  return n;
}

// ---------------------------------------------------------------------------------------------
// Analytic costs

namespace {

struct CostBuilder {
  BlockCost cost;

  void conv(std::int64_t cin, std::int64_t cout, std::int64_t kernel, std::int64_t groups, std::int64_t out_pixels,
            bool bias, bool bn) {
    cost.params += cout * (cin / groups) * kernel * kernel + (bias ? cout : 0);
    cost.macs += conv_macs(cin, cout, kernel, groups, out_pixels, 1);
    if (bn) norm(cout);
  }
  void norm(std::int64_t c) {
    cost.params += 2 * c;
    cost.norm_stats += 2 * c;
  }
  void linear(std::int64_t din, std::int64_t dout, std::int64_t tokens) {
    cost.params += din * dout + dout;
    cost.macs += din * dout * tokens;
  }
  void invres(std::int64_t c, int expansion, std::int64_t pixels) {
    const std::int64_t e = c * expansion;
    conv(c, e, 1, 1, pixels, false, true);
    conv(e, e, 3, e, pixels, false, true);
    conv(e, c, 1, 1, pixels, false, true);
  }
};

}  // namespace

std::int64_t conv_macs(std::int64_t cin, std::int64_t cout, std::int64_t kernel, std::int64_t groups, std::int64_t out_h,
                       std::int64_t out_w) {
  return cout * (cin / groups) * kernel * kernel * out_h * out_w;
}

std::vector<BlockCost> block_costs(const VariantSpec& v, const AblationFlags& ablation) {
  v.validate();
  std::vector<BlockCost> out;
  auto push = [&](CostBuilder& b, std::string name) {
    b.cost.name = std::move(name);
    out.push_back(b.cost);
  };

  {
    CostBuilder b;
    std::int64_t cin = 3;
    for (int i = 0; i < 3; ++i) {
      const std::int64_t side = v.input_hw >> (i + 1);
      b.conv(cin, v.stem_width(i), 3, 1, side * side, false, true);
      cin = v.stem_width(i);
    }
    push(b, "stem");
  }

  const std::int64_t pooled = static_cast<std::int64_t>(v.pooled_size()) * v.pooled_size();
  for (int s = 0; s < 3; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const std::string p = "stage" + std::to_string(s + 1) + ".";
    const std::int64_t c = v.stage_dims[i];
    const std::int64_t pixels = static_cast<std::int64_t>(v.stage_resolution(s)) * v.stage_resolution(s);
    for (int k = 0; k < v.invres_counts[i]; ++k) {
      CostBuilder b;
      b.invres(c, v.expansion[i], pixels);
      push(b, p + "invres" + std::to_string(k));
    }
    {
      CostBuilder b;
      b.invres(c, v.expansion[i], pooled);
      b.invres(c, v.expansion[i], pooled);
      push(b, p + "mixer");
    }
    for (int k = 0; k < v.attention_counts[i]; ++k) {
      CostBuilder b;
      if (ablation.standard_attention) {
        b.norm(c);
        for (int proj = 0; proj < 4; ++proj) b.linear(c, c, pooled);
        b.cost.macs += 2 * pooled * pooled * c;
      } else {
        const std::int64_t width = c * v.attn_ratio;
        b.norm(c);
        b.conv(c, width, 1, 1, pooled, true, false);
        b.norm(width);
        b.conv(width, width, 3, width, pooled, true, false);
        b.cost.params += pooled;  // positional bias
        b.cost.macs += 2 * pooled * pooled * width;
        b.linear(width, c, pooled);
      }
      b.linear(c, c * v.ffn_ratio, pooled);
      b.linear(c * v.ffn_ratio, c, pooled);
      push(b, p + "mattn" + std::to_string(k));
    }
    {
      CostBuilder b;
      const std::int64_t f = v.convt_factor(s);
      b.cost.params += c * c * f * f + c;
      b.cost.macs += c * c * f * f * pooled;
      push(b, p + "convt");
    }
    {
      CostBuilder b;
      if (ablation.no_local_stream) {
        b.conv(c, c, 1, 1, pixels, false, true);
      } else {
        b.conv(c, c, 1, 1, pixels, false, true);
        b.conv(2 * c, c, 1, 1, pixels, false, true);
      }
      push(b, p + "fuse");
    }
    if (s < 2) {
      CostBuilder b;
      const std::int64_t next = v.stage_dims[i + 1];
      const std::int64_t side = v.stage_resolution(s + 1);
      b.conv(c, next, 3, 1, side * side, false, true);
      push(b, "embed" + std::to_string(s + 1));
    }
  }
  {
    CostBuilder b;
    b.linear(v.stage_dims[2], v.num_classes, 1);
    push(b, "head");
  }
  return out;
}

std::int64_t count_params(const VariantSpec& variant, const AblationFlags& ablation) {
  std::int64_t n = 0;
  for (const auto& b : block_costs(variant, ablation)) n += b.params;
  return n;
}

std::int64_t count_macs_exact(const VariantSpec& variant, const AblationFlags& ablation) {
  std::int64_t n = 0;
  for (const auto& b : block_costs(variant, ablation)) n += b.macs;
  return n;
}

double count_macs(const VariantSpec& variant, const AblationFlags& ablation) {
  return static_cast<double>(count_macs_exact(variant, ablation)) / 1e9;
}

AblationDelta apply_ablation(const VariantSpec& variant, const AblationFlags& ablation) {
  auto shapes = [&](const AblationFlags& flags) {
    std::map<std::string, Shape> out;
    Model::build(variant, flags, Init::empty()).for_each_param([&](const std::string& n, const Tensor& t, ParamKind) {
      out.emplace(n, t.shape());
    });
    return out;
  };
  AblationDelta d;
  if (!ablation.any()) return d;
  const auto full = shapes(AblationFlags{});
  const auto ablated = shapes(ablation);
  for (const auto& [name, shape] : full) {
    const auto it = ablated.find(name);
    if (it == ablated.end()) {
      d.removed.push_back(name);
    } else if (it->second != shape) {
      d.resized.push_back({name, shape, it->second});
    }
  }
  for (const auto& [name, shape] : ablated) {
    if (!full.count(name)) d.added.push_back(name);
  }
  return d;
}

}  // namespace sbc
