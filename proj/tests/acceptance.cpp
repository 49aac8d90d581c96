// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sbcformer/bench.hpp"
#include "sbcformer/blocks.hpp"
#include "sbcformer/kernels.hpp"
#include "sbcformer/model.hpp"
#include "sbcformer/parallel.hpp"
#include "sbcformer/weights.hpp"

using namespace sbc;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-14s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

const std::vector<std::string> kVariants{"XS", "S", "B", "L"};

double rel(double got, double want) { return got / want - 1.0; }

std::string pct(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * r);
  return buf;
}

void check_params() {
  const double targets[] = {5.6, 8.5, 13.8, 18.5};
  bool ok = true;
  std::ostringstream d;
  double prev = 0;
  for (std::size_t i = 0; i < kVariants.size(); ++i) {
    const double p = count_params(VariantSpec::named(kVariants[i]), {}) / 1e6;
    const double r = rel(p, targets[i]);
    ok = ok && std::fabs(r) <= 0.10 && p > prev;
    prev = p;
    d << kVariants[i] << ' ' << std::fixed;
    d.precision(2);
    d << p << "M (" << pct(r) << ") ";
  }
  const auto b = VariantSpec::named("B");
  const double full = count_params(b, {}) / 1e6;
  const double no_local = count_params(b, {true, false}) / 1e6;
  const double std_attn = count_params(b, {false, true}) / 1e6;
  ok = ok && std::fabs(rel(no_local, 13.6)) <= 0.10 && std::fabs(rel(std_attn, 12.8)) <= 0.10;
  ok = ok && std_attn < no_local && no_local < full;
  d << "| B no-local " << no_local << "M (" << pct(rel(no_local, 13.6)) << "), B std-attn " << std_attn << "M ("
    << pct(rel(std_attn, 12.8)) << ")";
  report(ok, "params", d.str());
}

void check_macs() {
  const double targets[] = {0.7, 0.9, 1.6, 2.7};
  bool ok = true;
  std::ostringstream d;
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < kVariants.size(); ++i) {
    const auto spec = VariantSpec::named(kVariants[i]);
    const auto exact = count_macs_exact(spec, {});
    const double g = count_macs(spec, {});
    const double r = rel(g, targets[i]);
    ok = ok && std::fabs(r) <= 0.15 && exact > prev;
    prev = exact;
    d << kVariants[i] << ' ' << std::fixed;
    d.precision(3);
    d << g << "G (" << pct(r) << ") ";
  }
  report(ok, "macs", d.str());
}

struct ShapeCheck : BlockObserver {
  const VariantSpec* spec = nullptr;
  bool ok = true;
  int stage_events = 0, attention_events = 0;
  std::string first_bad;
  void on_block(std::string_view name_view, const Tensor& t) override {
    const std::string name(name_view);
    if (name.rfind("stage", 0) != 0) return;
    const int s = name[5] - '1';
    const std::int64_t c = spec->stage_dims[static_cast<std::size_t>(s)];
    const bool global = name.find(".mixer") != std::string::npos || name.find(".mattn") != std::string::npos;
    const std::int64_t r = global ? 7 : 28 >> s;
    if (name.find(".mattn") != std::string::npos) ++attention_events;
    if (name.ends_with(".fuse")) ++stage_events;
    if (t.shape() != Shape{1, c, r, r}) {
      ok = false;
      if (first_bad.empty()) first_bad = name + " " + to_string(t.shape());
    }
  }
};

void check_shapes() {
  bool ok = true;
  std::ostringstream d;
  for (const auto& name : kVariants) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(1));
    ShapeCheck check;
    check.spec = &m.spec();
    const Tensor logits = m.forward(random_image(224, 1), &check);
    int expected_attn = 0;
    for (int n : m.spec().attention_counts) expected_attn += n;

    // Attention weights are 49 x 49 at every stage.
    bool maps_ok = true;
    for (int s = 0; s < 3; ++s) {
      const auto& p = std::get<MAttnParams>(m.stage(s).attention[0]);
      std::vector<Tensor> weights;
      const Tensor y = oracle::uniform({49, p.width()}, 2);
      mhsa(y, y, p, &weights);
      for (const auto& w : weights) maps_ok = maps_ok && w.shape() == Shape{49, 49};
    }
    const bool v_ok = check.ok && check.stage_events == 3 && check.attention_events == expected_attn &&
                      logits.shape() == Shape{1, 1000} && all_finite(logits) && maps_ok;
    ok = ok && v_ok;
    d << name << (v_ok ? " ok " : " bad(" + check.first_bad + ") ");
  }
  report(ok, "shapes", d.str() + "| stages 28/14/7, attention 7x7, logits [1,1000]");
}

void check_im2col() {
  std::mt19937 rng(97);
  auto pick = [&](std::initializer_list<int> xs) {
    std::uniform_int_distribution<std::size_t> d(0, xs.size() - 1);
    return *(xs.begin() + d(rng));
  };
  int configs = 0;
  float worst = 0;
  for (int trial = 0; configs < 64 && trial < 500; ++trial) {
    const int k = pick({1, 2, 3, 5}), stride = pick({1, 2, 3}), padding = pick({0, 1, 2});
    const int mode = pick({0, 1, 2});
    const int groups = mode == 0 ? 1 : mode == 1 ? pick({2, 4, 6}) : pick({2, 3});
    const int cin = mode == 1 ? groups : groups * pick({1, 2, 3});
    const int cout = mode == 1 ? cin : groups * pick({1, 2, 4});
    const int h = pick({3, 5, 7, 12, 14}), w = pick({4, 7, 9, 14});
    if (h + 2 * padding < k || w + 2 * padding < k) continue;
    const ConvSpec spec{k, k, stride, padding, groups};
    const Tensor x = oracle::uniform({1, cin, h, w}, 1000 + trial);
    const Tensor wt = oracle::uniform({cout, cin / groups, k, k}, 2000 + trial);
    const Tensor b = oracle::uniform({cout}, 3000 + trial);
    const Tensor ref = oracle::conv2d(x, wt, &b, spec);
    worst = std::max({worst, max_abs_diff(conv2d_im2col(x, wt, &b, spec), conv2d(x, wt, &b, spec)),
                      max_abs_diff(conv2d(x, wt, &b, spec), ref)});
    ++configs;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d random configs, max |im2col - direct| = %.2e (tol 1e-5)", configs, worst);
  report(configs >= 50 && worst <= 1e-5f, "im2col", buf);
}

void check_softmax() {
  double worst_sum = 0;
  float worst_shift = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = oracle::uniform({7 + trial % 5, 49}, 4000 + trial, -20.0f, 20.0f);
    const Tensor s = softmax_rows(m);
    for (std::int64_t i = 0; i < s.dim(0); ++i) {
      double sum = 0;
      for (std::int64_t j = 0; j < s.dim(1); ++j) sum += s.at(i, j);
      worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
    }
    Tensor shifted = m;
    for (std::int64_t i = 0; i < m.dim(0); ++i)
      for (std::int64_t j = 0; j < m.dim(1); ++j) shifted.at(i, j) += 3.0f * static_cast<float>(i) - 7.0f;
    worst_shift = std::max(worst_shift, max_abs_diff(softmax_rows(shifted), s));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max |row sum - 1| = %.2e, max shift change = %.2e (tol 1e-6)", worst_sum, worst_shift);
  report(worst_sum <= 1e-6 && worst_shift <= 1e-6f, "softmax", buf);
}

void check_bn_fold() {
  float worst = 0;
  for (const auto& name : kVariants) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(21, true));
    const Model folded = Model::from_store(m.spec(), {}, fold_batchnorm(m.to_store(), m));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Tensor x = random_image(224, 500 + seed);
      worst = std::max(worst, max_abs_diff(m.forward(x), folded.forward(x)));
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "4 variants x 10 inputs, max logit diff = %.2e (tol 1e-5)", worst);
  report(worst <= 1e-5f, "bn-fold", buf);
}

void zero_conv(ConvBn& c) {
  c.weight = Tensor(c.weight.shape());
  if (c.bias) c.bias = Tensor(c.bias->shape());
  if (c.bn) c.bn = BatchNorm::identity(c.out_channels());
}

void zero_linear(LinearParams& l) {
  l.weight = Tensor(l.weight.shape());
  if (l.bias) l.bias = Tensor(l.bias->shape());
}

void check_zero_branch() {
  int cases = 0, exact = 0;
  for (const auto& name : kVariants) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(31, true));
    for (int s = 0; s < 3; ++s) {
      const StageParams& st = m.stage(s);
      const auto c = m.spec().stage_dims[static_cast<std::size_t>(s)];
      const auto r = m.spec().stage_resolution(s);
      const Tensor x = oracle::uniform({1, c, r, r}, 40 + s);
      const Tensor pooled = oracle::uniform({1, c, 7, 7}, 50 + s);

      InvResParams ir = st.invres[0];
      zero_conv(ir.project);
      ++cases;
      exact += invres_forward(x, ir) == x;

      MixerParams mx = st.mixer;
      for (auto& b : mx.blocks) zero_conv(b.project);
      ++cases;
      exact += mixer_forward(pooled, mx) == pooled;

      MAttnParams at = std::get<MAttnParams>(st.attention[0]);
      zero_linear(at.out);
      zero_linear(at.ffn_out);
      ++cases;
      exact += mattn_forward(pooled, at) == pooled;

      MAttnParams vb = std::get<MAttnParams>(st.attention[0]);
      zero_conv(vb.value_dw);
      const Tensor y = oracle::uniform({1, vb.width(), 7, 7}, 60 + s);
      ++cases;
      exact += value_branch(y, vb) == y;
    }
  }
  report(exact == cases, "zero-branch",
         std::to_string(exact) + "/" + std::to_string(cases) + " residual identities bitwise exact");
}

void check_latency() {
  std::vector<double> means;
  std::ostringstream d;
  d.setf(std::ios::fixed);
  d.precision(1);
  int runs = 0, warmup = 0;
  for (const auto& name : kVariants) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(1));
    const LatencyReport r = measure_latency(m);
    runs = r.runs;
    warmup = r.warmup;
    means.push_back(r.mean_ms);
    d << name << ' ' << r.mean_ms << "ms ";
  }
  bool ordered = true;
  for (std::size_t i = 1; i < means.size(); ++i) ordered = ordered && means[i - 1] < means[i];
  d << "| runs " << runs << ", warmup " << warmup << ", threads " << parallel::num_threads();
  report(ordered && runs == 300 && warmup == 20, "latency", d.str());
}

void check_determinism() {
  const bool was = parallel::deterministic();
  parallel::set_deterministic(true);
  bool ok = true;
  for (const auto& name : kVariants) {
    const Model m = Model::build(VariantSpec::named(name), {}, Init::random(5, true));
    const Tensor x = random_image(224, 9);
    const Tensor first = m.forward(x);
    for (int i = 1; i < 10; ++i) ok = ok && bitwise_equal(m.forward(x), first);
  }
  parallel::set_deterministic(was);
  report(ok, "determinism", "4 variants x 10 deterministic forwards bitwise identical");
}

}  // namespace

int main() {
  check_params();
  check_macs();
  check_shapes();
  check_im2col();
  check_softmax();
  check_bn_fold();
  check_zero_branch();
  check_latency();
  check_determinism();
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
