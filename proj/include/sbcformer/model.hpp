#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sbcformer/blocks.hpp"
#include "sbcformer/tensor.hpp"
#include "sbcformer/weight_store.hpp"

namespace sbc {

/// Structural configuration of one network variant.
///
/// Stage widths and block counts come from the published variant table. The remaining knobs
/// (expansion, ffn_ratio, attn_ratio, stem_divisors) are not published; their defaults are the
/// result of the calibration sweep in calibration.hpp and are documented in CALIBRATION.md.
struct VariantSpec {
  std::string name;
  std::array<int, 3> stage_dims{};
  std::array<int, 3> invres_counts{2, 2, 1};
  std::array<int, 3> attention_counts{};
  std::array<int, 3> mixer_counts{1, 1, 1};
  std::array<int, 3> expansion{4, 2, 2};   // InvRes expansion per stage (Mixer included)
  int ffn_ratio = 2;
  int head_dim = 32;
  int attn_ratio = 3;                      // shared point-wise conv width = attn_ratio * C
  std::array<int, 3> stem_divisors{2, 1, 1};  // stem conv i outputs stage_dims[0] / stem_divisors[i]
  int num_classes = 1000;
  int input_hw = 224;
  BiasMode bias_mode = BiasMode::kPerKey;

  /// XS, S, B or L; ConfigError otherwise.
  static VariantSpec named(const std::string& name);
  static std::vector<std::string> names() { return {"XS", "S", "B", "L"}; }

  /// ConfigError naming the first violating field.
  void validate() const;

  /// Side of the pooled attention map (input_hw / 32).
  int pooled_size() const { return input_hw / 32; }
  /// Feature map side of stage s (0-based): input_hw / 8, / 16, / 32.
  int stage_resolution(int s) const { return input_hw >> (3 + s); }
  /// ConvT up-sampling factor of stage s: 4, 2, 1.
  int convt_factor(int s) const { return 4 >> s; }
  int stem_width(int i) const { return stage_dims[0] / stem_divisors[static_cast<std::size_t>(i)]; }
};

struct AblationFlags {
  bool no_local_stream = false;
  bool standard_attention = false;

  bool any() const { return no_local_stream || standard_attention; }
  std::string label() const;
};

struct Init {
  enum class Kind { kRandom, kEmpty };
  Kind kind = Kind::kEmpty;
  std::uint64_t seed = 0;
  /// Draw non-trivial BN statistics/affine terms and positional biases instead of the identity defaults.
  /// Only useful for tests and fixtures where identity BN would hide folding or bias bugs.
  bool perturb = false;

  static Init random(std::uint64_t seed, bool perturb = false) { return {Kind::kRandom, seed, perturb}; }
  static Init empty() { return {}; }
};

enum class ParamKind { kWeight, kBias, kNormAffine, kNormStat, kPosBias };

/// Learnable parameters exclude BN running statistics.
inline bool is_learnable(ParamKind kind) { return kind != ParamKind::kNormStat; }

using ParamFn = std::function<void(const std::string& name, const Tensor& value, ParamKind kind)>;

/// Assembled network with named parameters. Immutable once built or loaded.
class Model {
 public:
  /// Builds every parameter for `variant` with `ablation` applied. Random init is seeded
  /// (truncated normal, sigma 0.02, for conv/linear weights; zero biases; identity BN).
  static Model build(const VariantSpec& variant, const AblationFlags& ablation, const Init& init);

  /// Builds the structure and binds every tensor from `store`. Conv units whose `.bn.*` entries are
  /// missing but which carry a `.b` bias are bound in folded form. ConfigError lists unbound or
  /// unexpected names and shape mismatches.
  static Model from_store(const VariantSpec& variant, const AblationFlags& ablation, const WeightStore& store);

  const VariantSpec& spec() const noexcept { return spec_; }
  const AblationFlags& ablation() const noexcept { return ablation_; }
  bool loaded() const noexcept { return loaded_; }

  const StemParams& stem() const noexcept { return stem_; }
  const StageParams& stage(int s) const { return stages_.at(static_cast<std::size_t>(s)); }
  const ConvBn& embed(int i) const { return embeds_.at(static_cast<std::size_t>(i)); }
  const LinearParams& head() const noexcept { return head_; }

  /// Visits every parameter tensor in naming-contract order.
  void for_each_param(const ParamFn& fn) const;

  /// Prefixes of conv units followed by BN (the foldable pairs), e.g. "stage1.invres0.expand".
  std::vector<std::string> conv_bn_prefixes() const;

  WeightStore to_store() const;

  /// [1,3,H,W] -> [1,num_classes]. StateError before weights are loaded. The observer sees
  /// `stem`, `stage{s}.invres{k}`, `stage{s}.mixer`, `stage{s}.mattn{k}`, `stage{s}.convt`,
  /// `stage{s}.fuse`, `embed{i}` and `head`.
  Tensor forward(const Tensor& image, BlockObserver* observer = nullptr) const;

 private:
  friend class ModelAccess;

  VariantSpec spec_;
  AblationFlags ablation_;
  StemParams stem_;
  std::array<StageParams, 3> stages_;
  std::array<ConvBn, 2> embeds_;
  LinearParams head_;
  bool loaded_ = false;
};

/// Learnable parameter count (weights, biases, BN affine, positional biases).
std::int64_t count_params(const Model& model);
/// BN running statistics (mean and var), reported separately.
std::int64_t count_norm_stats(const Model& model);

/// Analytic cost of one named block boundary; names match the forward observer events.
struct BlockCost {
  std::string name;
  std::int64_t macs = 0;
  std::int64_t params = 0;
  std::int64_t norm_stats = 0;
};

/// Per-block costs in execution order, computed from the structure alone.
std::vector<BlockCost> block_costs(const VariantSpec& variant, const AblationFlags& ablation);

/// Analytic learnable parameter count; equals count_params(build(variant, ablation, any init)).
std::int64_t count_params(const VariantSpec& variant, const AblationFlags& ablation);

/// Cout * Cin/groups * k * k * out_h * out_w.
std::int64_t conv_macs(std::int64_t cin, std::int64_t cout, std::int64_t kernel, std::int64_t groups, std::int64_t out_h,
                       std::int64_t out_w);

/// Multiply-accumulates for one forward pass at the variant's input size.
std::int64_t count_macs_exact(const VariantSpec& variant, const AblationFlags& ablation);
/// Same, in billions.
double count_macs(const VariantSpec& variant, const AblationFlags& ablation);

/// Describes what an ablation changes, stage by stage. Both flags false means no change.
struct AblationDelta {
  struct Resized {
    std::string name;
    Shape full, ablated;
  };
  std::vector<std::string> removed;  // parameter names present in the full model only
  std::vector<std::string> added;    // parameter names present in the ablated model only
  std::vector<Resized> resized;      // same name, different shape

  bool empty() const { return removed.empty() && added.empty() && resized.empty(); }
};
AblationDelta apply_ablation(const VariantSpec& variant, const AblationFlags& ablation);

}  // namespace sbc
