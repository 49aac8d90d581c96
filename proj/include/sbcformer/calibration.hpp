#pragma once

#include <array>
#include <string>
#include <vector>

#include "sbcformer/model.hpp"

namespace sbc::calibration {

/// Published structural targets.
struct Targets {
  std::array<double, 4> params_m{5.6, 8.5, 13.8, 18.5};  // XS, S, B, L
  std::array<double, 4> gmacs{0.7, 0.9, 1.6, 2.7};
  double b_no_local_params_m = 13.6;
  double b_std_attn_params_m = 12.8;
  double param_tolerance = 0.10;
  double mac_tolerance = 0.15;
};

/// The structural knobs the sweep varies. head_dim changes neither count and only breaks ties.
struct Point {
  std::array<int, 3> expansion{};
  int ffn_ratio = 2;
  int attn_ratio = 1;
  std::array<int, 3> stem_divisors{};
  int head_dim = 32;

  VariantSpec apply(VariantSpec spec) const;
  std::string label() const;
  bool operator==(const Point&) const = default;
};

struct Row {
  std::string name;  // XS, S, B, L, B no-local, B std-attn
  double params_m = 0, target_params_m = 0;
  double gmacs = 0, target_gmacs = 0;  // target 0: not published

  double param_dev() const { return params_m / target_params_m - 1.0; }
  double mac_dev() const { return target_gmacs > 0 ? gmacs / target_gmacs - 1.0 : 0.0; }
};

struct Result {
  Point point;
  std::vector<Row> rows;
  double param_score = 0;  // summed |relative deviation| over XS/S/B/L
  double mac_score = 0;
  std::vector<std::string> violations;

  bool feasible() const { return violations.empty(); }
};

struct Grid {
  std::vector<int> expansion{2, 3, 4, 6};
  std::vector<int> ffn_ratio{2, 3, 4};
  std::vector<int> attn_ratio{1, 2, 3, 4};
  std::vector<int> head_dim{16, 32};
  std::vector<std::array<int, 3>> stem_divisors{{4, 2, 1}, {2, 1, 1}, {2, 2, 1}};
};

Result evaluate(const Point& point, const Targets& targets = {});

/// Every grid point (expansion varies per stage), best first: feasible points before infeasible ones, then by
/// param_score, mac_score, and head_dim 32 before others.
std::vector<Result> sweep(const Grid& grid = {}, const Targets& targets = {});

/// The knobs VariantSpec ships with.
Point shipped_defaults();

std::string render_markdown(const std::vector<Result>& ranked, std::size_t top_n = 10);

}  // namespace sbc::calibration
