#include "sbcformer/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "sbcformer/error.hpp"

namespace sbc::calibration {

namespace {

std::string percent(double dev) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", dev * 100.0);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

VariantSpec Point::apply(VariantSpec spec) const {
  spec.expansion = expansion;
  spec.ffn_ratio = ffn_ratio;
  spec.attn_ratio = attn_ratio;
  spec.stem_divisors = stem_divisors;
  spec.head_dim = head_dim;
  return spec;
}

std::string Point::label() const {
  std::ostringstream os;
  os << "e=(" << expansion[0] << ',' << expansion[1] << ',' << expansion[2] << ") r=" << ffn_ratio
     << " a=" << attn_ratio << " stem=(C/" << stem_divisors[0] << ",C/" << stem_divisors[1] << ",C/"
     << stem_divisors[2] << ") d=" << head_dim;
  return os.str();
}

Result evaluate(const Point& point, const Targets& t) {
  Result r;
  r.point = point;
  const auto names = VariantSpec::names();
  try {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const VariantSpec v = point.apply(VariantSpec::named(names[i]));
      Row row;
      row.name = names[i];
      row.params_m = static_cast<double>(count_params(v, {})) / 1e6;
      row.gmacs = count_macs(v, {});
      row.target_params_m = t.params_m[i];
      row.target_gmacs = t.gmacs[i];
      r.rows.push_back(row);
    }
    const VariantSpec b = point.apply(VariantSpec::named("B"));
    const AblationFlags no_local{true, false}, std_attn{false, true};
    r.rows.push_back({"B no-local", static_cast<double>(count_params(b, no_local)) / 1e6, t.b_no_local_params_m,
                      count_macs(b, no_local), 0.0});
    r.rows.push_back({"B std-attn", static_cast<double>(count_params(b, std_attn)) / 1e6, t.b_std_attn_params_m,
                      count_macs(b, std_attn), 0.0});
  } catch (const ConfigError& e) {
    r.violations.push_back(std::string("invalid configuration: ") + e.what());
    r.param_score = r.mac_score = INFINITY;
    return r;
  }

  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const Row& row = r.rows[i];
    if (std::fabs(row.param_dev()) > t.param_tolerance) {
      r.violations.push_back(row.name + " params " + percent(row.param_dev()));
    }
    if (row.target_gmacs > 0 && std::fabs(row.mac_dev()) > t.mac_tolerance) {
      r.violations.push_back(row.name + " GMACs " + percent(row.mac_dev()));
    }
    if (i < 4) {
      r.param_score += std::fabs(row.param_dev());
      r.mac_score += std::fabs(row.mac_dev());
    }
    if (i > 0 && i < 4) {
      if (!(row.params_m > r.rows[i - 1].params_m)) r.violations.push_back("params not increasing at " + row.name);
      if (!(row.gmacs > r.rows[i - 1].gmacs)) r.violations.push_back("GMACs not increasing at " + row.name);
    }
  }
  const double full = r.rows[2].params_m, no_local = r.rows[4].params_m, std_attn = r.rows[5].params_m;
  if (!(std_attn < no_local && no_local < full)) {
    r.violations.push_back("ablation ordering std-attn < no-local < full broken");
  }
  return r;
}

std::vector<Result> sweep(const Grid& grid, const Targets& targets) {
  std::vector<Result> out;
  for (int e0 : grid.expansion) {
    for (int e1 : grid.expansion) {
      for (int e2 : grid.expansion) {
        for (int r : grid.ffn_ratio) {
          for (int a : grid.attn_ratio) {
            for (const auto& stem : grid.stem_divisors) {
              for (int d : grid.head_dim) {
                out.push_back(evaluate({{e0, e1, e2}, r, a, stem, d}, targets));
              }
            }
          }
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Result& x, const Result& y) {
    if (x.feasible() != y.feasible()) return x.feasible();
    if (x.param_score != y.param_score) return x.param_score < y.param_score;
    if (x.mac_score != y.mac_score) return x.mac_score < y.mac_score;
    return (x.point.head_dim == 32) > (y.point.head_dim == 32);
  });
  return out;
}

Point shipped_defaults() {
  const VariantSpec v;
  return {v.expansion, v.ffn_ratio, v.attn_ratio, v.stem_divisors, v.head_dim};
}

std::string render_markdown(const std::vector<Result>& ranked, std::size_t top_n) {
  std::ostringstream os;
  const auto feasible = std::count_if(ranked.begin(), ranked.end(), [](const Result& r) { return r.feasible(); });
  os << "# Calibration\n\n";
  os << "Generated by `sbc_calibrate`. Stage widths and block counts are fixed by the published variant table;\n"
        "the sweep varies the knobs that were never published and scores every grid point against the\n"
        "published parameter and MAC counts.\n\n";
  os << "Grid: InvRes expansion per stage in {2,3,4,6}, FFN ratio in {2,3,4}, attention width ratio in {1..4},\n"
        "stem widths in {(C/4,C/2,C), (C/2,C,C), (C/2,C/2,C)}, head dim in {16,32}.\n\n";
  os << "A point is feasible when XS/S/B/L params are within 10% and GMACs within 15% of the targets, both\n"
        "counts increase strictly from XS to L, the two B ablations are within 10% of their targets, and\n"
        "std-attn < no-local < full holds for B. Feasible points rank by summed absolute parameter deviation,\n"
        "then MAC deviation. Head dim affects neither count, so 32 wins ties.\n\n";
  os << "Points evaluated: " << ranked.size() << ", feasible: " << feasible << ".\n\n";
  if (ranked.empty()) return os.str();

  const Result& best = ranked.front();
  os << "## Selected: `" << best.point.label() << "`" << (best.feasible() ? "" : " (infeasible)") << "\n\n";
  os << "| model | params (M) | target | dev | GMACs | target | dev |\n";
  os << "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const Row& row : best.rows) {
    os << "| " << row.name << " | " << fixed(row.params_m, 2) << " | " << fixed(row.target_params_m, 1) << " | "
       << percent(row.param_dev()) << " | " << fixed(row.gmacs, 3) << " | "
       << (row.target_gmacs > 0 ? fixed(row.target_gmacs, 1) : "-") << " | "
       << (row.target_gmacs > 0 ? percent(row.mac_dev()) : "-") << " |\n";
  }
  if (!best.feasible()) {
    os << "\nViolations:\n";
    for (const auto& v : best.violations) os << "- " << v << "\n";
  }

  os << "\n## Ranking (top " << std::min(top_n, ranked.size()) << ")\n\n";
  os << "| # | point | feasible | param score | MAC score | XS | S | B | L | first violation |\n";
  os << "|---:|---|---|---:|---:|---:|---:|---:|---:|---|\n";
  for (std::size_t i = 0; i < ranked.size() && i < top_n; ++i) {
    const Result& r = ranked[i];
    os << "| " << i + 1 << " | `" << r.point.label() << "` | " << (r.feasible() ? "yes" : "no") << " | "
       << fixed(r.param_score, 3) << " | " << fixed(r.mac_score, 3);
    for (std::size_t v = 0; v < 4; ++v) {
      os << " | " << (v < r.rows.size() ? fixed(r.rows[v].params_m, 2) + "M" : std::string("-"));
    }
    os << " | " << (r.violations.empty() ? "" : r.violations.front()) << " |\n";
  }
  return os.str();
}

}  // namespace sbc::calibration
