#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sbcformer/model.hpp"

namespace sbc {

struct HostInfo {
  std::string cpu;
  std::string os;

  static HostInfo current();
  bool operator==(const HostInfo&) const = default;
};

struct BlockTiming {
  std::string name;
  double mean_ms = 0;
  std::int64_t macs = 0;
  std::int64_t params = 0;

  bool operator==(const BlockTiming&) const = default;
};

struct LatencyReport {
  std::string variant;
  int runs = 0;
  int warmup = 0;
  int threads = 0;
  double mean_ms = 0, p50_ms = 0, p95_ms = 0, min_ms = 0;
  HostInfo host;
  std::vector<BlockTiming> blocks;

  bool operator==(const LatencyReport&) const = default;
};

struct BenchOptions {
  int runs = 300;
  int warmup = 20;
  int threads = 0;  // 0: host logical cores
  std::uint64_t input_seed = 0;
};

/// Standard-normal [1,3,hw,hw] tensor from a seeded generator; the fixed benchmark and fixture input.
Tensor random_image(int hw, std::uint64_t seed);

/// Times `runs` batch-1 forward passes on one fixed input after `warmup` untimed passes. Only the forward call
/// is timed. Per-block means come from the observer boundaries of the same timed passes.
LatencyReport measure_latency(const Model& model, const BenchOptions& options = {});

/// Interpolated percentile (0..100) of unsorted samples.
double percentile(std::vector<double> samples, double pct);

struct MacReport {
  std::string variant;
  std::vector<BlockCost> blocks;
  std::int64_t total_macs = 0;
  std::int64_t total_params = 0;
  std::int64_t total_norm_stats = 0;
};

MacReport mac_report(const VariantSpec& variant, const AblationFlags& ablation);

struct BlockProfile {
  MacReport costs;
  std::vector<BlockTiming> blocks;  // in event order, costs joined by name (zero when unknown)
  double total_ms = 0;              // end-to-end wall time per pass
};

/// Runs `pass` (which must emit block events to the observer it receives) `runs` times and attributes the
/// time between consecutive events to the later event's block.
BlockProfile profile_blocks(const std::function<void(BlockObserver*)>& pass, const std::vector<BlockCost>& costs,
                            int runs = 1);
BlockProfile profile_blocks(const Model& model, const Tensor& input, int runs = 1);

enum class ReportFormat { kJson, kCsv };
ReportFormat parse_report_format(const std::string& name);

std::string report_to_json(const LatencyReport& report);
/// DataError on malformed input or missing keys.
LatencyReport report_from_json(const std::string& text);
/// One row per block plus a `total` row.
std::string report_to_csv(const LatencyReport& report);

std::string format_report(const LatencyReport& report, ReportFormat format);
void emit_report(const LatencyReport& report, const std::filesystem::path& path, ReportFormat format);

}  // namespace sbc
