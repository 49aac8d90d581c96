#include "sbcformer/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sbcformer/error.hpp"
#include "sbcformer/parallel.hpp"

namespace sbc {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

/// Accumulates the time between consecutive block events.
class BlockTimer : public BlockObserver {
 public:
  void start() {
    last_ = Clock::now();
    index_ = 0;
  }

  void on_block(std::string_view name, const Tensor&) override {
    const auto now = Clock::now();
    if (index_ == totals_.size()) {
      names_.emplace_back(name);
      totals_.push_back(0.0);
    }
    totals_[index_++] += ms_between(last_, now);
    last_ = now;
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& totals() const { return totals_; }

 private:
  Clock::time_point last_;
  std::size_t index_ = 0;
  std::vector<std::string> names_;
  std::vector<double> totals_;
};

/// Restores the kernel thread count on scope exit.
class ThreadScope {
 public:
  explicit ThreadScope(int threads) : saved_(parallel::requested_threads()) {
    if (threads > 0) parallel::set_num_threads(threads);
  }
  ~ThreadScope() { parallel::set_num_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_;
};

std::vector<BlockTiming> join_costs(const BlockTimer& timer, const std::vector<BlockCost>& costs, int runs) {
  std::map<std::string, const BlockCost*> by_name;
  for (const auto& c : costs) by_name[c.name] = &c;
  std::vector<BlockTiming> out;
  for (std::size_t i = 0; i < timer.names().size(); ++i) {
    BlockTiming b;
    b.name = timer.names()[i];
    b.mean_ms = runs > 0 ? timer.totals()[i] / runs : 0.0;
    if (const auto it = by_name.find(b.name); it != by_name.end()) {
      b.macs = it->second->macs;
      b.params = it->second->params;
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  const auto last = s.find_last_not_of(" \t\r\n");
  return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
}

}  // namespace

Tensor random_image(int hw, std::uint64_t seed) {
  Tensor x({1, 3, hw, hw});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (float& v : x.values()) v = dist(rng);
  return x;
}

HostInfo HostInfo::current() {
  HostInfo h;
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      h.cpu = trim(line.substr(line.find(':') + 1));
      break;
    }
  }
  if (h.cpu.empty()) h.cpu = "unknown";
  utsname u{};
  h.os = uname(&u) == 0 ? std::string(u.sysname) + " " + u.release + " " + u.machine : "unknown";
  return h;
}

double percentile(std::vector<double> samples, double pct) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double rank = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, samples.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return samples[lo] + (samples[hi] - samples[lo]) * frac;
}

LatencyReport measure_latency(const Model& model, const BenchOptions& options) {
  if (options.runs < 1) throw ConfigError("measure_latency: runs must be >= 1");
  if (options.warmup < 0) throw ConfigError("measure_latency: warmup must be >= 0");
  ThreadScope scope(options.threads > 0 ? options.threads : parallel::hardware_threads());

  const Tensor input = random_image(model.spec().input_hw, options.input_seed);
  for (int i = 0; i < options.warmup; ++i) model.forward(input);

  BlockTimer timer;
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(options.runs));
  for (int i = 0; i < options.runs; ++i) {
    timer.start();
    const auto t0 = Clock::now();
    model.forward(input, &timer);
    samples.push_back(ms_between(t0, Clock::now()));
  }

  LatencyReport r;
  r.variant = model.spec().name;
  if (model.ablation().any()) r.variant += "+" + model.ablation().label();
  r.runs = options.runs;
  r.warmup = options.warmup;
  r.threads = parallel::num_threads();
  double sum = 0;
  for (double s : samples) sum += s;
  r.mean_ms = sum / static_cast<double>(samples.size());
  r.min_ms = *std::min_element(samples.begin(), samples.end());
  r.p50_ms = percentile(samples, 50);
  r.p95_ms = percentile(samples, 95);
  r.host = HostInfo::current();
  r.blocks = join_costs(timer, block_costs(model.spec(), model.ablation()), options.runs);
  return r;
}

MacReport mac_report(const VariantSpec& variant, const AblationFlags& ablation) {
  MacReport r;
  r.variant = variant.name;
  r.blocks = block_costs(variant, ablation);
  for (const auto& b : r.blocks) {
    r.total_macs += b.macs;
    r.total_params += b.params;
    r.total_norm_stats += b.norm_stats;
  }
  return r;
}

BlockProfile profile_blocks(const std::function<void(BlockObserver*)>& pass, const std::vector<BlockCost>& costs,
                            int runs) {
  if (runs < 1) throw ConfigError("profile_blocks: runs must be >= 1");
  BlockTimer timer;
  double total = 0;
  for (int i = 0; i < runs; ++i) {
    timer.start();
    const auto t0 = Clock::now();
    pass(&timer);
    total += ms_between(t0, Clock::now());
  }
  BlockProfile p;
  p.costs.blocks = costs;
  for (const auto& b : costs) {
    p.costs.total_macs += b.macs;
    p.costs.total_params += b.params;
    p.costs.total_norm_stats += b.norm_stats;
  }
  p.blocks = join_costs(timer, costs, runs);
  p.total_ms = total / runs;
  return p;
}

BlockProfile profile_blocks(const Model& model, const Tensor& input, int runs) {
  BlockProfile p = profile_blocks([&](BlockObserver* obs) { model.forward(input, obs); },
                                  block_costs(model.spec(), model.ablation()), runs);
  p.costs.variant = model.spec().name;
  return p;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw ConfigError("unknown report format '" + name + "' (expected json or csv)");
}

std::string report_to_json(const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["runs"] = r.runs;
  j["warmup"] = r.warmup;
  j["threads"] = r.threads;
  j["mean_ms"] = r.mean_ms;
  j["p50_ms"] = r.p50_ms;
  j["p95_ms"] = r.p95_ms;
  j["min_ms"] = r.min_ms;
  j["host"] = {{"cpu", r.host.cpu}, {"os", r.host.os}};
  j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : r.blocks) {
    j["blocks"].push_back({{"name", b.name}, {"mean_ms", b.mean_ms}, {"macs", b.macs}, {"params", b.params}});
  }
  return j.dump(2) + "\n";
}

LatencyReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LatencyReport r;
    r.variant = j.at("variant").get<std::string>();
    r.runs = j.at("runs").get<int>();
    r.warmup = j.at("warmup").get<int>();
    r.threads = j.at("threads").get<int>();
    r.mean_ms = j.at("mean_ms").get<double>();
    r.p50_ms = j.at("p50_ms").get<double>();
    r.p95_ms = j.at("p95_ms").get<double>();
    r.min_ms = j.at("min_ms").get<double>();
    r.host.cpu = j.at("host").at("cpu").get<std::string>();
    r.host.os = j.at("host").at("os").get<std::string>();
    for (const auto& b : j.at("blocks")) {
      r.blocks.push_back({b.at("name").get<std::string>(), b.at("mean_ms").get<double>(),
                          b.at("macs").get<std::int64_t>(), b.at("params").get<std::int64_t>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("latency report: ") + e.what());
  }
}

std::string report_to_csv(const LatencyReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "name,mean_ms,macs,params\n";
  std::int64_t macs = 0, params = 0;
  for (const auto& b : r.blocks) {
    os << b.name << ',' << b.mean_ms << ',' << b.macs << ',' << b.params << '\n';
    macs += b.macs;
    params += b.params;
  }
  os << "total," << r.mean_ms << ',' << macs << ',' << params << '\n';
  return os.str();
}

std::string format_report(const LatencyReport& report, ReportFormat format) {
  return format == ReportFormat::kJson ? report_to_json(report) : report_to_csv(report);
}

void emit_report(const LatencyReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << format_report(report, format);
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace sbc
