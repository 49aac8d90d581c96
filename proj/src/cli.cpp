#include "sbcformer/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbcformer/bench.hpp"
#include "sbcformer/error.hpp"
#include "sbcformer/model.hpp"
#include "sbcformer/parallel.hpp"
#include "sbcformer/preprocess.hpp"
#include "sbcformer/weights.hpp"

namespace sbc::cli {

namespace {

struct ModelOptions {
  std::string model;
  std::string weights;
  std::string ablate = "none";
  std::uint64_t seed = 0;
  bool fold_bn = false;
};

struct RuntimeOptions {
  int threads = 0;
  bool deterministic = false;
};

void add_model_options(CLI::App& cmd, ModelOptions& o, bool with_weights = true) {
  cmd.add_option("--model", o.model, "Variant")->check(CLI::IsMember(VariantSpec::names()));
  if (with_weights) {
    cmd.add_option("--weights", o.weights, "SBCW weight file (seeded random weights when omitted)");
    cmd.add_flag("--fold-bn", o.fold_bn, "Fold batch norm into the preceding convs at load time");
  }
  cmd.add_option("--ablate", o.ablate, "Ablation")->check(CLI::IsMember({"none", "no-local", "std-attn"}));
  cmd.add_option("--seed", o.seed, "Seed for random weights");
}

void add_runtime_options(CLI::App& cmd, RuntimeOptions& o) {
  cmd.add_option("--threads", o.threads, "Kernel threads (default: logical cores)")->check(CLI::NonNegativeNumber);
  cmd.add_flag("--deterministic", o.deterministic, "Single-threaded, bitwise-reproducible kernels");
}

void apply_runtime(const RuntimeOptions& o) {
  if (o.threads > 0) parallel::set_num_threads(o.threads);
  parallel::set_deterministic(o.deterministic);
}

AblationFlags parse_ablation(const std::string& name) {
  AblationFlags f;
  if (name == "no-local") f.no_local_stream = true;
  if (name == "std-attn") f.standard_attention = true;
  return f;
}

/// Thrown for missing required inputs that CLI11 cannot express; maps to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Model load_model(const ModelOptions& o, std::ostream& err) {
  AblationFlags ablation = parse_ablation(o.ablate);
  if (o.weights.empty()) {
    if (o.model.empty()) throw UsageError("--model is required without --weights");
    const VariantSpec spec = VariantSpec::named(o.model);
    Model m = Model::build(spec, ablation, Init::random(o.seed));
    if (!o.fold_bn) return m;
    return Model::from_store(spec, ablation, fold_batchnorm(m.to_store(), m));
  }
  WeightStore store = load(o.weights);
  VariantSpec spec;
  if (o.model.empty()) {
    const InferredStructure inferred = infer_structure(store);
    spec = inferred.spec;
    if (o.ablate == "none") ablation = inferred.ablation;
    err << "weights look like variant " << spec.name << " (ablation " << ablation.label() << ")\n";
  } else {
    spec = VariantSpec::named(o.model);
  }
  if (o.fold_bn) store = fold_batchnorm(store, Model::build(spec, ablation, Init::empty()));
  return Model::from_store(spec, ablation, store);
}

std::vector<std::string> read_labels(const std::string& path) {
  std::vector<std::string> labels;
  if (path.empty()) return labels;
  std::ifstream f(path);
  if (!f) throw IoError("cannot open labels file " + path);
  for (std::string line; std::getline(f, line);) labels.push_back(line);
  return labels;
}

class Recorder : public BlockObserver {
 public:
  void on_block(std::string_view name, const Tensor& activation) override {
    layers.emplace_back(std::string(name), activation);
  }
  std::vector<std::pair<std::string, Tensor>> layers;
};

// ---------------------------------------------------------------------------------------------

struct ClassifyArgs {
  ModelOptions model;
  RuntimeOptions runtime;
  std::string image;
  std::string labels;
  int top = 5;
  PreprocessSpec pre;
  std::vector<float> mean, std;
};

int classify(const ClassifyArgs& a, std::ostream& out, std::ostream& err) {
  apply_runtime(a.runtime);
  PreprocessSpec pre = a.pre;
  if (!a.mean.empty()) std::copy(a.mean.begin(), a.mean.end(), pre.mean.begin());
  if (!a.std.empty()) std::copy(a.std.begin(), a.std.end(), pre.std.begin());
  const Model model = load_model(a.model, err);
  if (a.model.weights.empty()) err << "warning: no --weights given, using random weights (seed " << a.model.seed << ")\n";
  pre.center_crop = model.spec().input_hw;
  const Tensor input = preprocess_image(a.image, pre);
  const Tensor logits = model.forward(input);

  Tensor probs = logits;
  softmax_rows_inplace(probs);
  std::vector<int> order(static_cast<std::size_t>(probs.numel()));
  std::iota(order.begin(), order.end(), 0);
  const int k = std::min<int>(a.top, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int x, int y) { return probs[x] > probs[y] || (probs[x] == probs[y] && x < y); });
  const auto labels = read_labels(a.labels);
  out << "rank\tclass\tprob\tlabel\n";
  for (int i = 0; i < k; ++i) {
    const int c = order[static_cast<std::size_t>(i)];
    out << i + 1 << '\t' << c << '\t' << std::fixed << std::setprecision(6) << probs[c] << '\t'
        << (static_cast<std::size_t>(c) < labels.size() ? labels[static_cast<std::size_t>(c)] : std::to_string(c))
        << '\n';
  }
  return kExitOk;
}

struct BenchArgs {
  ModelOptions model;
  RuntimeOptions runtime;
  BenchOptions bench;
  std::string format = "json";
  std::string output;
};

int bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  apply_runtime(a.runtime);
  const ReportFormat format = parse_report_format(a.format);
  const Model model = load_model(a.model, err);
  BenchOptions opts = a.bench;
  opts.threads = a.runtime.threads;
  const LatencyReport report = measure_latency(model, opts);
  if (a.output.empty()) {
    out << format_report(report, format);
  } else {
    emit_report(report, a.output, format);
    err << "wrote " << a.output << '\n';
  }
  return kExitOk;
}

struct CountArgs {
  ModelOptions model;
  bool blocks = false;
  std::string format = "text";
};

int count(const CountArgs& a, std::ostream& out) {
  if (a.model.model.empty()) throw UsageError("count: --model is required");
  const VariantSpec spec = VariantSpec::named(a.model.model);
  const AblationFlags ablation = parse_ablation(a.model.ablate);
  const MacReport r = mac_report(spec, ablation);
  if (a.format == "json") {
    nlohmann::ordered_json j;
    j["variant"] = spec.name;
    j["ablation"] = ablation.label();
    j["params"] = r.total_params;
    j["norm_stats"] = r.total_norm_stats;
    j["macs"] = r.total_macs;
    j["gmacs"] = static_cast<double>(r.total_macs) / 1e9;
    if (a.blocks) {
      j["blocks"] = nlohmann::ordered_json::array();
      for (const auto& b : r.blocks) {
        j["blocks"].push_back({{"name", b.name}, {"macs", b.macs}, {"params", b.params}, {"norm_stats", b.norm_stats}});
      }
    }
    out << j.dump(2) << '\n';
    return kExitOk;
  }
  out << "variant     " << spec.name << '\n';
  out << "ablation    " << ablation.label() << '\n';
  out << "params      " << r.total_params << " (" << std::fixed << std::setprecision(2) << r.total_params / 1e6
      << " M)\n";
  out << "norm_stats  " << r.total_norm_stats << '\n';
  out << "macs        " << r.total_macs << " (" << std::setprecision(3) << r.total_macs / 1e9 << " G)\n";
  if (a.blocks) {
    out << '\n' << std::left << std::setw(20) << "block" << std::right << std::setw(14) << "macs" << std::setw(12)
        << "params" << '\n';
    for (const auto& b : r.blocks) {
      out << std::left << std::setw(20) << b.name << std::right << std::setw(14) << b.macs << std::setw(12)
          << b.params << '\n';
    }
  }
  return kExitOk;
}

struct VerifyArgs {
  ModelOptions model;
  RuntimeOptions runtime;
  std::string input;
  std::string golden;
  double tol = 1e-4;
};

int verify(const VerifyArgs& a, std::ostream& out, std::ostream& err) {
  apply_runtime(a.runtime);
  if (a.model.weights.empty()) throw UsageError("verify: --weights is required");
  const Model model = load_model(a.model, err);
  const WeightStore golden = load(a.golden);
  const WeightStore input_store = a.input.empty() ? golden : load(a.input);
  const Tensor* input = input_store.find("input");
  if (!input) throw DataError("verify: no tensor named 'input' in " + (a.input.empty() ? a.golden : a.input));

  Recorder rec;
  model.forward(*input, &rec);

  std::optional<std::string> first_failure;
  std::size_t compared = 0;
  out << std::left << std::setw(22) << "layer" << std::right << std::setw(14) << "max_abs_diff" << "  status\n";
  for (const auto& [name, act] : rec.layers) {
    const Tensor* ref = golden.find("act." + name);
    std::string status;
    double diff = 0;
    if (!ref) {
      status = "MISSING";
    } else if (ref->shape() != act.shape()) {
      status = "SHAPE " + to_string(ref->shape()) + " vs " + to_string(act.shape());
    } else {
      diff = max_abs_diff(*ref, act);
      status = diff <= a.tol ? "ok" : "FAIL";  // NaN compares false and fails
      ++compared;
    }
    out << std::left << std::setw(22) << name << std::right << std::setw(14) << std::scientific
        << std::setprecision(3) << diff << "  " << status << '\n';
    if (status != "ok" && !first_failure) {
      std::ostringstream why;
      why << name << " (" << status;
      if (status == "FAIL") why << ": max abs diff " << std::scientific << std::setprecision(3) << diff << " > " << a.tol;
      why << ')';
      first_failure = why.str();
    }
  }
  for (const auto& e : golden.entries()) {
    if (e.name.rfind("act.", 0) != 0) continue;
    const std::string layer = e.name.substr(4);
    const bool produced = std::any_of(rec.layers.begin(), rec.layers.end(), [&](const auto& l) { return l.first == layer; });
    if (!produced && !first_failure) first_failure = layer + " (golden layer not produced by the engine)";
  }
  if (first_failure) {
    out << "verify: FAIL at layer " << *first_failure << '\n';
    return kExitFailure;
  }
  out << "verify: PASS (" << compared << " layers within " << std::defaultfloat << a.tol << ")\n";
  return kExitOk;
}

struct ExportArgs {
  ModelOptions model;
  std::string output;
  std::string golden;
  std::uint64_t input_seed = 0;
  bool perturb = false;
};

int export_random_cmd(const ExportArgs& a, std::ostream& out) {
  if (a.model.model.empty()) throw UsageError("export-random: --model is required");
  const bool was_deterministic = parallel::deterministic();
  parallel::set_deterministic(true);
  struct Restore {
    bool on;
    ~Restore() { parallel::set_deterministic(on); }
  } restore{was_deterministic};
  const VariantSpec spec = VariantSpec::named(a.model.model);
  const AblationFlags ablation = parse_ablation(a.model.ablate);
  const WeightStore store = export_random(spec, ablation, a.model.seed, a.output, a.perturb);
  out << "wrote " << a.output << " (" << store.size() << " tensors)\n";
  if (!a.golden.empty()) {
    const Model model = Model::from_store(spec, ablation, store);
    WeightStore bundle;
    const Tensor input = random_image(spec.input_hw, a.input_seed);
    bundle.insert("input", input);
    Recorder rec;
    model.forward(input, &rec);
    for (auto& [name, act] : rec.layers) bundle.insert("act." + name, std::move(act));
    save(bundle, a.golden);
    out << "wrote " << a.golden << " (input + " << rec.layers.size() << " activations)\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SBCFormer CPU inference engine", "sbcformer"};
  app.require_subcommand(1);

  ClassifyArgs ca;
  auto* classify_cmd = app.add_subcommand("classify", "Top-k classes for one image");
  add_model_options(*classify_cmd, ca.model);
  add_runtime_options(*classify_cmd, ca.runtime);
  classify_cmd->add_option("--image", ca.image, "Image file")->required();
  classify_cmd->add_option("--labels", ca.labels, "Text file with one class label per line");
  classify_cmd->add_option("--top", ca.top, "Number of classes to list")->check(CLI::PositiveNumber);
  classify_cmd->add_option("--resize", ca.pre.resize_short, "Shorter side after resizing");
  classify_cmd->add_option("--mean", ca.mean, "Per-channel mean (r,g,b)")->expected(3)->delimiter(',');
  classify_cmd->add_option("--std", ca.std, "Per-channel std (r,g,b)")->expected(3)->delimiter(',');

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Batch-1 latency over repeated forward passes");
  add_model_options(*bench_cmd, ba.model);
  add_runtime_options(*bench_cmd, ba.runtime);
  bench_cmd->add_option("--runs", ba.bench.runs, "Timed runs")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", ba.bench.warmup, "Untimed warmup runs")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--format", ba.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  bench_cmd->add_option("--output", ba.output, "Report path (stdout when omitted)");

  CountArgs ka;
  auto* count_cmd = app.add_subcommand("count", "Learnable parameters and MACs");
  add_model_options(*count_cmd, ka.model, false);
  count_cmd->add_flag("--blocks", ka.blocks, "Per-block breakdown");
  count_cmd->add_option("--format", ka.format, "Output format")->check(CLI::IsMember({"text", "json"}));

  VerifyArgs va;
  auto* verify_cmd = app.add_subcommand("verify", "Compare per-layer activations with a golden bundle");
  add_model_options(*verify_cmd, va.model);
  add_runtime_options(*verify_cmd, va.runtime);
  verify_cmd->add_option("--input", va.input, "SBCW file holding `input` (default: the golden file)");
  verify_cmd->add_option("--golden", va.golden, "SBCW file holding `act.<layer>` tensors")->required();
  verify_cmd->add_option("--tol", va.tol, "Max abs difference per layer")->check(CLI::NonNegativeNumber);

  ExportArgs ea;
  auto* export_cmd = app.add_subcommand("export-random", "Write seeded random weights (and optionally a golden bundle)");
  add_model_options(*export_cmd, ea.model, false);
  export_cmd->add_option("--output", ea.output, "Weight file")->required();
  export_cmd->add_option("--golden", ea.golden, "Also write input + per-layer activations here");
  export_cmd->add_option("--input-seed", ea.input_seed, "Seed for the golden input");
  export_cmd->add_flag("--perturb", ea.perturb, "Random BN statistics, biases and positional biases");

  std::vector<std::string> argv_store{"sbcformer"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*classify_cmd) return classify(ca, out, err);
    if (*bench_cmd) return bench(ba, out, err);
    if (*count_cmd) return count(ka, out);
    if (*verify_cmd) return verify(va, out, err);
    if (*export_cmd) return export_random_cmd(ea, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sbc::cli
