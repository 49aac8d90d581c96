#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sbcformer/bench.hpp"
#include "sbcformer/cli.hpp"
#include "sbcformer/error.hpp"
#include "sbcformer/model.hpp"
#include "sbcformer/preprocess.hpp"
#include "sbcformer/weights.hpp"

using namespace sbc;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const auto dir = fs::temp_directory_path() / "sbc_cli_test";
  fs::create_directories(dir);
  return dir;
}

// Binary PPM (P6) or PGM (P5); both are decoded by the image codecs.
void write_pnm(const fs::path& path, int w, int h, int channels, const std::vector<std::uint8_t>& pixels) {
  std::ofstream f(path, std::ios::binary);
  f << (channels == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<std::uint8_t> gradient(int w, int h) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w * h * 3));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto* p = &px[static_cast<std::size_t>((y * w + x) * 3)];
      p[0] = static_cast<std::uint8_t>((x * 7 + y) % 256);
      p[1] = static_cast<std::uint8_t>((y * 5) % 256);
      p[2] = static_cast<std::uint8_t>((x * y) % 256);
    }
  return px;
}

// Half-pixel bilinear sample without antialiasing, negative source coordinates clamped to zero.
double sample(const RgbImage& img, int c, double sy, double sx) {
  auto axis = [](double s, int n, int& i0, int& i1, double& f) {
    s = std::max(s, 0.0);
    i0 = std::min(static_cast<int>(std::floor(s)), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    f = s - i0;
  };
  int y0, y1, x0, x1;
  double fy, fx;
  axis(sy, img.height, y0, y1, fy);
  axis(sx, img.width, x0, x1, fx);
  auto px = [&](int y, int x) { return static_cast<double>(img.pixels[static_cast<std::size_t>((y * img.width + x) * 3 + c)]); };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
}

Tensor reference_preprocess(const RgbImage& img, const PreprocessSpec& s) {
  const bool wide = img.width >= img.height;
  const int short_side = wide ? img.height : img.width, long_side = wide ? img.width : img.height;
  const int rl = static_cast<int>(static_cast<long long>(s.resize_short) * long_side / short_side);
  const int rh = wide ? s.resize_short : rl, rw = wide ? rl : s.resize_short;
  const int top = static_cast<int>(std::nearbyint((rh - s.center_crop) / 2.0));
  const int left = static_cast<int>(std::nearbyint((rw - s.center_crop) / 2.0));
  Tensor out({1, 3, s.center_crop, s.center_crop});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.center_crop; ++y)
      for (int x = 0; x < s.center_crop; ++x) {
        const double sy = (y + top + 0.5) * img.height / rh - 0.5;
        const double sx = (x + left + 0.5) * img.width / rw - 0.5;
        const double v = sample(img, c, sy, sx) / 255.0;
        out.at(0, c, y, x) = static_cast<float>((v - s.mean[static_cast<std::size_t>(c)]) / s.std[static_cast<std::size_t>(c)]);
      }
  return out;
}

}  // namespace

TEST_CASE("preprocess: identity crop") {
  const auto path = scratch() / "id.ppm";
  const auto px = gradient(224, 224);
  write_pnm(path, 224, 224, 3, px);
  PreprocessSpec spec;
  spec.resize_short = 224;
  const Tensor t = preprocess_image(path, spec);
  REQUIRE(t.shape() == Shape{1, 3, 224, 224});
  float worst = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) {
        const double v = px[static_cast<std::size_t>((y * 224 + x) * 3 + c)] / 255.0;
        const double e = (v - spec.mean[static_cast<std::size_t>(c)]) / spec.std[static_cast<std::size_t>(c)];
        worst = std::max(worst, static_cast<float>(std::fabs(t.at(0, c, y, x) - e)));
      }
  CHECK(worst <= 1e-6f);
}

TEST_CASE("preprocess: constant gray") {
  RgbImage img{100, 150, std::vector<std::uint8_t>(100 * 150 * 3, 128)};
  PreprocessSpec spec;
  spec.mean = {0.5f, 0.5f, 0.5f};
  spec.std = {0.25f, 0.25f, 0.25f};
  const Tensor t = preprocess(img, spec);
  const float expected = static_cast<float>((128.0 / 255.0 - 0.5) / 0.25);
  for (float v : t.values()) CHECK(v == doctest::Approx(expected).epsilon(1e-6));

  const Tensor d = preprocess(img);
  for (int c = 0; c < 3; ++c) {
    const float first = d.at(0, c, 0, 0);
    for (int y = 0; y < 224; y += 17)
      for (int x = 0; x < 224; x += 13) CHECK(d.at(0, c, y, x) == doctest::Approx(first).epsilon(1e-6));
  }
}

TEST_CASE("preprocess: non-square image against the reference") {
  for (auto [w, h] : {std::pair{300, 200}, std::pair{181, 397}, std::pair{640, 480}}) {
    CAPTURE(w);
    CAPTURE(h);
    const RgbImage img{h, w, gradient(w, h)};
    const Tensor t = preprocess(img);
    REQUIRE(t.shape() == Shape{1, 3, 224, 224});
    CHECK(max_abs_diff(t, reference_preprocess(img, {})) <= 1e-3f);
  }
}

TEST_CASE("preprocess: decoding") {
  const auto gray = scratch() / "gray.pgm";
  std::vector<std::uint8_t> g(64 * 48);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<std::uint8_t>(i % 251);
  write_pnm(gray, 64, 48, 1, g);
  const RgbImage img = decode_image(gray);
  CHECK(img.width == 64);
  CHECK(img.height == 48);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(img.pixels[3 * i] == g[i]);
    CHECK(img.pixels[3 * i + 1] == g[i]);
    CHECK(img.pixels[3 * i + 2] == g[i]);
  }

  const auto color = scratch() / "rgb.ppm";
  write_pnm(color, 2, 1, 3, {10, 20, 30, 40, 50, 60});
  const RgbImage rgb = decode_image(color);
  CHECK(rgb.pixels == std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60});

  const auto junk = scratch() / "junk.png";
  std::ofstream(junk) << "not an image";
  CHECK_THROWS_AS(decode_image(junk), InputError);
  CHECK_THROWS_AS(decode_image(scratch() / "missing.png"), InputError);

  PreprocessSpec bad;
  bad.center_crop = 300;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cli: usage errors") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"count", "--model", "B", "--bogus"}).code == cli::kExitUsage);
  CHECK(run({"count", "--model", "Q"}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"classify"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("cli: count") {
  const auto spec = VariantSpec::named("B");
  const auto r = run({"count", "--model", "B"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("params      " + std::to_string(count_params(spec, {}))) != std::string::npos);
  CHECK(r.out.find("macs        " + std::to_string(count_macs_exact(spec, {}))) != std::string::npos);

  const auto j = run({"count", "--model", "B", "--ablate", "no-local", "--format", "json", "--blocks"});
  REQUIRE(j.code == cli::kExitOk);
  const auto parsed = nlohmann::json::parse(j.out);
  CHECK(parsed["params"].get<std::int64_t>() == count_params(spec, {true, false}));
  CHECK(parsed["macs"].get<std::int64_t>() == count_macs_exact(spec, {true, false}));
  CHECK(parsed["blocks"].size() == block_costs(spec, {true, false}).size());
}

TEST_CASE("cli: bench emits a report") {
  const auto r = run({"bench", "--model", "XS", "--runs", "2", "--warmup", "0", "--threads", "1"});
  REQUIRE(r.code == cli::kExitOk);
  const auto rep = report_from_json(r.out);
  CHECK(rep.runs == 2);
  CHECK(rep.warmup == 0);
  CHECK(rep.variant == "XS");

  const auto path = scratch() / "bench.csv";
  CHECK(run({"bench", "--model", "XS", "--runs", "1", "--warmup", "0", "--format", "csv", "--output", path.string()}).code ==
        cli::kExitOk);
  CHECK(fs::file_size(path) > 0);
}

TEST_CASE("cli: export-random and verify") {
  const auto weights = scratch() / "xs.sbcw", golden = scratch() / "xs_golden.sbcw";
  REQUIRE(run({"export-random", "--model", "XS", "--seed", "3", "--perturb", "--output", weights.string(), "--golden",
               golden.string()})
              .code == cli::kExitOk);
  CHECK(load(weights) == Model::build(VariantSpec::named("XS"), {}, Init::random(3, true)).to_store());

  const auto pass = run({"verify", "--weights", weights.string(), "--golden", golden.string(), "--tol", "1e-4"});
  CHECK(pass.code == cli::kExitOk);
  CHECK(pass.out.find("verify: PASS") != std::string::npos);
  CHECK(run({"verify", "--weights", weights.string(), "--golden", golden.string(), "--fold-bn", "--tol", "1e-4"}).code ==
        cli::kExitOk);

  // Tamper with one mid-network activation and with one later one.
  WeightStore bundle = load(golden), tampered;
  for (const auto& e : bundle.entries()) {
    Tensor v = e.value;
    if (e.name == "act.stage2.mattn1" || e.name == "act.stage3.fuse") v[0] += 0.01f;
    tampered.insert(e.name, v);
  }
  const auto bad = scratch() / "xs_bad.sbcw";
  save(tampered, bad);
  const auto fail = run({"verify", "--weights", weights.string(), "--golden", bad.string(), "--tol", "1e-4"});
  CHECK(fail.code == cli::kExitFailure);
  CHECK(fail.out.find("verify: FAIL at layer stage2.mattn1") != std::string::npos);

  CHECK(run({"verify", "--weights", (scratch() / "nope.sbcw").string(), "--golden", golden.string()}).code ==
        cli::kExitFailure);
}

TEST_CASE("cli: classify") {
  const auto image = scratch() / "cls.ppm";
  write_pnm(image, 320, 240, 3, gradient(320, 240));
  const auto labels = scratch() / "labels.txt";
  {
    std::ofstream f(labels);
    for (int i = 0; i < 1000; ++i) f << "class_" << i << '\n';
  }
  const auto r = run({"classify", "--model", "XS", "--seed", "1", "--image", image.string(), "--labels", labels.string()});
  REQUIRE(r.code == cli::kExitOk);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "rank\tclass\tprob\tlabel");
  double sum = 0, prev = 1;
  int rows = 0;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    int rank, cls;
    double prob;
    std::string label;
    f >> rank >> cls >> prob >> label;
    CHECK(rank == rows + 1);
    CHECK(label == "class_" + std::to_string(cls));
    CHECK(prob <= prev);
    prev = prob;
    sum += prob;
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(sum <= 1.0 + 1e-6);

  const auto junk = scratch() / "junk.jpg";
  std::ofstream(junk) << "garbage";
  CHECK(run({"classify", "--model", "XS", "--image", junk.string()}).code == cli::kExitFailure);
}

TEST_CASE("cli binary exit codes") {
  const std::string bin = SBC_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(s);
  };
  CHECK(status("count --model XS") == 0);
  CHECK(status("count --model XS --nope") == 1);
  CHECK(status("verify --weights /nonexistent.sbcw --golden /nonexistent.sbcw") == 2);
  CHECK(status("verify --golden /nonexistent.sbcw") == 1);
}
