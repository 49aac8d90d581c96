#include "sbcformer/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sbcformer/error.hpp"

namespace sbc {

void PreprocessSpec::validate() const {
  if (center_crop < 1 || resize_short < center_crop) {
    throw ConfigError("preprocess: need 1 <= center_crop <= resize_short, got crop " + std::to_string(center_crop) +
                      " and resize " + std::to_string(resize_short));
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("preprocess: std entries must be positive");
  }
}

RgbImage decode_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw InputError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw InputError("cannot decode image " + path.string());
  if (bgr.type() != CV_8UC3) throw InputError("unsupported pixel format in " + path.string());
  RgbImage img;
  img.height = bgr.rows;
  img.width = bgr.cols;
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    auto* dst = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
    for (int x = 0; x < img.width; ++x) {
      dst[3 * x + 0] = row[3 * x + 2];
      dst[3 * x + 1] = row[3 * x + 1];
      dst[3 * x + 2] = row[3 * x + 0];
    }
  }
  return img;
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  float w1;
};

std::vector<Tap> taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * scale - 0.5);
    const auto i0 = std::min(static_cast<std::int64_t>(src), in - 1);
    t[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - static_cast<double>(i0))};
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  expect_rank(src, 3, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw GeometryError("resize_bilinear: output extents must be >= 1");
  const std::int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float* plane = src.data() + ch * h * w;
    float* dst = out.data() + ch * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const float* r0 = plane + a.i0 * w;
      const float* r1 = plane + a.i1 * w;
      for (int x = 0; x < out_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const float top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.w1;
        const float bottom = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.w1;
        dst[y * out_w + x] = top + (bottom - top) * a.w1;
      }
    }
  }
  return out;
}

Tensor preprocess(const RgbImage& image, const PreprocessSpec& spec) {
  spec.validate();
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
    throw InputError("preprocess: image buffer does not match its extents");
  }
  Tensor planar({3, image.height, image.width});
  const std::int64_t hw = static_cast<std::int64_t>(image.height) * image.width;
  for (std::int64_t p = 0; p < hw; ++p) {
    for (int ch = 0; ch < 3; ++ch) planar[ch * hw + p] = image.pixels[static_cast<std::size_t>(3 * p + ch)] / 255.0f;
  }

  int rh = spec.resize_short, rw = spec.resize_short;
  if (image.height < image.width) {
    rw = static_cast<int>(static_cast<std::int64_t>(spec.resize_short) * image.width / image.height);
  } else if (image.width < image.height) {
    rh = static_cast<int>(static_cast<std::int64_t>(spec.resize_short) * image.height / image.width);
  }
  const Tensor resized =
      (rh == image.height && rw == image.width) ? planar : resize_bilinear(planar, rh, rw);

  const int crop = spec.center_crop;
  const auto top = static_cast<int>(std::nearbyint((rh - crop) / 2.0));
  const auto left = static_cast<int>(std::nearbyint((rw - crop) / 2.0));
  Tensor out({1, 3, crop, crop});
  for (int ch = 0; ch < 3; ++ch) {
    const float mean = spec.mean[static_cast<std::size_t>(ch)];
    const float sd = spec.std[static_cast<std::size_t>(ch)];
    for (int y = 0; y < crop; ++y) {
      const float* row = resized.data() + (static_cast<std::int64_t>(ch) * rh + top + y) * rw + left;
      for (int x = 0; x < crop; ++x) out.at(0, ch, y, x) = (row[x] - mean) / sd;
    }
  }
  return out;
}

Tensor preprocess_image(const std::filesystem::path& path, const PreprocessSpec& spec) {
  return preprocess(decode_image(path), spec);
}

}  // namespace sbc
