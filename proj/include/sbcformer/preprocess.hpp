#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sbcformer/tensor.hpp"

namespace sbc {

struct PreprocessSpec {
  int resize_short = 256;
  int center_crop = 224;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};

  /// ConfigError when crop > resize_short or a std entry is not positive.
  void validate() const;
};

/// 8-bit interleaved RGB image.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

/// Decodes any format the image codecs understand; grayscale and alpha inputs become 3-channel RGB.
/// InputError when the file is missing or undecodable.
RgbImage decode_image(const std::filesystem::path& path);

/// Bilinear resize on float values with half-pixel centers and no antialiasing. `src` is [C,H,W].
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

/// Resize the shorter side to resize_short (longer side scaled and truncated), center crop, scale to
/// [0,1], standardize per channel. Returns [1,3,crop,crop].
Tensor preprocess(const RgbImage& image, const PreprocessSpec& spec = {});
Tensor preprocess_image(const std::filesystem::path& path, const PreprocessSpec& spec = {});

}  // namespace sbc
