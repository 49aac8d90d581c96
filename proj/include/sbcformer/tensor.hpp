#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sbc {

using Shape = std::vector<std::int64_t>;

std::string to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense fp32 tensor, row-major over its shape. Image tensors are [N, C, H, W].
///
/// Every extent is >= 1 and the buffer always holds exactly numel() values.
/// Tensors are plain values: copies are deep, moves are cheap.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  float& operator[](std::int64_t i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  // Rank-2 and rank-4 element access; no bounds checks beyond debug asserts.
  float& at(std::int64_t i, std::int64_t j) noexcept { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  float at(std::int64_t i, std::int64_t j) const noexcept { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  float& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) noexcept {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  /// Same values under a new shape with the same element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws ShapeError unless `t` has the given rank.
void expect_rank(const Tensor& t, std::size_t rank, const char* what);

/// Largest |a - b| over all elements; ShapeError if shapes differ.
float max_abs_diff(const Tensor& a, const Tensor& b);

/// True when every element is finite.
bool all_finite(const Tensor& t);

/// True when the two tensors have identical shapes and bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace sbc
