#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbcformer/tensor.hpp"

namespace sbc {

/// Ordered name -> tensor map. Names are unique, non-empty and at most 256 bytes.
class WeightStore {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::size_t kMaxNameBytes = 256;

  struct Entry {
    std::string name;
    Tensor value;
  };

  std::uint32_t format_version = kFormatVersion;

  /// Appends a tensor; ConfigError on a duplicate, empty or over-long name.
  void insert(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor* find(const std::string& name) const;
  /// ConfigError when missing.
  const Tensor& at(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<std::string> names() const;

  /// Same names in the same order with bitwise-identical tensors.
  bool operator==(const WeightStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sbc
