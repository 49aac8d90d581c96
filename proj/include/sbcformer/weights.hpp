#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sbcformer/model.hpp"
#include "sbcformer/weight_store.hpp"

namespace sbc {

/// SBCW container, all integers little-endian:
///
///   "SBCW" | version u32 | count u32
///   count x { name_len u16 | name | ndim u8 | dims u32 x ndim | dtype u8 (0 = fp32) | payload_offset u64 }
///   payloads, fp32 LE, each starting at a 64-byte aligned absolute offset
namespace sbcw {
inline constexpr char kMagic[4] = {'S', 'B', 'C', 'W'};
inline constexpr std::size_t kAlignment = 64;
inline constexpr std::uint8_t kDtypeF32 = 0;
}  // namespace sbcw

std::vector<std::uint8_t> serialize(const WeightStore& store);
/// FormatError on a bad magic or malformed header, VersionError on an unknown version,
/// CorruptionError when the buffer ends before a header field or payload.
WeightStore deserialize(const std::vector<std::uint8_t>& bytes);

/// IoError when the file cannot be written.
void save(const WeightStore& store, const std::filesystem::path& path);
/// IoError when the file cannot be read; otherwise as deserialize.
WeightStore load(const std::filesystem::path& path);

/// Folds every conv+BN pair named by `structure` into the conv: w' = w * s, b' = beta + (b - mean) * s with
/// s = gamma / sqrt(var + eps). The `.bn.*` entries are dropped and a `.b` entry is written after `.w`.
/// Entry order is otherwise preserved. DataError when a pair has missing or negative statistics.
WeightStore fold_batchnorm(const WeightStore& store, const Model& structure, float eps = 1e-5f);

struct InferredStructure {
  VariantSpec spec;
  AblationFlags ablation;
};

/// Recovers the named variant and ablation flags from the tensor names and stage widths of a store.
/// ConfigError when no named variant matches.
InferredStructure infer_structure(const WeightStore& store);

/// build(variant, ablation, random(seed)) then save. Returns the saved store.
WeightStore export_random(const VariantSpec& variant, const AblationFlags& ablation, std::uint64_t seed,
                          const std::filesystem::path& path, bool perturb = false);

}  // namespace sbc
