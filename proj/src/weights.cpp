#include "sbcformer/weights.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>

#include "sbcformer/error.hpp"

namespace sbc {

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  template <class T>
  void put(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void pad_to(std::size_t offset) { out_.resize(offset, 0); }
  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * sizeof(float));
    } else {
      for (float v : values) put(std::bit_cast<std::uint32_t>(v));
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return value;
  }
  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw CorruptionError(std::string("sbcw: file ends inside ") + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::size_t align_up(std::size_t n) { return (n + sbcw::kAlignment - 1) / sbcw::kAlignment * sbcw::kAlignment; }

}  // namespace

std::vector<std::uint8_t> serialize(const WeightStore& store) {
  if (store.format_version != WeightStore::kFormatVersion) {
    throw VersionError("sbcw: cannot write version " + std::to_string(store.format_version) +
                       "; this build writes version " + std::to_string(WeightStore::kFormatVersion));
  }
  std::size_t header = 12;
  for (const auto& e : store.entries()) {
    if (e.name.empty() || e.name.size() > WeightStore::kMaxNameBytes) {
      throw ConfigError("sbcw: tensor name must be 1.." + std::to_string(WeightStore::kMaxNameBytes) + " bytes");
    }
    if (e.value.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw ConfigError("sbcw: tensor '" + e.name + "' has too many dimensions");
    }
    for (std::int64_t d : e.value.shape()) {
      if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) {
        throw ConfigError("sbcw: tensor '" + e.name + "' has a dimension outside u32");
      }
    }
    header += 2 + e.name.size() + 1 + 4 * e.value.rank() + 1 + 8;
  }

  std::vector<std::size_t> offsets;
  std::size_t cursor = align_up(header);
  for (const auto& e : store.entries()) {
    offsets.push_back(cursor);
    cursor = align_up(cursor + 4 * static_cast<std::size_t>(e.value.numel()));
  }

  std::vector<std::uint8_t> out;
  out.reserve(cursor);
  Writer w(out);
  w.bytes(sbcw::kMagic, 4);
  w.put<std::uint32_t>(store.format_version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entries()[i];
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
    for (std::int64_t d : e.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint8_t>(sbcw::kDtypeF32);
    w.put<std::uint64_t>(offsets[i]);
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.pad_to(offsets[i]);
    w.floats(store.entries()[i].value.values());
  }
  // Files end right after the last payload; trailing alignment is not required.
  return out;
}

WeightStore deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), sbcw::kMagic, 4) != 0) {
    throw FormatError("sbcw: bad magic (expected \"SBCW\")");
  }
  r.string(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != WeightStore::kFormatVersion) {
    throw VersionError("sbcw: file version " + std::to_string(version) + ", supported version " +
                       std::to_string(WeightStore::kFormatVersion));
  }
  const auto count = r.get<std::uint32_t>("tensor count");

  struct Header {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    const auto name_len = r.get<std::uint16_t>("name length");
    if (name_len == 0 || name_len > WeightStore::kMaxNameBytes) {
      throw FormatError("sbcw: tensor " + std::to_string(i) + " has a name of " + std::to_string(name_len) + " bytes");
    }
    h.name = r.string(name_len, "tensor name");
    const auto ndim = r.get<std::uint8_t>("ndim");
    for (std::uint8_t d = 0; d < ndim; ++d) h.shape.push_back(r.get<std::uint32_t>("dims"));
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != sbcw::kDtypeF32) {
      throw FormatError("sbcw: tensor '" + h.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    h.offset = r.get<std::uint64_t>("payload offset");
    headers.push_back(std::move(h));
  }

  WeightStore store;
  for (auto& h : headers) {
    std::uint64_t numel = 1;
    for (std::int64_t d : h.shape) {
      if (d == 0) throw FormatError("sbcw: tensor '" + h.name + "' has a zero extent");
      numel *= static_cast<std::uint64_t>(d);
      if (numel > bytes.size()) {
        throw CorruptionError("sbcw: shape " + to_string(h.shape) + " of '" + h.name + "' exceeds the file size");
      }
    }
    const std::uint64_t len = numel * 4;
    if (h.offset < r.pos() || h.offset > bytes.size() || bytes.size() - h.offset < len) {
      throw CorruptionError("sbcw: payload of '" + h.name + "' (" + std::to_string(len) + " bytes at offset " +
                            std::to_string(h.offset) + ") exceeds the file size " + std::to_string(bytes.size()));
    }
    std::vector<float> values(numel);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(values.data(), bytes.data() + h.offset, len);
    } else {
      for (std::uint64_t i = 0; i < numel; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[h.offset + 4 * i + b]) << (8 * b);
        values[i] = std::bit_cast<float>(u);
      }
    }
    if (store.contains(h.name)) throw FormatError("sbcw: duplicate tensor name '" + h.name + "'");
    store.insert(std::move(h.name), Tensor(std::move(h.shape), std::move(values)));
  }
  return store;
}

void save(const WeightStore& store, const std::filesystem::path& path) {
  const auto bytes = serialize(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

WeightStore load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("failed reading " + path.string());
  return deserialize(bytes);
}

WeightStore fold_batchnorm(const WeightStore& store, const Model& structure, float eps) {
  struct Folded {
    Tensor weight, bias;
  };
  std::map<std::string, Folded> folded;  // keyed by weight name
  std::set<std::string> dropped;
  for (const std::string& p : structure.conv_bn_prefixes()) {
    const Tensor* w = store.find(p + ".w");
    if (!w) throw DataError("fold_batchnorm: missing " + p + ".w");
    const Tensor* stats[4];
    const char* keys[4] = {".bn.gamma", ".bn.beta", ".bn.mean", ".bn.var"};
    for (int i = 0; i < 4; ++i) {
      stats[i] = store.find(p + keys[i]);
      if (!stats[i]) throw DataError("fold_batchnorm: missing " + p + keys[i]);
      dropped.insert(p + keys[i]);
    }
    const std::int64_t cout = w->dim(0);
    for (const Tensor* t : stats) {
      if (t->numel() != cout) throw DataError("fold_batchnorm: " + p + " statistics do not match " + std::to_string(cout) + " channels");
    }
    const Tensor* b = store.find(p + ".b");
    if (b) dropped.insert(p + ".b");

    Folded f{*w, Tensor({cout})};
    const std::int64_t per_channel = w->numel() / cout;
    for (std::int64_t o = 0; o < cout; ++o) {
      const double var = (*stats[3])[o];
      if (var < 0) throw DataError("fold_batchnorm: negative variance in " + p + " channel " + std::to_string(o));
      const double s = (*stats[0])[o] / std::sqrt(var + eps);
      float* row = f.weight.data() + o * per_channel;
      for (std::int64_t i = 0; i < per_channel; ++i) row[i] = static_cast<float>(row[i] * s);
      const double bias = b ? (*b)[o] : 0.0;
      f.bias[o] = static_cast<float>((*stats[1])[o] + (bias - (*stats[2])[o]) * s);
    }
    folded.emplace(p + ".w", std::move(f));
  }

  WeightStore out;
  for (const auto& e : store.entries()) {
    if (dropped.count(e.name)) continue;
    const auto it = folded.find(e.name);
    if (it == folded.end()) {
      out.insert(e.name, e.value);
      continue;
    }
    const std::string prefix = e.name.substr(0, e.name.size() - 2);
    out.insert(e.name, it->second.weight);
    out.insert(prefix + ".b", it->second.bias);
  }
  return out;
}

InferredStructure infer_structure(const WeightStore& store) {
  InferredStructure out;
  std::array<int, 3> dims{};
  std::array<int, 3> attention{};
  for (int s = 0; s < 3; ++s) {
    const std::string p = "stage" + std::to_string(s + 1);
    const Tensor* merge = store.find(p + ".fuse.merge.w");
    if (!merge || merge->rank() != 4) throw ConfigError("cannot infer variant: missing " + p + ".fuse.merge.w");
    dims[static_cast<std::size_t>(s)] = static_cast<int>(merge->dim(0));
    int k = 0;
    while (store.contains(p + ".mattn" + std::to_string(k) + ".linear.w")) ++k;
    attention[static_cast<std::size_t>(s)] = k;
  }
  out.ablation.no_local_stream = !store.contains("stage1.fuse.gate.w");
  out.ablation.standard_attention = store.contains("stage1.mattn0.q.w");
  for (const auto& name : VariantSpec::names()) {
    const VariantSpec v = VariantSpec::named(name);
    if (v.stage_dims == dims && v.attention_counts == attention) {
      out.spec = v;
      return out;
    }
  }
  throw ConfigError("cannot infer variant: stage widths [" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) +
                    "," + std::to_string(dims[2]) + "] with attention counts [" + std::to_string(attention[0]) + "," +
                    std::to_string(attention[1]) + "," + std::to_string(attention[2]) + "] match no variant");
}

WeightStore export_random(const VariantSpec& variant, const AblationFlags& ablation, std::uint64_t seed,
                          const std::filesystem::path& path, bool perturb) {
  WeightStore store = Model::build(variant, ablation, Init::random(seed, perturb)).to_store();
  save(store, path);
  return store;
}

}  // namespace sbc
