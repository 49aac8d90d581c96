#include "sbcformer/weight_store.hpp"

#include "sbcformer/error.hpp"

namespace sbc {

void WeightStore::insert(std::string name, Tensor value) {
  if (name.empty()) throw ConfigError("weight store: empty tensor name");
  if (name.size() > kMaxNameBytes) {
    throw ConfigError("weight store: name longer than " + std::to_string(kMaxNameBytes) + " bytes: " +
                      name.substr(0, 32) + "...");
  }
  if (contains(name)) throw ConfigError("weight store: duplicate tensor name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor* WeightStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].value;
}

const Tensor& WeightStore::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ConfigError("weight store: no tensor named '" + name + "'");
  return *t;
}

std::vector<std::string> WeightStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool WeightStore::operator==(const WeightStore& other) const {
  if (format_version != other.format_version || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!bitwise_equal(entries_[i].value, other.entries_[i].value)) return false;
  }
  return true;
}

}  // namespace sbc
