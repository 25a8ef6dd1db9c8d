#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mambapupil/tensor.hpp"

namespace mambapupil {

/// Ordered collection of named tensors. Insertion order is preserved so that
/// optimizer state and serialization are stable.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(tensor));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Archive layout (little-endian):
//   "MPCK" | u32 version | u32 count
//   count x { u32 name_len | name bytes (UTF-8) | u8 rank | rank x u32 dims | f32 payload }
namespace checkpoint {

inline constexpr std::array<char, 4> kMagic{'M', 'P', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<unsigned char, sizeof(U)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(U))) throw CheckpointError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

}  // namespace detail

inline void write(const std::string& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(r.shape.size()));
    for (int d : r.shape) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float v : r.values) detail::put_le<float>(os, v);
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path);
}

inline std::vector<Record> read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw CheckpointError("not a checkpoint file: " + path);
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Record r;
    const auto len = detail::get_le<std::uint32_t>(is);
    r.name.resize(len);
    if (!is.read(r.name.data(), len)) throw CheckpointError("truncated checkpoint");
    const auto rank = detail::get_le<std::uint8_t>(is);
    for (std::uint8_t i = 0; i < rank; ++i) r.shape.push_back(static_cast<int>(detail::get_le<std::uint32_t>(is)));
    r.values.resize(shape_numel(r.shape));
    for (auto& v : r.values) v = detail::get_le<float>(is);
    records.push_back(std::move(r));
  }
  return records;
}

template <typename T>
std::vector<Record> to_records(const ParamStore<T>& store) {
  std::vector<Record> out;
  for (const auto& [name, t] : store.entries()) {
    Record r{name, t.shape(), {}};
    r.values.reserve(t.numel());
    for (T v : t.data()) r.values.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  }
  return out;
}

/// Copies every record into the matching store entry. Names and shapes must
/// match exactly in both directions.
template <typename T>
void load_into(ParamStore<T>& store, const std::vector<Record>& records) {
  if (records.size() != store.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(records.size()) + " tensors, model expects " +
                          std::to_string(store.size()));
  }
  for (const auto& r : records) {
    if (!store.contains(r.name)) throw CheckpointError("checkpoint tensor not in model: " + r.name);
    auto& t = store.at(r.name);
    if (t.shape() != r.shape) {
      throw CheckpointError("shape mismatch for " + r.name + ": " + shape_str(r.shape) + " vs " +
                            shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < r.values.size(); ++i) t[i] = static_cast<T>(r.values[i]);
  }
}

}  // namespace checkpoint
}  // namespace mambapupil
