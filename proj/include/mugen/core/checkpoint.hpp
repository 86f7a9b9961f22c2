#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mugen/core/tensor.hpp"
#include "mugen/nn/parameters.hpp"

namespace mugen {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary tensor archive:
///   "MUGN1" | u32 count | count x (u16 name_len | name bytes | u8 rank | rank x u32 dim | f32 data)
/// All integers and floats little-endian.
namespace checkpoint {

inline constexpr char kMagic[5] = {'M', 'U', 'G', 'N', '1'};

namespace detail {

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu));
  }
}

template <typename U>
U get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return static_cast<U>(v);
}

}  // namespace detail

struct Record {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

inline std::vector<std::uint8_t> encode(const std::vector<Record>& records) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 5);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + r.name);
    if (r.dims.size() > 0xFF) throw CheckpointError("tensor rank too large: " + r.name);
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float f : r.data) detail::put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<Record> decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
    throw CheckpointError("not a MUGN1 checkpoint");
  }
  std::size_t pos = 5;
  const auto count = detail::get<std::uint32_t>(bytes, pos);
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto len = detail::get<std::uint16_t>(bytes, pos);
    if (pos + len > bytes.size()) throw CheckpointError("checkpoint truncated");
    r.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const auto rank = detail::get<std::uint8_t>(bytes, pos);
    for (std::uint8_t k = 0; k < rank; ++k) r.dims.push_back(detail::get<std::uint32_t>(bytes, pos));
    const std::size_t n = element_count(r.dims);
    r.data.resize(n);
    for (std::size_t j = 0; j < n; ++j) r.data[j] = std::bit_cast<float>(detail::get<std::uint32_t>(bytes, pos));
    records.push_back(std::move(r));
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return records;
}

inline void write_file(const std::string& path, const std::vector<Record>& records) {
  const auto bytes = encode(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline std::vector<Record> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

/// Snapshot of every parameter and buffer in the store.
template <typename T>
std::vector<Record> snapshot(const nn::ParameterStore<T>& store) {
  std::vector<Record> out;
  for (const auto& e : store.entries()) {
    Record r{e.name, e.tensor.dims(), {}};
    r.data.assign(e.tensor.values().begin(), e.tensor.values().end());
    out.push_back(std::move(r));
  }
  return out;
}

/// Copies records into the store in place. Every store entry must be present with an
/// identical shape.
template <typename T>
void restore(nn::ParameterStore<T>& store, const std::vector<Record>& records) {
  for (const auto& e : store.entries()) {
    const Record* match = nullptr;
    for (const auto& r : records) {
      if (r.name == e.name) {
        match = &r;
        break;
      }
    }
    if (!match) throw CheckpointError("checkpoint is missing tensor '" + e.name + "'");
    if (match->dims != e.tensor.dims()) {
      throw CheckpointError("tensor '" + e.name + "' has shape " + shape_string(match->dims) +
                            ", model expects " + shape_string(e.tensor.dims()));
    }
    Tensor<T> target = e.tensor;
    auto dst = target.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(match->data[i]);
  }
}

}  // namespace checkpoint
}  // namespace mugen
