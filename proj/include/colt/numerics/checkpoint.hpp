#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "colt/numerics/optim.hpp"

namespace colt {

// Binary parameter container:
//   "COLTCKPT" | u32 version | u32 scalar bytes | u64 header length | header
//   | u64 record count | records
// record: u32 name length | name | u32 rank | u64 extents... | raw values.
// All integers and values are little-endian.
inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'L', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.append(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, in.data() + pos, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  pos += sizeof(U);
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

template <class T>
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

template <class T>
struct Checkpoint {
  std::string header;  // free-form, typically JSON describing the model
  std::vector<CheckpointRecord<T>> records;
};

template <class T>
std::string encode_checkpoint(const std::string& header, const ParamList<T>& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, sizeof(T));
  detail::put_le<std::uint64_t>(out, header.size());
  out += header;
  detail::put_le<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) detail::put_le<std::uint64_t>(out, e);
    for (T v : p.tensor.data()) detail::put_le<T>(out, v);
  }
  return out;
}

template <class T>
std::string encode_checkpoint(const Checkpoint<T>& ck) {
  ParamList<T> params;
  for (const auto& r : ck.records) params.push_back({r.name, Tensor<T>::from(r.shape, r.values)});
  return encode_checkpoint(ck.header, params);
}

template <class T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto width = detail::get_le<std::uint32_t>(bytes, pos);
  if (width != sizeof(T))
    throw CheckpointError("checkpoint stores " + std::to_string(width) + "-byte values, expected " +
                          std::to_string(sizeof(T)));
  Checkpoint<T> ck;
  const auto hlen = detail::get_le<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw CheckpointError("checkpoint truncated");
  ck.header = bytes.substr(pos, hlen);
  pos += hlen;
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord<T> r;
    const auto nlen = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + nlen > bytes.size()) throw CheckpointError("checkpoint truncated");
    r.name = bytes.substr(pos, nlen);
    pos += nlen;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    const std::size_t n = shape_numel(r.shape);
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.values[k] = detail::get_le<T>(bytes, pos);
    ck.records.push_back(std::move(r));
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint records");
  return ck;
}

template <class T>
void save_checkpoint(const std::string& path, const std::string& header, const ParamList<T>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  const auto bytes = encode_checkpoint(header, params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(read_file_bytes(path));
}

// Copies record values into the named parameters; every parameter must be
// present with a matching shape.
template <class T>
void assign_params(const Checkpoint<T>& ck, const ParamList<T>& params) {
  std::map<std::string, const CheckpointRecord<T>*> by_name;
  for (const auto& r : ck.records) by_name[r.name] = &r;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape())
      throw CheckpointError("parameter " + p.name + " has shape " + shape_str(it->second->shape) +
                            " in checkpoint, model expects " + shape_str(p.tensor.shape()));
    auto t = p.tensor;
    std::copy(it->second->values.begin(), it->second->values.end(), t.data().begin());
  }
}

}  // namespace colt
