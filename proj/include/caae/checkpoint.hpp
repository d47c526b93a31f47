#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "caae/data.hpp"
#include "caae/optim.hpp"

namespace caae {

// Binary layout, all integers little-endian:
//   "CAAE" | u32 version | vocab block | u32 tensor count | tensors
//   vocab block: u32 count, then per token u32 byte length + UTF-8 bytes
//   tensor: u32 name length + name | u8 dtype | u32 rank | u64 dims[rank]
//           | payload (rank product elements, little-endian)
// Run metadata travels as a u8 tensor named "__meta__" holding JSON text.
inline constexpr char kCheckpointMagic[4] = {'C', 'A', 'A', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kMetaTensor = "__meta__";

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

struct RawTensor {
  DType dtype = DType::F64;
  Shape shape;
  std::vector<double> values;  // numeric payload widened to double
  std::string bytes;           // U8 payload
};

struct CheckpointData {
  Vocab vocab;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, RawTensor> tensors;
};

namespace detail {

template <typename U>
void put_le(std::ostream& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  const Bits bits = std::bit_cast<Bits>(v);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U)))
    throw DataError("checkpoint truncated");
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(buf[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError("checkpoint truncated");
  return s;
}

inline void put_header(std::ostream& out, const std::string& name, DType dt, const Shape& shape) {
  put_str(out, name);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dt));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_le<std::uint64_t>(out, d);
}

}  // namespace detail

class CheckpointWriter {
 public:
  CheckpointWriter(const Vocab& vocab, nlohmann::json meta) : vocab_(vocab), meta_(std::move(meta)) {}

  template <typename T>
  void add(const std::string& name, const Shape& shape, std::span<const T> values) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    entries_.push_back({name, shape, std::is_same_v<T, float> ? DType::F32 : DType::F64,
                        std::vector<double>(values.begin(), values.end())});
  }

  template <typename T>
  void add_params(const ParamStore<T>& store) {
    for (const auto& p : store.params())
      add<T>(p.name, p.value.shape(), std::span<const T>(p.value.values()));
  }

  template <typename T>
  void add_optimizer(const std::string& prefix, Adam<T>& opt) {
    for (auto& [name, mom] : opt.moments()) {
      add<T>(prefix + ".m." + name, {mom.m.size()}, std::span<const T>(mom.m));
      add<T>(prefix + ".v." + name, {mom.v.size()}, std::span<const T>(mom.v));
    }
  }

  void write(std::ostream& out) const {
    out.write(kCheckpointMagic, 4);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    const auto& toks = vocab_.tokens();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(toks.size()));
    for (const auto& t : toks) detail::put_str(out, t);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size() + 1));
    const std::string meta = meta_.dump();
    detail::put_header(out, kMetaTensor, DType::U8, {meta.size()});
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    for (const auto& e : entries_) {
      detail::put_header(out, e.name, e.dtype, e.shape);
      for (double v : e.values) {
        if (e.dtype == DType::F32)
          detail::put_le<float>(out, static_cast<float>(v));
        else
          detail::put_le<double>(out, v);
      }
    }
  }

  // Writes to `path` atomically via a temporary file.
  void write(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + tmp);
      write(out);
      if (!out) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot rename to " + path);
  }

 private:
  struct Entry {
    std::string name;
    Shape shape;
    DType dtype;
    std::vector<double> values;
  };
  const Vocab& vocab_;
  nlohmann::json meta_;
  std::vector<Entry> entries_;
};

inline CheckpointData read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError("not a CAAE checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  const auto ntok = detail::get_le<std::uint32_t>(in);
  Tokens toks;
  for (std::uint32_t i = 0; i < ntok; ++i) toks.push_back(detail::get_str(in));
  if (toks.size() < Vocab::kReserved) throw DataError("checkpoint vocabulary lacks reserved ids");
  data.vocab = Vocab::from_tokens(Tokens(toks.begin() + Vocab::kReserved, toks.end()));
  const auto count = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    const std::string name = detail::get_str(in);
    const auto tag = detail::get_le<std::uint8_t>(in);
    if (tag > 2) throw DataError("unknown dtype tag in tensor " + name);
    t.dtype = static_cast<DType>(tag);
    const auto rank = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r)
      t.shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(in)));
    const std::size_t n = shape_numel(t.shape);
    if (t.dtype == DType::U8) {
      t.bytes.resize(n);
      if (n && !in.read(t.bytes.data(), static_cast<std::streamsize>(n)))
        throw DataError("checkpoint truncated in " + name);
    } else {
      t.values.resize(n);
      for (auto& v : t.values)
        v = t.dtype == DType::F32 ? detail::get_le<float>(in) : detail::get_le<double>(in);
    }
    if (name == kMetaTensor)
      data.meta = nlohmann::json::parse(t.bytes);
    else
      data.tensors.emplace(name, std::move(t));
  }
  return data;
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

// Copies stored values into every parameter of `store`; all must be present
// with matching shapes.
template <typename T>
void load_params(const CheckpointData& data, ParamStore<T>& store) {
  for (auto& p : store.params()) {
    auto it = data.tensors.find(p.name);
    if (it == data.tensors.end()) throw DataError("checkpoint lacks tensor " + p.name);
    if (it->second.shape != p.value.shape())
      throw DataError("shape mismatch for " + p.name + ": checkpoint " +
                      shape_str(it->second.shape) + ", model " + shape_str(p.value.shape()));
    for (std::size_t i = 0; i < p.value.size(); ++i)
      p.value[i] = static_cast<T>(it->second.values[i]);
  }
}

template <typename T>
void load_optimizer(const CheckpointData& data, const std::string& prefix, Adam<T>& opt,
                    const ParamStore<T>& store) {
  for (const auto& p : store.params()) {
    auto m = data.tensors.find(prefix + ".m." + p.name);
    auto v = data.tensors.find(prefix + ".v." + p.name);
    if (m == data.tensors.end() || v == data.tensors.end()) continue;
    auto& mom = opt.moments()[p.name];
    mom.m.assign(m->second.values.begin(), m->second.values.end());
    mom.v.assign(v->second.values.begin(), v->second.values.end());
  }
}

}  // namespace caae
