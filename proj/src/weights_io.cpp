#include "lfcx/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lfcx/errors.hpp"

namespace lfcx {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', 'X'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw IoError("weights container truncated at byte " + std::to_string(pos_));
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightMap& entries) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kWeightsVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw ContractError("parameter name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

WeightMap decode_weights(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw IoError("weights container: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kWeightsVersion)
    throw IoError("weights container: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  WeightMap out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.str(len);
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 0) throw IoError("weights container: unsupported dtype " + std::to_string(dtype) + " for '" + name + "'");
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) throw IoError("weights container: zero rank for '" + name + "'");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto ext = r.get<std::uint32_t>();
      if (ext == 0) throw IoError("weights container: zero extent for '" + name + "'");
      shape.push_back(ext);
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 4);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(r.get<std::uint32_t>());
    if (!out.emplace(std::move(name), Tensor(shape, std::move(data))).second)
      throw IoError("weights container: duplicate entry");
  }
  if (!r.done())
    throw IoError("weights container: " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
  return out;
}

void save_weights(const std::filesystem::path& path, const ParamStore& store) {
  const auto bytes = encode_weights(store.snapshot());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

WeightMap read_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weights file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

void apply_weights(ParamStore& store, const WeightMap& entries,
                   const std::vector<std::string>& optional_prefixes) {
  for (const auto& [name, t] : entries) {
    if (!store.contains(name) && !store.contains_buffer(name))
      throw ContractError("weights entry '" + name + "' has no matching parameter");
    store.assign(name, t);
  }
  auto check = [&](const std::string& name) {
    if (entries.count(name)) return;
    for (const auto& p : optional_prefixes)
      if (under_prefix(name, p)) return;
    throw ContractError("weights file has no entry for '" + name + "'");
  };
  for (const auto& kv : store.params()) check(kv.first);
  for (const auto& kv : store.buffers()) check(kv.first);
}

}  // namespace lfcx
