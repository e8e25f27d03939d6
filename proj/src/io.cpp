#include "alignlab/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "alignlab/error.hpp"

namespace alignlab {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'I', 'G', 'N', 'L', 'A', 'B'};

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(&value, bytes, sizeof(T));
  return true;
}

}  // namespace

void save_bundle(const std::filesystem::path& stem, const ArrayBundle& arrays) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t total = 0;
  for (const auto& [name, tensor] : arrays) {
    if (!tensor.consistent())
      throw Error(ErrorKind::shape_mismatch, "array '" + name + "' has inconsistent shape");
    index.push_back({{"name", name}, {"shape", tensor.shape}, {"offset", total}});
    total += tensor.size();
  }

  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorKind::io, "cannot write " + with_suffix(stem, ".bin").string());
  bin.write(kMagic, sizeof kMagic);
  put_le<std::uint64_t>(bin, total);
  for (const auto& [name, tensor] : arrays)
    for (double v : tensor.data) put_le(bin, v);
  if (!bin) throw Error(ErrorKind::io, "short write to " + with_suffix(stem, ".bin").string());

  std::ofstream side(with_suffix(stem, ".json"));
  if (!side) throw Error(ErrorKind::io, "cannot write " + with_suffix(stem, ".json").string());
  side << nlohmann::json{{"format", "alignlab-f64le"}, {"arrays", index}}.dump(2) << '\n';
}

ArrayBundle load_bundle(const std::filesystem::path& stem) {
  std::ifstream side(with_suffix(stem, ".json"));
  if (!side) throw Error(ErrorKind::io, "cannot open " + with_suffix(stem, ".json").string());
  nlohmann::json index;
  try {
    side >> index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, with_suffix(stem, ".json").string() + ": " + e.what());
  }

  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorKind::io, "cannot open " + with_suffix(stem, ".bin").string());
  char magic[8];
  if (!bin.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorKind::bad_magic, with_suffix(stem, ".bin").string());
  std::uint64_t total = 0;
  if (!get_le(bin, total)) throw Error(ErrorKind::truncated, "missing element count");
  std::vector<double> payload(total);
  for (auto& v : payload)
    if (!get_le(bin, v)) throw Error(ErrorKind::truncated, with_suffix(stem, ".bin").string());

  ArrayBundle out;
  for (const auto& entry : index.at("arrays")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + t.size() > total)
      throw Error(ErrorKind::truncated, "array '" + entry.at("name").get<std::string>() +
                                            "' runs past the payload");
    std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data.begin());
    out.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace alignlab
