#include "mvc/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"

namespace mvc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename Stored, typename T>
std::vector<T> decode(const std::vector<char>& bytes, std::size_t count) {
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Stored v;
    std::memcpy(&v, bytes.data() + i * sizeof(Stored), sizeof(Stored));
    out[i] = static_cast<T>(v);
  }
  return out;
}

}  // namespace

template <typename T>
void save_tensor(const fs::path& stem, const Tensor<T>& t) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  {
    std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
    if (!bin) throw DataError("cannot write " + with_suffix(stem, ".bin").string());
    bin.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  json meta;
  meta["shape"] = t.shape();
  meta["dtype"] = dtype_name<T>();
  std::ofstream side(with_suffix(stem, ".json"), std::ios::trunc);
  if (!side) throw DataError("cannot write " + with_suffix(stem, ".json").string());
  side << meta.dump() << '\n';
}

template <typename T>
Tensor<T> load_tensor(const fs::path& stem) {
  const auto side_path = with_suffix(stem, ".json");
  std::ifstream side(side_path);
  if (!side) throw DataError("cannot open " + side_path.string());
  json meta;
  Shape shape;
  std::string dtype;
  try {
    side >> meta;
    shape = meta.at("shape").get<Shape>();
    dtype = meta.at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("malformed tensor sidecar " + side_path.string() + ": " + e.what());
  }
  std::size_t width = 0;
  if (dtype == "f32") {
    width = 4;
  } else if (dtype == "f64") {
    width = 8;
  } else {
    throw DtypeError("unknown tensor dtype '" + dtype + "' in " + side_path.string());
  }
  const auto bin_path = with_suffix(stem, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("cannot open " + bin_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t count = numel(shape);
  if (bytes.size() < count * width) {
    throw TruncatedError("tensor payload " + bin_path.string() + " is truncated");
  }
  if (bytes.size() > count * width) {
    throw FormatError("tensor payload " + bin_path.string() + " has trailing bytes");
  }
  auto values = width == 4 ? decode<float, T>(bytes, count) : decode<double, T>(bytes, count);
  return Tensor<T>(std::move(shape), std::move(values));
}

template void save_tensor<float>(const fs::path&, const Tensor<float>&);
template void save_tensor<double>(const fs::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const fs::path&);
template Tensor<double> load_tensor<double>(const fs::path&);

}  // namespace mvc
