#include "cmr/tenfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <fmt/core.h>

namespace cmr::ten {

namespace {

template <typename UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename UInt>
UInt get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(UInt) > in.size()) {
    throw std::runtime_error("ten: truncated file");
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(UInt);
  return value;
}

} // namespace

std::string encode(const Array& array) {
  if (array.dims.empty() || array.dims.size() > 255) {
    throw std::invalid_argument(fmt::format("ten: unsupported rank {}", array.dims.size()));
  }
  std::size_t count = 1;
  for (auto d : array.dims) {
    count *= d;
  }
  if (count != array.values.size()) {
    throw std::invalid_argument(
        fmt::format("ten: dims describe {} values but {} were given", count, array.values.size()));
  }
  std::string out(kMagic, sizeof(kMagic));
  out.reserve(7 + 4 * array.dims.size() + 8 * count);
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(array.dims.size()));
  for (auto d : array.dims) {
    put_le<std::uint32_t>(out, d);
  }
  for (double v : array.values) {
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Array decode(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("ten: bad magic, expected \"CMRT\"");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint16_t>(bytes, pos);
  if (version != kVersion) {
    throw std::runtime_error(fmt::format("ten: unsupported format version {}", version));
  }
  const auto rank = get_le<std::uint8_t>(bytes, pos);
  if (rank == 0) {
    throw std::runtime_error("ten: rank must be at least 1");
  }
  Array array;
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    array.dims.push_back(get_le<std::uint32_t>(bytes, pos));
    count *= array.dims.back();
  }
  if (bytes.size() - pos != 8 * count) {
    throw std::runtime_error(
        fmt::format("ten: payload has {} bytes, dims require {}", bytes.size() - pos, 8 * count));
  }
  array.values.resize(count);
  for (auto& v : array.values) {
    v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  }
  return array;
}

void write(const std::filesystem::path& path, const Array& array) {
  const std::string bytes = encode(array);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error(fmt::format("ten: cannot open {} for writing", path.string()));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error(fmt::format("ten: write failed for {}", path.string()));
  }
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error(fmt::format("ten: cannot open {}", path.string()));
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(fmt::format("{} ({})", e.what(), path.string()));
  }
}

Array from_tensor(const Tensor& tensor) {
  const Shape& s = tensor.shape();
  return Array{{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                static_cast<std::uint32_t>(s.w)},
               tensor.storage()};
}

Tensor to_tensor(const Array& array) {
  if (array.dims.size() > 4) {
    throw std::runtime_error(fmt::format("ten: rank {} does not fit a 4-D tensor", array.dims.size()));
  }
  int dims[4] = {1, 1, 1, 1};
  const std::size_t offset = 4 - array.dims.size();
  for (std::size_t i = 0; i < array.dims.size(); ++i) {
    dims[offset + i] = static_cast<int>(array.dims[i]);
  }
  return Tensor(Shape{dims[0], dims[1], dims[2], dims[3]}, array.values);
}

void save(const std::filesystem::path& path, const Tensor& tensor) { write(path, from_tensor(tensor)); }

Tensor load(const std::filesystem::path& path) { return to_tensor(read(path)); }

} // namespace cmr::ten
