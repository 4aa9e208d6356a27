#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmr/tensor.hpp"

// ".ten" container: magic "CMRT", u16 version, u8 rank, rank x u32 dims,
// then row-major f64 payload. All integers and floats little-endian.
namespace cmr::ten {

inline constexpr char kMagic[4] = {'C', 'M', 'R', 'T'};
inline constexpr std::uint16_t kVersion = 1;

struct Array {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

std::string encode(const Array& array);
Array decode(const std::string& bytes);

void write(const std::filesystem::path& path, const Array& array);
Array read(const std::filesystem::path& path);

// Tensors are stored with rank 4 (n, c, h, w).
void save(const std::filesystem::path& path, const Tensor& tensor);
// Accepts rank 1..4; missing leading dims are 1.
Tensor load(const std::filesystem::path& path);

Array from_tensor(const Tensor& tensor);
Tensor to_tensor(const Array& array);

} // namespace cmr::ten
