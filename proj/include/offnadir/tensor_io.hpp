#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "offnadir/tensor.hpp"

namespace offnadir {

// Binary tensor container:
//   magic "TENS" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u16 rank |
//   rank x u32 dims | payload (row-major, little-endian)
void write_tensor(std::ostream& os, const Tensor& t);
void write_tensor(std::ostream& os, const TensorD& t);
void write_tensor(const std::filesystem::path& p, const Tensor& t);
void write_tensor(const std::filesystem::path& p, const TensorD& t);

using AnyTensor = std::variant<Tensor, TensorD>;
AnyTensor read_tensor(std::istream& is);
AnyTensor read_tensor(const std::filesystem::path& p);

// Convenience readers that require a specific dtype.
Tensor read_tensor_f32(const std::filesystem::path& p);
TensorD read_tensor_f64(const std::filesystem::path& p);

}  // namespace offnadir
