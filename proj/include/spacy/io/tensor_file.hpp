#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spacy/autodiff/tensor.hpp"

namespace spacy::io {

inline constexpr char kTensorMagic[4] = {'S', 'P', 'C', 'Y'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class Dtype : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

// Malformed or unreadable file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure (missing file, permission, short write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Header + payload bytes, little-endian.
std::vector<std::uint8_t> encode_tensor(const ad::Tensor& t, Dtype dtype = Dtype::kFloat64);
ad::Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const ad::Tensor& t, Dtype dtype = Dtype::kFloat64);
// Validates the header and the payload length before allocating.
ad::Tensor read_tensor(const std::filesystem::path& path);

}  // namespace spacy::io
