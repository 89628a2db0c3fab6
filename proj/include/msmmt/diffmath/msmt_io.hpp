#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msmmt/diffmath/tensor.hpp"

namespace msmmt::diffmath {

// MSMT container: "MSMT", version 0x01, dtype 0x01 (float32 LE), rank byte,
// rank x uint32 LE extents, row-major payload.
inline constexpr std::uint8_t kMsmtVersion = 0x01;
inline constexpr std::uint8_t kMsmtFloat32 = 0x01;

class MsmtFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawTensor {
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_msmt(const Shape& shape, std::span<const float> values);
RawTensor decode_msmt(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

/// Writes through a temporary file and renames, so the target is either
/// complete or absent.
void write_msmt(const std::filesystem::path& path, const Shape& shape, std::span<const float> values);
void write_msmt(const std::filesystem::path& path, const Tensor<float>& tensor);
RawTensor read_msmt(const std::filesystem::path& path);
Tensor<float> read_msmt_tensor(const std::filesystem::path& path);

/// Atomic whole-file write used for every artifact the tools emit.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace msmmt::diffmath
