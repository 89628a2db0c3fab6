#include "msmmt/diffmath/msmt_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

namespace msmmt::diffmath {
namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'S', 'M', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_msmt(const Shape& shape, std::span<const float> values) {
  if (shape.size() > 255) throw MsmtFormatError("msmt: rank exceeds 255");
  if (numel(shape) != values.size()) throw MsmtFormatError("msmt: shape does not match payload");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * shape.size() + 4 * values.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kMsmtVersion);
  out.push_back(kMsmtFloat32);
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (auto e : shape) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw MsmtFormatError("msmt: extent exceeds uint32");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

RawTensor decode_msmt(std::span<const std::uint8_t> bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) { return MsmtFormatError("corrupt MSMT file " + origin + ": " + why); };
  if (bytes.size() < 7) throw fail("truncated header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw fail("bad magic");
  if (bytes[4] != kMsmtVersion) throw fail("unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] != kMsmtFloat32) throw fail("unsupported dtype " + std::to_string(bytes[5]));
  const std::size_t rank = bytes[6];
  std::size_t at = 7;
  if (bytes.size() < at + 4 * rank) throw fail("truncated extents");
  RawTensor out;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i, at += 4) {
    const auto e = get_u32(bytes, at);
    if (e == 0) throw fail("zero extent");
    out.shape.push_back(e);
    count *= e;
  }
  if (bytes.size() != at + 4 * count) throw fail("payload size mismatch");
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i, at += 4) out.values[i] = std::bit_cast<float>(get_u32(bytes, at));
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  thread_local std::mt19937_64 rng{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rng() % 1000000007ULL);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_msmt(const std::filesystem::path& path, const Shape& shape, std::span<const float> values) {
  write_file_atomic(path, encode_msmt(shape, values));
}

void write_msmt(const std::filesystem::path& path, const Tensor<float>& tensor) {
  write_msmt(path, tensor.shape(), tensor.data());
}

RawTensor read_msmt(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception&) {
    throw MsmtFormatError("cannot read MSMT file " + path.string());
  }
  return decode_msmt(bytes, path.string());
}

Tensor<float> read_msmt_tensor(const std::filesystem::path& path) {
  auto raw = read_msmt(path);
  try {
    return Tensor<float>::from_data(std::move(raw.shape), std::move(raw.values));
  } catch (const TensorError& e) {
    throw MsmtFormatError("corrupt MSMT file " + path.string() + ": " + e.what());
  }
}

}  // namespace msmmt::diffmath
