#include "rfcn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace rfcn {

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& is, unsigned char* dst, std::size_t n) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error("checkpoint truncated");
  }
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

std::uint32_t checked_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("tensor dimension exceeds u32 range");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_checkpoint(std::ostream& os, std::span<const Tensor> tensors) {
  os.write(kCheckpointMagic, kMagicLen);
  put_u32(os, checked_u32(tensors.size()));
  for (const Tensor& t : tensors) {
    const Shape s = t.shape();
    put_u32(os, checked_u32(s.n));
    put_u32(os, checked_u32(s.c));
    put_u32(os, checked_u32(s.h));
    put_u32(os, checked_u32(s.w));
    for (double v : t.data()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

std::vector<Tensor> read_checkpoint(std::istream& is) {
  unsigned char magic[kMagicLen];
  read_exact(is, magic, kMagicLen);
  if (std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0) {
    throw std::runtime_error("not a checkpoint: bad magic");
  }
  const std::uint32_t count = get_u32(is);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    Shape s;
    s.n = get_u32(is);
    s.c = get_u32(is);
    s.h = get_u32(is);
    s.w = get_u32(is);
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
      throw std::runtime_error("checkpoint tensor has a zero dimension");
    }
    std::vector<double> data(s.size());
    for (double& v : data) v = get_f64(is);
    out.emplace_back(s, std::move(data));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, tensors);
}

std::vector<Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace rfcn
