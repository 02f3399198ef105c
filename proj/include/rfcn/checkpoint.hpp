#pragma once

// Binary weight checkpoints.
//
//   "PSROI1"                      6 bytes, no terminator
//   u32 tensor count              little-endian
//   per tensor: u32 n, c, h, w    little-endian
//               n*c*h*w f64       little-endian IEEE-754
//
// Readers reject bad magic, truncated payloads and trailing bytes.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "rfcn/tensor.hpp"

namespace rfcn {

inline constexpr char kCheckpointMagic[] = "PSROI1";

void write_checkpoint(std::ostream& os, std::span<const Tensor> tensors);
std::vector<Tensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace rfcn
