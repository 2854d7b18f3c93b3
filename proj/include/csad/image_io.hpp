#pragma once

#include <filesystem>
#include <vector>

#include "csad/objectives.hpp"
#include "csad/tensor.hpp"

namespace csad {

/// Writes an [H,W] or [1,H,W] tensor as 8-bit binary PGM (P5), min-max
/// normalised to 0..255. A constant map is written as all zeros.
void write_pgm_normalized(const std::filesystem::path& path, const Tensor& image);

/// Mask as P5 with 0 / 255.
void write_mask_pgm(const std::filesystem::path& path, const SegMask& mask);

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> pixels;
};

GrayImage read_pgm(const std::filesystem::path& path);

/// Reads a P5 mask; only the values 0 and 255 are accepted.
SegMask read_mask_pgm(const std::filesystem::path& path);

}  // namespace csad
