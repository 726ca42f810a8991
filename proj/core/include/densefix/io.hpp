#pragma once

#include <filesystem>
#include <iosfwd>

#include "densefix/label_map.hpp"
#include "densefix/tensor.hpp"

namespace densefix {

/// NPY v1.0, float64, C-order. Bit-exact round trip.
void write_npy(std::ostream& os, const Tensor& t);
Tensor read_npy(std::istream& is);
void write_npy_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_npy_file(const std::filesystem::path& path);

void write_pgm_file(const std::filesystem::path& path, const LabelMap& lm);
LabelMap read_pgm_file(const std::filesystem::path& path);

/// PPM (P6, 8-bit) dump of a [3,H,W] image in [0,1]; for inspection only,
/// quantized to bytes.
void write_ppm_file(const std::filesystem::path& path, const Tensor& image);

}  // namespace densefix
