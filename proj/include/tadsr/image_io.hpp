#pragma once

#include <filesystem>

#include "tadsr/tensor.hpp"

namespace tadsr {

/// Writes a 3 x H x W tensor as 8-bit RGB, quantising round(clamp(x) * 255).
void write_png(const std::filesystem::path& path, const Tensor& image);
/// Reads an 8-bit PNG as a 3 x H x W tensor in [0, 1]; grey and alpha are converted to RGB.
Tensor read_png(const std::filesystem::path& path);

}  // namespace tadsr
