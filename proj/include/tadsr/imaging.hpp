#pragma once

#include <vector>

#include "tadsr/tensor.hpp"

/// Plain image operations on C x H x W tensors.
namespace tadsr {

/// Normalised Gaussian taps of odd length `size`.
std::vector<float> gaussian_kernel(double sigma, int size);
/// Kernel truncated at radius ceil(3 sigma).
std::vector<float> gaussian_kernel(double sigma);

/// Separable blur with reflect boundary; output has the input shape.
Tensor blur_reflect(const Tensor& image, const std::vector<float>& kernel);
Tensor gaussian_blur(const Tensor& image, double sigma);

/// Bilinear resampling with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

/// round(x * (levels - 1)) / (levels - 1) after clamping to [0, 1].
Tensor quantize(const Tensor& image, int levels);
Tensor clamp01(Tensor image);

}  // namespace tadsr
