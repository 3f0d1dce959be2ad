#include "tadsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "tadsr/error.hpp"

namespace tadsr {

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_png: expected 3 x H x W, got " + shape_to_string(image.shape()));
    }
    const int h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < h * w; ++i) {
            const float v = std::clamp(image[static_cast<std::size_t>(c) * h * w + i], 0.0f, 1.0f);
            rgb[static_cast<std::size_t>(i) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
    }
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        throw IoError("cannot write " + path.string() + ": " + img.message);
    }
}

Tensor read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode " + path.string() + ": " + img.message);
    }
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < h * w; ++i) {
            out[static_cast<std::size_t>(c) * h * w + i] =
                static_cast<float>(rgb[static_cast<std::size_t>(i) * 3 + c] / 255.0);
        }
    }
    return out;
}

}  // namespace tadsr
