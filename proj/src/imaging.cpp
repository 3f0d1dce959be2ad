#include "tadsr/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "tadsr/autograd.hpp"
#include "tadsr/error.hpp"

namespace tadsr {

std::vector<float> gaussian_kernel(double sigma, int size) {
    if (size < 1 || size % 2 == 0) throw ParameterError("gaussian_kernel: size must be odd and positive");
    if (!(sigma > 0.0)) throw ParameterError("gaussian_kernel: sigma must be positive");
    const int r = size / 2;
    std::vector<double> w(static_cast<std::size_t>(size));
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += w[static_cast<std::size_t>(i + r)];
    }
    std::vector<float> k(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) k[i] = static_cast<float>(w[i] / total);
    return k;
}

std::vector<float> gaussian_kernel(double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma - 1e-9)));
    return gaussian_kernel(sigma, 2 * r + 1);
}

Tensor blur_reflect(const Tensor& image, const std::vector<float>& kernel) {
    if (image.rank() != 3) throw ShapeError("blur_reflect: expected C x H x W, got " + shape_to_string(image.shape()));
    std::vector<int> shape = image.shape();
    shape.insert(shape.begin(), 1);
    ag::Var out = ag::blur_reflect(ag::constant(image.reshaped(shape)), {kernel});
    return out.value().reshaped(image.shape());
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    if (sigma <= 0.0) return image;
    return blur_reflect(image, gaussian_kernel(sigma));
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw ShapeError("resize_bilinear: expected C x H x W, got " + shape_to_string(image.shape()));
    if (out_h < 1 || out_w < 1) throw ParameterError("resize_bilinear: output size must be positive");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;

    struct Tap {
        int i0, i1;
        double f;
    };
    auto taps = [](int n_out, int n_in, double s) {
        std::vector<Tap> t(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            const double src = std::clamp((o + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, n_in - 1);
            t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
        }
        return t;
    };
    const auto ty = taps(out_h, h, sy);
    const auto tx = taps(out_w, w, sx);
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image.data() + static_cast<std::size_t>(ch) * h * w;
        float* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const Tap& a = ty[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                const Tap& b = tx[static_cast<std::size_t>(x)];
                const double top = src[a.i0 * w + b.i0] * (1.0 - b.f) + src[a.i0 * w + b.i1] * b.f;
                const double bot = src[a.i1 * w + b.i0] * (1.0 - b.f) + src[a.i1 * w + b.i1] * b.f;
                dst[y * out_w + x] = static_cast<float>(top * (1.0 - a.f) + bot * a.f);
            }
        }
    }
    return out;
}

Tensor quantize(const Tensor& image, int levels) {
    if (levels < 2) throw ParameterError("quantize: need at least 2 levels");
    Tensor out = image;
    const double q = levels - 1;
    for (float& v : out.values()) {
        const double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
        v = static_cast<float>(std::round(x * q) / q);
    }
    return out;
}

Tensor clamp01(Tensor image) {
    for (float& v : image.values()) v = std::clamp(v, 0.0f, 1.0f);
    return image;
}

}  // namespace tadsr
