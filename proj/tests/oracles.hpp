#pragma once

// Scalar-loop metric references shared by the unit tests and the acceptance run.

#include <cmath>
#include <vector>

#include "tadsr/tensor.hpp"

namespace tadsr::testing {

inline double psnr_oracle(const Tensor& a, const Tensor& b) {
    long double s = 0.0L;
    for (int c = a.dim(0) - 1; c >= 0; --c)
        for (int y = 0; y < a.dim(1); ++y)
            for (int x = 0; x < a.dim(2); ++x) {
                const std::size_t i = (static_cast<std::size_t>(c) * a.dim(1) + y) * a.dim(2) + x;
                const long double d = static_cast<long double>(a[i]) - b[i];
                s += d * d;
            }
    return static_cast<double>(10.0L * std::log10(static_cast<long double>(a.numel()) / s));
}

/// Two-pass (centred) moments per window; independent of the one-pass sums in ssim().
inline double ssim_oracle(const Tensor& a, const Tensor& b, int win, double sigma) {
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2), r = win / 2;
    std::vector<std::vector<double>> k(win, std::vector<double>(win));
    double tot = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) tot += k[i][j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
    auto at = [&](const Tensor& t, int c, int y, int x) { return static_cast<double>(t[(c * H + y) * W + x]); };
    double mean_over_channels = 0.0;
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        int n = 0;
        for (int y0 = 0; y0 + win <= H; ++y0)
            for (int x0 = 0; x0 + win <= W; ++x0) {
                double ma = 0, mb = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        ma += k[i][j] / tot * at(a, c, y0 + i, x0 + j);
                        mb += k[i][j] / tot * at(b, c, y0 + i, x0 + j);
                    }
                double va = 0, vb = 0, cv = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double da = at(a, c, y0 + i, x0 + j) - ma, db = at(b, c, y0 + i, x0 + j) - mb;
                        va += k[i][j] / tot * da * da;
                        vb += k[i][j] / tot * db * db;
                        cv += k[i][j] / tot * da * db;
                    }
                const double c1 = 1e-4, c2 = 9e-4;
                s += (2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++n;
            }
        mean_over_channels += s / n;
    }
    return mean_over_channels / C;
}

}  // namespace tadsr::testing
