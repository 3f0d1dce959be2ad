#include <cmath>
#include <limits>

#include "doctest.h"
#include "tadsr/error.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace tadsr;
using tadsr::testing::uniform_tensor;

using tadsr::testing::psnr_oracle;
using tadsr::testing::ssim_oracle;

TEST_CASE("psnr") {
    const Tensor a({3, 8, 8}, 0.5f), b({3, 8, 8}, 0.6f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr_serialized(psnr(a, a)) == kPsnrSentinel);
    CHECK(psnr_serialized(31.5) == 31.5);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor x = uniform_tensor({3, 8, 8}, 2 * s + 1), y = uniform_tensor({3, 8, 8}, 2 * s + 2);
        CHECK(std::abs(psnr(x, y) - psnr_oracle(x, y)) < 1e-6);
    }
    CHECK_THROWS_AS(psnr(a, Tensor({3, 8, 9})), ShapeError);
}

TEST_CASE("ssim matches a two-pass oracle") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor x = uniform_tensor({3, 8, 8}, 100 + s), y = uniform_tensor({3, 8, 8}, 200 + s);
        CHECK(std::abs(ssim(x, y, 7, 1.5) - ssim_oracle(x, y, 7, 1.5)) < 1e-6);
    }
    const Tensor x = uniform_tensor({3, 16, 16}, 300), y = uniform_tensor({3, 16, 16}, 301);
    CHECK(std::abs(ssim(x, y) - ssim_oracle(x, y, 11, 1.5)) < 1e-6);
}

TEST_CASE("ssim properties") {
    const Tensor x = uniform_tensor({3, 16, 16}, 400), y = uniform_tensor({3, 16, 16}, 401);
    CHECK(std::abs(ssim(x, x) - 1.0) < 1e-9);
    CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-9);
    Tensor bin({3, 16, 16}), inv({3, 16, 16});
    for (std::size_t i = 0; i < bin.numel(); ++i) {
        bin[i] = x[i] > 0.5f ? 1.0f : 0.0f;
        inv[i] = 1.0f - bin[i];
    }
    CHECK(ssim(bin, inv) < 0.0);
    CHECK_THROWS_AS(ssim(Tensor({3, 8, 8}), Tensor({3, 8, 8})), ShapeError);
    CHECK_THROWS_AS(ssim(x, y, 4), ParameterError);
}

TEST_CASE("high-frequency energy") {
    CHECK(hf_energy(Tensor({3, 10, 10}, 0.3f)) == 0.0);
    const Tensor x = uniform_tensor({3, 16, 16}, 500);
    CHECK(hf_energy(gaussian_blur(x, 2.0)) < hf_energy(x));
    // Laplacian of a checkerboard of amplitude a is -8a at +a sites and +8a at -a sites.
    for (float a : {0.05f, 0.2f}) {
        Tensor cb({2, 9, 9});
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 9; ++i)
                for (int j = 0; j < 9; ++j) cb[(c * 9 + i) * 9 + j] = 0.5f + ((i + j) % 2 ? -a : a);
        CHECK(hf_energy(cb) == doctest::Approx(64.0 * a * a).epsilon(1e-6));
    }
}

TEST_CASE("spearman") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> up{10, 20, 25, 40, 100}, down{5, 4, 3, 2, 1}, flat{1, 1, 1, 1, 1};
    CHECK(spearman(x, up) == doctest::Approx(1.0));
    CHECK(spearman(x, down) == doctest::Approx(-1.0));
    CHECK(spearman(x, flat) == 0.0);
    const std::vector<double> mixed{3, 1, 4, 5, 2};
    double d2 = 0.0;
    for (std::size_t i = 0; i < 5; ++i) d2 += (x[i] - mixed[i]) * (x[i] - mixed[i]);
    CHECK(spearman(x, mixed) == doctest::Approx(1.0 - 6.0 * d2 / (5.0 * 24.0)));
    // Ties take the average rank: ranks (1.5, 1.5, 3, 4, 5).
    const std::vector<double> tied{1, 1, 2, 3, 4};
    CHECK(spearman(x, tied) == doctest::Approx(9.5 / std::sqrt(10.0 * 9.5)));
    CHECK_THROWS(spearman(std::vector<double>{1.0}, std::vector<double>{1.0}));
}
