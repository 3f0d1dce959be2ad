#include <cmath>
#include <functional>

#include "doctest.h"
#include "tadsr/autograd.hpp"
#include "tadsr/error.hpp"
#include "test_util.hpp"

using namespace tadsr;
using tadsr::testing::random_tensor;

namespace {

using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

/// Compares backprop against central differences for every input element of a
/// scalar function; returns the worst relative error (absolute near zero).
double worst_fd_error(const std::vector<Tensor>& inputs, const Fn& f, double eps = 1e-2) {
    std::vector<ag::Var> vars;
    for (const auto& t : inputs) vars.push_back(ag::parameter(t));
    ag::backward(f(vars));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            auto eval = [&](float delta) {
                std::vector<ag::Var> c;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == k) t[i] += delta;
                    c.push_back(ag::constant(t));
                }
                return static_cast<double>(f(c).value().item());
            };
            const double num = (eval(static_cast<float>(eps)) - eval(static_cast<float>(-eps))) / (2 * eps);
            const double ana = vars[k].grad().empty() ? 0.0 : vars[k].grad()[i];
            const double err = std::abs(num - ana) / std::max(1.0, std::max(std::abs(num), std::abs(ana)));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// Weighted sum so every output element carries a distinct gradient.
ag::Var probe_sum(const ag::Var& y, std::uint64_t seed) { return ag::mean_dot(y, random_tensor(y.shape(), seed)); }

}  // namespace

TEST_CASE("elementwise ops") {
    const Tensor a = random_tensor({2, 3, 4}, 1), b = random_tensor({2, 3, 4}, 2);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return probe_sum(ag::add(v[0], v[1]), 9); }) < 1e-3);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return probe_sum(ag::sub(v[0], v[1]), 9); }) < 1e-3);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return probe_sum(ag::mul(v[0], v[1]), 9); }) < 1e-3);
    CHECK(worst_fd_error({a}, [](auto& v) { return probe_sum(ag::scale(v[0], -1.5f), 9); }) < 1e-3);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return probe_sum(ag::add_scaled(v[0], v[1], 0.3f), 9); }) < 1e-3);
    CHECK(worst_fd_error({a}, [](auto& v) { return probe_sum(ag::silu(v[0]), 9); }) < 1e-3);
}

TEST_CASE("conv2d gradients for stride, padding and pointwise cases") {
    const Tensor x = random_tensor({2, 3, 7, 6}, 3);
    for (int k : {1, 3}) {
        for (int stride : {1, 2}) {
            const int pad = k / 2;
            const Tensor w = random_tensor({4, 3, k, k}, 4, 0.3);
            const Tensor b = random_tensor({4}, 5);
            const double err = worst_fd_error({x, w, b}, [&](auto& v) {
                return probe_sum(ag::conv2d(v[0], v[1], v[2], stride, pad), 6);
            });
            CAPTURE(k);
            CAPTURE(stride);
            CHECK(err < 2e-3);
        }
    }
}

TEST_CASE("conv2d matches a direct loop") {
    const Tensor x = random_tensor({1, 2, 5, 5}, 7);
    const Tensor w = random_tensor({3, 2, 3, 3}, 8);
    const Tensor b = random_tensor({3}, 9);
    const Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 2, 1).value();
    REQUIRE(y.shape() == std::vector<int>{1, 3, 3, 3});
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = b[o];
                for (int c = 0; c < 2; ++c)
                    for (int ki = 0; ki < 3; ++ki)
                        for (int kj = 0; kj < 3; ++kj) {
                            const int ih = 2 * i - 1 + ki, iw = 2 * j - 1 + kj;
                            if (ih < 0 || ih >= 5 || iw < 0 || iw >= 5) continue;
                            s += static_cast<double>(w[((o * 2 + c) * 3 + ki) * 3 + kj]) * x[(c * 5 + ih) * 5 + iw];
                        }
                CHECK(y[(o * 3 + i) * 3 + j] == doctest::Approx(s).epsilon(1e-5));
            }
    CHECK_THROWS_AS(ag::conv2d(ag::constant(x), ag::constant(random_tensor({3, 4, 3, 3}, 1)), ag::Var(), 1, 1),
                    ShapeError);
}

TEST_CASE("linear, matmul and reshape") {
    const Tensor x = random_tensor({3, 5}, 10), w = random_tensor({4, 5}, 11), b = random_tensor({4}, 12);
    CHECK(worst_fd_error({x, w, b}, [](auto& v) { return probe_sum(ag::linear(v[0], v[1], v[2]), 13); }) < 1e-3);
    const Tensor m = random_tensor({4, 2}, 14), n = random_tensor({2, 6}, 15);
    CHECK(worst_fd_error({m, n}, [](auto& v) {
              return probe_sum(ag::reshape(ag::matmul(v[0], v[1]), {2, 2, 6}), 16);
          }) < 1e-3);
}

TEST_CASE("film, broadcast, upsample, concat and per-sample affine") {
    const Tensor h = random_tensor({2, 3, 4, 4}, 17), ss = random_tensor({2, 6}, 18);
    CHECK(worst_fd_error({h, ss}, [](auto& v) { return probe_sum(ag::film(v[0], v[1]), 19); }) < 1e-3);
    const Tensor e = random_tensor({5}, 20);
    CHECK(worst_fd_error({e}, [](auto& v) { return probe_sum(ag::broadcast_rows(v[0], 3), 21); }) < 1e-3);
    CHECK(worst_fd_error({h}, [](auto& v) { return probe_sum(ag::upsample_nearest2x(v[0]), 22); }) < 1e-3);
    const Tensor g = random_tensor({2, 2, 4, 4}, 23);
    CHECK(worst_fd_error({h, g}, [](auto& v) { return probe_sum(ag::concat_channels(v[0], v[1]), 24); }) < 1e-3);
    const std::vector<float> ca{0.5f, -2.0f}, cb{1.5f, 0.25f};
    const Tensor h2 = random_tensor({2, 3, 4, 4}, 25);
    CHECK(worst_fd_error({h, h2}, [&](auto& v) { return probe_sum(ag::per_sample_affine(v[0], ca, v[1], cb), 26); }) <
          1e-3);
}

TEST_CASE("film computes scale and shift per channel") {
    Tensor h({1, 2, 1, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor ss({1, 4}, std::vector<float>{2, -1, 10, 20});
    const Tensor y = ag::film(ag::constant(h), ag::constant(ss)).value();
    CHECK(y.values()[0] == 12.0f);
    CHECK(y.values()[1] == 14.0f);
    CHECK(y.values()[2] == 17.0f);
    CHECK(y.values()[3] == 16.0f);
}

TEST_CASE("blur_reflect gradients with per-sample kernels") {
    const Tensor x = random_tensor({2, 2, 6, 5}, 27);
    const std::vector<std::vector<float>> kernels{{0.25f, 0.5f, 0.25f}, {0.1f, 0.2f, 0.4f, 0.2f, 0.1f}};
    CHECK(worst_fd_error({x}, [&](auto& v) { return probe_sum(ag::blur_reflect(v[0], kernels), 28); }) < 1e-3);
}

TEST_CASE("reductions") {
    const Tensor a = random_tensor({2, 3, 3}, 29), b = random_tensor({2, 3, 3}, 30);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return ag::mse(v[0], v[1]); }) < 1e-3);
    CHECK(worst_fd_error({a, b}, [](auto& v) { return ag::mean_abs_diff(v[0], v[1]); }, 1e-3) < 1e-3);
    CHECK(ag::mse(ag::constant(a), ag::constant(a)).value().item() == 0.0f);
}

TEST_CASE("gradients accumulate across shared uses and skip constants") {
    ag::Var x = ag::parameter(Tensor({3}, 2.0f));
    ag::Var c = ag::constant(Tensor({3}, 5.0f));
    ag::Var y = ag::mean_dot(ag::add(ag::mul(x, x), ag::mul(x, c)), Tensor({3}, 1.0f));
    ag::backward(y);
    for (float g : x.grad().values()) CHECK(g == doctest::Approx((2 * 2.0 + 5.0) / 3.0));
    CHECK(c.grad().empty());
    // Pure inference keeps no closures.
    ag::Var z = ag::silu(ag::add(c, c));
    CHECK_FALSE(z.requires_grad());
    CHECK_FALSE(static_cast<bool>(z.node()->backward));
    CHECK_THROWS(ag::backward(ag::add(x, x)));
}

TEST_CASE("reflect index") {
    CHECK(ag::reflect_index(-1, 5) == 1);
    CHECK(ag::reflect_index(-2, 5) == 2);
    CHECK(ag::reflect_index(5, 5) == 3);
    CHECK(ag::reflect_index(6, 5) == 2);
    CHECK(ag::reflect_index(3, 5) == 3);
    CHECK(ag::reflect_index(0, 1) == 0);
}
