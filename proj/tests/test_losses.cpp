#include <cmath>

#include "doctest.h"
#include "fd_cases.hpp"
#include "tadsr/error.hpp"
#include "tadsr/optim.hpp"

using namespace tadsr;
using namespace tadsr::testing;

namespace {

struct Toy {
    ArchDescriptor arch = compact_arch();
    NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    ParamStore params;
    ParamStore teacher;
    LoraSet critic;
    ParamStore probe;

    explicit Toy(std::uint64_t seed = 1) {
        params = init_params(arch, seed);
        teacher = params.select("unet.");
        teacher.set_arch(arch);
        critic = init_lora(teacher, 2, seed + 100);
        probe = make_probe(arch, seed + 200);
    }
    VSDContext ctx(OmegaKind omega = OmegaKind::unit) const {
        return {&teacher, &teacher, &critic, &sched, omega, 20, 980};
    }
    Tensor latent(int n, std::uint64_t seed) const {
        return random_tensor({n, arch.latent_channels, arch.latent_size(), arch.latent_size()}, seed);
    }
    Tensor image(int n, std::uint64_t seed) const {
        return uniform_tensor({n, 3, arch.image_size, arch.image_size}, seed);
    }
};

}  // namespace

TEST_CASE("omega weights") {
    Toy toy;
    CHECK(omega_weight(500, toy.ctx()) == 1.0);
    const double b = toy.sched.beta_at(500);
    CHECK(omega_weight(500, toy.ctx(OmegaKind::snr)) == doctest::Approx(b * b));
}

TEST_CASE("fresh critic gives zero guidance") {
    Toy toy;
    const Tensor z = toy.latent(3, 1);
    const std::vector<int> t{20, 500, 980};
    CHECK(all_zero(vsd_gradient(z, t, toy.latent(3, 2), toy.ctx())));
    const std::vector<int> ts{0, 400, 999};
    const TavsdTerm term = tavsd_loss(ag::parameter(z), ts, TimestepMap{}, toy.ctx(), toy.latent(3, 3));
    CHECK(all_zero(term.g));
    CHECK(term.t_v == std::vector<int>{100, 260, 500});
}

TEST_CASE("guidance outside the clamp band is rejected") {
    Toy toy;
    const std::vector<int> t{5};
    CHECK_THROWS_AS(vsd_gradient(toy.latent(1, 1), t, toy.latent(1, 2), toy.ctx()), ParameterError);
}

TEST_CASE("noise and clean-latent residuals agree") {
    Toy toy;
    randomize_b(toy.critic, 5, 0.05);
    for (auto omega : {OmegaKind::unit, OmegaKind::snr}) {
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            const std::vector<int> t{20 + 96 * i, 980 - 50 * i};
            const Tensor z = toy.latent(2, derive_seed(6, i));
            const Tensor eps = toy.latent(2, derive_seed(7, i));
            worst = std::max(worst, max_abs_diff(vsd_gradient(z, t, eps, toy.ctx(omega)),
                                                 vsd_gradient_x0(z, t, eps, toy.ctx(omega))));
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("surrogate derivative equals g over numel") {
    Toy toy;
    randomize_b(toy.critic, 8, 0.05);
    const Tensor z = toy.latent(2, 9);
    const std::vector<int> ts{300, 700};
    ag::Var zv = ag::parameter(z);
    const TavsdTerm term = tavsd_loss(zv, ts, TimestepMap{}, toy.ctx(), toy.latent(2, 10));
    ag::backward(term.surrogate);
    const double n = static_cast<double>(z.numel());
    for (std::size_t i = 0; i < z.numel(); i += 7) {
        Tensor up = z, down = z;
        up[i] += 1e-3f;
        down[i] -= 1e-3f;
        const double h = static_cast<double>(up[i]) - down[i];
        const double fd = (ag::mean_dot(ag::constant(up), term.g).value().item() -
                           ag::mean_dot(ag::constant(down), term.g).value().item()) / h;
        const double expect = term.g[i] / n;
        CHECK(zv.grad()[i] == doctest::Approx(expect).epsilon(1e-6));
        if (std::abs(expect) > 1e-4) CHECK(std::abs(fd - expect) / std::abs(expect) < 1e-2);
    }
}

TEST_CASE("a degenerate map reduces the time-aware term to plain guidance") {
    Toy toy;
    randomize_b(toy.critic, 11, 0.05);
    TimestepMap m;
    m.lam = 1e-9;
    m.gamma = 450;
    const Tensor z = toy.latent(2, 12), eps = toy.latent(2, 13);
    const std::vector<int> ts{3, 990};
    const std::vector<int> fixed{450, 450};
    const TavsdTerm term = tavsd_loss(ag::constant(z), ts, m, toy.ctx(), eps);
    CHECK(bit_equal(term.g, vsd_gradient(z, fixed, eps, toy.ctx())));
}

TEST_CASE("blurred MSE") {
    // Near-delta kernel at t_s = 0.
    const Tensor a = uniform_tensor({3, 16, 16}, 14), b = uniform_tensor({3, 16, 16}, 15);
    const double plain = ag::mse(ag::constant(a), ag::constant(b)).value().item();
    CHECK(std::abs(blurred_mse(a, b, 0) - plain) / plain < 0.05);
    for (int t : {0, 100, 500, 999}) {
        const Tensor c1({3, 16, 16}, 0.9f), c2({3, 16, 16}, 0.15f);
        const double d = static_cast<double>(0.9f) - static_cast<double>(0.15f);
        CHECK(std::abs(blurred_mse(c1, c2, t) - d * d) < 1e-8);
    }
    Tensor y = a;
    const float amp = 0.2f;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) y[(c * 16 + i) * 16 + j] += (i + j) % 2 ? -amp : amp;
    const double a2 = static_cast<double>(amp) * amp;
    CHECK(ag::mse(ag::constant(y), ag::constant(a)).value().item() == doctest::Approx(a2).epsilon(1e-5));
    CHECK(blurred_mse(y, a, 999) < 0.05 * a2);
    // Larger t_s suppresses more.
    CHECK(blurred_mse(y, a, 999) < blurred_mse(y, a, 300));
    CHECK(blurred_mse(y, a, 300) < blurred_mse(y, a, 0));
}

TEST_CASE("blurred MSE uses one kernel per sample") {
    Toy toy;
    const Tensor x = toy.image(2, 16), y = toy.image(2, 17);
    const std::vector<int> ts{0, 999};
    const double batched = blurred_mse(ag::constant(x), ag::constant(y), ts).value().item();
    const double sep = 0.5 * (blurred_mse(unstack_at(x, 0), unstack_at(y, 0), 0) +
                              blurred_mse(unstack_at(x, 1), unstack_at(y, 1), 999));
    CHECK(batched == doctest::Approx(sep).epsilon(1e-6));
}

TEST_CASE("perceptual surrogate") {
    Toy toy;
    const Tensor x = uniform_tensor({3, 16, 16}, 18), y = uniform_tensor({3, 16, 16}, 19);
    CHECK(perceptual(x, x, toy.probe) == 0.0);
    CHECK(perceptual(x, y, toy.probe) == perceptual(y, x, toy.probe));
    const Tensor noise = random_tensor({3, 16, 16}, 20);
    double prev = 0.0;
    for (double amp : {0.01, 0.05, 0.1}) {
        Tensor n = x;
        for (std::size_t i = 0; i < n.numel(); ++i) n[i] += static_cast<float>(amp * noise[i]);
        const double p = perceptual(n, x, toy.probe);
        CHECK(p > prev);
        prev = p;
    }
}

TEST_CASE("student loss identities") {
    Toy toy;
    const Tensor x_l = toy.image(2, 21);
    const Tensor eps = toy.latent(2, 22);
    const std::vector<int> ts{100, 900};
    const TimestepMap m;
    WeightBinding pb(toy.probe);

    // Fresh critic: total equals reconstruction exactly.
    {
        WeightBinding sb(toy.params);
        const StudentTerms st =
            student_loss(x_l, toy.image(2, 23), ts, sb, StudentHead::x0_residual, pb, toy.ctx(), m, eps, {1.0, 1.0});
        CHECK(st.total.value().item() == st.rec.value().item());
        CHECK(st.rec.value().item() > 0.0f);
        CHECK(all_zero(st.tavsd.g));
    }
    // Perfect reconstruction without guidance gives zero.
    {
        WeightBinding sb(toy.params);
        const StudentTerms first =
            student_loss(x_l, toy.image(2, 23), ts, sb, StudentHead::x0_residual, pb, toy.ctx(), m, eps, {0.0, 1.0});
        WeightBinding sb2(toy.params);
        const StudentTerms st = student_loss(x_l, first.x_hat.value(), ts, sb2, StudentHead::x0_residual, pb,
                                             toy.ctx(), m, eps, {0.0, 1.0});
        CHECK(st.total.value().item() == 0.0f);
    }
}

TEST_CASE("student loss finite differences") {
    const FdSummary s = student_loss_fd(10, 31);
    CHECK(s.checked == 10);
    CHECK(s.worst < 1e-2);
}

TEST_CASE("critic diffusion loss") {
    Toy toy;
    const Tensor z = toy.latent(4, 24), eps = toy.latent(4, 25);
    const std::vector<int> t{50, 300, 600, 900};
    // Fresh adapters reproduce the teacher's noise-prediction error.
    WeightBinding cb(toy.teacher, {}, &toy.critic, true);
    ag::Var l0 = lora_diffusion_loss(z, t, eps, toy.ctx(), cb);
    WeightBinding tb(toy.teacher);
    const Tensor pred = unet_forward(ag::constant(add_noise_batch(z, t, eps, toy.sched)), t, tb, UnetHead::eps).value();
    CHECK(l0.value().item() == ag::mse(ag::constant(pred), ag::constant(eps)).value().item());
    CHECK(std::isfinite(l0.value().item()));
    CHECK(l0.value().item() > 0.0f);

    // One step at the distillation rate descends on the same batch.
    ag::backward(l0);
    CHECK(cb.base_grads().empty());
    AdamW opt;
    opt.step(toy.critic.tensors, cb.lora_grads(), 5e-5);
    WeightBinding cb2(toy.teacher, {}, &toy.critic, false);
    CHECK(lora_diffusion_loss(z, t, eps, toy.ctx(), cb2).value().item() < l0.value().item());

    const FdSummary s = lora_loss_fd(10, 32);
    CHECK(s.checked == 10);
    CHECK(s.worst < 1e-2);
}
