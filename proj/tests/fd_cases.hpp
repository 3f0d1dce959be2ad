#pragma once

// Finite-difference setups shared by the unit tests and the acceptance run.

#include <algorithm>

#include "tadsr/gradcheck.hpp"
#include "tadsr/losses.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/schedule.hpp"
#include "tadsr/selftest.hpp"
#include "test_util.hpp"

namespace tadsr::testing {

struct FdSummary {
    int checked = 0;
    double worst = 0.0;
};

inline FdSummary summarize(const std::vector<GradCheckResult>& rs) {
    FdSummary s;
    for (const auto& r : rs) {
        s.worst = std::max(s.worst, r.rel_error);
        ++s.checked;
    }
    return s;
}

/// Student objective with the guidance frozen at its value for the unperturbed
/// parameters, which is exactly the function the stop-gradient backward differentiates.
inline FdSummary student_loss_fd(int k, std::uint64_t seed) {
    const ArchDescriptor arch = compact_arch();
    const NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    ParamStore student = init_params(arch, derive_seed(seed, 1));
    ParamStore teacher = student.select("unet.");
    teacher.set_arch(arch);
    LoraSet critic = init_lora(teacher, 2, derive_seed(seed, 2));
    randomize_b(critic, derive_seed(seed, 3), 0.05);
    // Exercise the time pathway and the clean-latent head too.
    for (auto& e : student.entries()) {
        if (e.name.find(".film.weight") != std::string::npos || e.name.starts_with("unet.x0_head.weight")) {
            CounterRng rng(derive_seed(seed, 4), fnv1a64(e.name));
            for (float& v : e.tensor.values()) v = static_cast<float>(0.05 * rng.normal());
        }
    }
    const ParamStore probe = make_probe(arch, derive_seed(seed, 5));
    const VSDContext ctx{&teacher, &teacher, &critic, &sched, OmegaKind::unit, 20, 980};
    const TimestepMap map;
    const int s = arch.image_size, l = arch.latent_size();
    const Tensor x_l = uniform_tensor({2, 3, s, s}, derive_seed(seed, 6));
    const Tensor x_h = uniform_tensor({2, 3, s, s}, derive_seed(seed, 7));
    const Tensor eps = random_tensor({2, arch.latent_channels, l, l}, derive_seed(seed, 8));
    const std::vector<int> t_s{150, 820};
    const LossWeights w{1.0, 1.0};

    WeightBinding sb(student, prefix_predicate({"tae.", "unet.", "dec."}));
    WeightBinding pb(probe);
    StudentTerms terms = student_loss(x_l, x_h, t_s, sb, StudentHead::x0_residual, pb, ctx, map, eps, w);
    ag::backward(terms.total);
    const GradMap grads = sb.base_grads();
    const Tensor g = terms.tavsd.g;
    auto loss = [&] {
        WeightBinding b(student);
        WeightBinding p(probe);
        return static_cast<double>(
            student_loss(x_l, x_h, t_s, b, StudentHead::x0_residual, p, ctx, map, eps, w, &g).total.item());
    };
    return summarize(finite_difference_check(student, pick_coordinates(grads, k, derive_seed(seed, 9)), loss, grads));
}

inline FdSummary lora_loss_fd(int k, std::uint64_t seed) {
    const ArchDescriptor arch = compact_arch();
    const NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    ParamStore teacher = init_params(arch, derive_seed(seed, 1)).select("unet.");
    teacher.set_arch(arch);
    LoraSet critic = init_lora(teacher, 2, derive_seed(seed, 2));
    randomize_b(critic, derive_seed(seed, 3), 0.05);
    const VSDContext ctx{&teacher, &teacher, &critic, &sched, OmegaKind::unit, 20, 980};
    const int l = arch.latent_size();
    const Tensor z = random_tensor({2, arch.latent_channels, l, l}, derive_seed(seed, 4));
    const Tensor eps = random_tensor(z.shape(), derive_seed(seed, 5));
    const std::vector<int> t{150, 700};
    WeightBinding cb(teacher, {}, &critic, true);
    ag::backward(lora_diffusion_loss(z, t, eps, ctx, cb));
    const GradMap grads = cb.lora_grads();
    auto loss = [&] {
        WeightBinding b(teacher, {}, &critic, false);
        return static_cast<double>(lora_diffusion_loss(z, t, eps, ctx, b).item());
    };
    return summarize(
        finite_difference_check(critic.tensors, pick_coordinates(grads, k, derive_seed(seed, 6)), loss, grads));
}

}  // namespace tadsr::testing
