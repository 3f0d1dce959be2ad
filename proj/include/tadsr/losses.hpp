#pragma once

#include <span>
#include <vector>

#include "tadsr/autograd.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/params.hpp"
#include "tadsr/schedule.hpp"

namespace tadsr {

enum class OmegaKind { unit, snr };

/// Frozen teacher, the critic (teacher base plus trainable adapters) and the
/// schedule they share. `lora_base` is normally the teacher store itself.
struct VSDContext {
    const ParamStore* teacher = nullptr;
    const ParamStore* lora_base = nullptr;
    const LoraSet* adapters = nullptr;
    const NoiseSchedule* schedule = nullptr;
    OmegaKind omega = OmegaKind::unit;
    /// Distillation timesteps must lie in [t_min, t_max].
    int t_min = 20;
    int t_max = 980;
};

double omega_weight(int t, const VSDContext& ctx);

/// g = omega(t) (eps_teacher(z_t) - eps_critic(z_t)) with z_t = add_noise(z_hat, t, eps), per sample.
/// Inputs are N x C x H x W; the result is a constant with the same shape.
Tensor vsd_gradient(const Tensor& z_hat, std::span<const int> t, const Tensor& eps, const VSDContext& ctx);
/// The same quantity through clean-latent predictions: -omega (alpha/beta) (x0_teacher - x0_critic).
Tensor vsd_gradient_x0(const Tensor& z_hat, std::span<const int> t, const Tensor& eps, const VSDContext& ctx);

struct TavsdTerm {
    /// mean(stop(g) * z_hat); only its gradient g / numel is meaningful.
    ag::Var surrogate;
    Tensor g;
    std::vector<int> t_v;
};

TavsdTerm tavsd_loss(const ag::Var& z_hat, std::span<const int> t_s, const TimestepMap& m, const VSDContext& ctx,
                     const Tensor& eps);

/// Normalised Gaussian taps for conditioning step t_s.
std::vector<float> blur_kernel_for(int t_s);
/// mean((x_hat * G - x_h * G)^2) with a per-sample kernel G from t_s and reflect padding.
ag::Var blurred_mse(const ag::Var& x_hat, const ag::Var& x_h, std::span<const int> t_s);
double blurred_mse(const Tensor& x_hat, const Tensor& x_h, int t_s);

/// Mean over probe layers of the mean absolute feature difference.
ag::Var perceptual(const ag::Var& x_hat, const ag::Var& x_h, WeightBinding& probe);
double perceptual(const Tensor& x_hat, const Tensor& x_h, const ParamStore& probe);

struct LossWeights {
    double lambda_tavsd = 1.0;
    double lambda_percep = 1.0;
};

struct StudentTerms {
    ag::Var total;
    ag::Var rec;
    ag::Var blurred;
    ag::Var percep;
    TavsdTerm tavsd;
    ag::Var z_hat;
    ag::Var x_hat;
};

/// z_hat = F(E(x_l_up, t_s), t_s), x_hat = decode(z_hat),
/// total = blurred_mse + lambda_percep * perceptual + lambda_tavsd * tavsd.
/// `x_l_up` is the LQ batch upsampled to HQ size. A non-null `frozen_g`
/// replaces the guidance so the objective is a fixed function of the student.
StudentTerms student_loss(const Tensor& x_l_up, const Tensor& x_h, std::span<const int> t_s, WeightBinding& student,
                          StudentHead head, WeightBinding& probe, const VSDContext& ctx, const TimestepMap& m,
                          const Tensor& eps, const LossWeights& w, const Tensor* frozen_g = nullptr);

/// mean((eps_critic(add_noise(z_hat, t, eps')) - eps')^2); gradients reach only `critic` leaves.
ag::Var lora_diffusion_loss(const Tensor& z_hat_detached, std::span<const int> t, const Tensor& eps_prime,
                            const VSDContext& ctx, WeightBinding& critic);

/// add_noise applied per sample of an N x C x H x W batch.
Tensor add_noise_batch(const Tensor& z0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace tadsr
