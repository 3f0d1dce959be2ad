#pragma once

#include <vector>

#include "tadsr/tensor.hpp"

namespace tadsr {

/// Discrete variance-preserving diffusion: z_t = alpha_t * z0 + beta_t * eps,
/// with alpha_t^2 + beta_t^2 = 1. Immutable after construction.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;
    std::vector<double> beta;

    double alpha_at(int t) const;
    double beta_at(int t) const;
};

/// Linear-beta construction: b_i interpolates beta_start -> beta_end over T
/// steps, alpha_t = sqrt(prod_{i<=t} (1 - b_i)), beta_t = sqrt(1 - alpha_t^2).
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);
/// (z_t - beta_t * eps_hat) / alpha_t
Tensor x0_from_eps(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& s);
/// (z_t - alpha_t * x0_hat) / beta_t
Tensor eps_from_x0(const Tensor& z_t, int t, const Tensor& x0_hat, const NoiseSchedule& s);

/// Student-to-teacher timestep map t_v = clamp(round(lam * t_s + gamma), t_min, t_max).
struct TimestepMap {
    double lam = 0.4;
    double gamma = 100.0;
    int t_min = 20;
    int t_max = 980;

    void validate(int T) const;
};

int map_timestep(int t_s, const TimestepMap& m);

/// Student conditioning timesteps live on [0, kStudentTimesteps - 1].
inline constexpr int kStudentTimesteps = 1000;

struct BlurSchedule {
    double sigma_min = 0.1;
    double sigma_max = 3.0;
};

struct BlurSpec {
    double sigma;
    int kernel_size;
};

/// Gaussian width for the reconstruction loss at conditioning step t_s;
/// linear in t_s, kernel_size = 2 * ceil(3 sigma) + 1.
BlurSpec blur_sigma_for_t(int t_s, const BlurSchedule& b = {});

}  // namespace tadsr
