#include "tadsr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tadsr/error.hpp"

namespace tadsr {

namespace {

void check_t(int t, const NoiseSchedule& s) {
    if (t < 0 || t >= s.T) {
        throw ParameterError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T - 1) + "]");
    }
}

}  // namespace

double NoiseSchedule::alpha_at(int t) const {
    check_t(t, *this);
    return alpha[static_cast<std::size_t>(t)];
}

double NoiseSchedule::beta_at(int t) const {
    check_t(t, *this);
    return beta[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ParameterError("schedule needs T >= 2");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
        throw ParameterError("schedule needs 0 < beta_start < beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.alpha.resize(static_cast<std::size_t>(T));
    s.beta.resize(static_cast<std::size_t>(T));
    double cumulative = 1.0;
    for (int t = 0; t < T; ++t) {
        const double b = beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
        cumulative *= 1.0 - b;
        s.alpha[static_cast<std::size_t>(t)] = std::sqrt(cumulative);
        s.beta[static_cast<std::size_t>(t)] = std::sqrt(1.0 - cumulative);
    }
    return s;
}

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(z0, eps, "add_noise");
    const double a = s.alpha_at(t), b = s.beta_at(t);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < z0.numel(); ++i) out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
    return out;
}

Tensor x0_from_eps(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& s) {
    require_same_shape(z_t, eps_hat, "x0_from_eps");
    const double a = s.alpha_at(t);
    if (a < 1e-8) throw NumericalDomainError("x0_from_eps: alpha_t below 1e-8 at t=" + std::to_string(t));
    const double b = s.beta_at(t);
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < z_t.numel(); ++i) out[i] = static_cast<float>((z_t[i] - b * eps_hat[i]) / a);
    return out;
}

Tensor eps_from_x0(const Tensor& z_t, int t, const Tensor& x0_hat, const NoiseSchedule& s) {
    require_same_shape(z_t, x0_hat, "eps_from_x0");
    const double b = s.beta_at(t);
    if (b < 1e-8) throw NumericalDomainError("eps_from_x0: beta_t below 1e-8 at t=" + std::to_string(t));
    const double a = s.alpha_at(t);
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < z_t.numel(); ++i) out[i] = static_cast<float>((z_t[i] - a * x0_hat[i]) / b);
    return out;
}

void TimestepMap::validate(int T) const {
    if (!(lam > 0.0)) throw ParameterError("timestep map needs lam > 0");
    if (t_min < 0 || t_min >= t_max || t_max > T - 1) {
        throw ParameterError("timestep map needs 0 <= t_min < t_max <= T-1");
    }
}

int map_timestep(int t_s, const TimestepMap& m) {
    if (t_s < 0 || t_s >= kStudentTimesteps) {
        throw ParameterError("t_s " + std::to_string(t_s) + " outside [0, 999]");
    }
    // std::lround rounds half away from zero.
    const long v = std::lround(m.lam * t_s + m.gamma);
    return static_cast<int>(std::clamp<long>(v, m.t_min, m.t_max));
}

BlurSpec blur_sigma_for_t(int t_s, const BlurSchedule& b) {
    if (t_s < 0 || t_s >= kStudentTimesteps) {
        throw ParameterError("t_s " + std::to_string(t_s) + " outside [0, 999]");
    }
    const double sigma = b.sigma_min + (b.sigma_max - b.sigma_min) * t_s / (kStudentTimesteps - 1.0);
    // The tolerance keeps 3 * sigma = 9 from ceiling to 10 on rounding noise.
    return {sigma, 2 * static_cast<int>(std::ceil(3.0 * sigma - 1e-9)) + 1};
}

}  // namespace tadsr
