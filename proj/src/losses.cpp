#include "tadsr/losses.hpp"

#include <cmath>

#include "tadsr/error.hpp"
#include "tadsr/imaging.hpp"

namespace tadsr {

using ag::Var;

double omega_weight(int t, const VSDContext& ctx) {
    if (ctx.omega == OmegaKind::unit) return 1.0;
    const double b = ctx.schedule->beta_at(t);
    return b * b;
}

Tensor add_noise_batch(const Tensor& z0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(z0, eps, "add_noise_batch");
    if (z0.rank() != 4 || static_cast<int>(t.size()) != z0.dim(0)) {
        throw ShapeError("add_noise_batch: one timestep per sample required");
    }
    Tensor out(z0.shape());
    const std::size_t per = z0.numel() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double a = s.alpha_at(t[n]), b = s.beta_at(t[n]);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
        }
    }
    return out;
}

namespace {

void check_band(std::span<const int> t, const VSDContext& ctx) {
    for (int v : t) {
        if (v < ctx.t_min || v > ctx.t_max) {
            throw ParameterError("VSD timestep " + std::to_string(v) + " outside [" + std::to_string(ctx.t_min) +
                                 ", " + std::to_string(ctx.t_max) + "]");
        }
    }
}

struct EpsPair {
    Tensor z_t;
    Tensor teacher;
    Tensor critic;
};

EpsPair predict_pair(const Tensor& z_hat, std::span<const int> t, const Tensor& eps, const VSDContext& ctx) {
    check_band(t, ctx);
    EpsPair out;
    out.z_t = add_noise_batch(z_hat, t, eps, *ctx.schedule);
    WeightBinding teacher(*ctx.teacher);
    out.teacher = unet_forward(ag::constant(out.z_t), t, teacher, UnetHead::eps).value();
    WeightBinding critic(*ctx.lora_base, {}, ctx.adapters, false);
    out.critic = unet_forward(ag::constant(out.z_t), t, critic, UnetHead::eps).value();
    return out;
}

}  // namespace

Tensor vsd_gradient(const Tensor& z_hat, std::span<const int> t, const Tensor& eps, const VSDContext& ctx) {
    const EpsPair p = predict_pair(z_hat, t, eps, ctx);
    Tensor g(z_hat.shape());
    const std::size_t per = z_hat.numel() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double w = omega_weight(t[n], ctx);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            g[i] = static_cast<float>(w * (static_cast<double>(p.teacher[i]) - p.critic[i]));
        }
    }
    return g;
}

Tensor vsd_gradient_x0(const Tensor& z_hat, std::span<const int> t, const Tensor& eps, const VSDContext& ctx) {
    const EpsPair p = predict_pair(z_hat, t, eps, ctx);
    Tensor g(z_hat.shape());
    const std::size_t per = z_hat.numel() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double a = ctx.schedule->alpha_at(t[n]), b = ctx.schedule->beta_at(t[n]);
        const double w = omega_weight(t[n], ctx);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const double x0_teacher = (p.z_t[i] - b * p.teacher[i]) / a;
            const double x0_critic = (p.z_t[i] - b * p.critic[i]) / a;
            g[i] = static_cast<float>(-w * (a / b) * (x0_teacher - x0_critic));
        }
    }
    return g;
}

TavsdTerm tavsd_loss(const Var& z_hat, std::span<const int> t_s, const TimestepMap& m, const VSDContext& ctx,
                     const Tensor& eps) {
    TavsdTerm out;
    for (int t : t_s) out.t_v.push_back(map_timestep(t, m));
    out.g = vsd_gradient(z_hat.value(), out.t_v, eps, ctx);
    out.surrogate = ag::mean_dot(z_hat, out.g);
    return out;
}

std::vector<float> blur_kernel_for(int t_s) {
    const BlurSpec spec = blur_sigma_for_t(t_s);
    return gaussian_kernel(spec.sigma, spec.kernel_size);
}

Var blurred_mse(const Var& x_hat, const Var& x_h, std::span<const int> t_s) {
    if (x_hat.shape() != x_h.shape()) {
        throw ShapeError("blurred_mse: " + shape_to_string(x_hat.shape()) + " vs " + shape_to_string(x_h.shape()));
    }
    std::vector<std::vector<float>> kernels;
    for (int t : t_s) kernels.push_back(blur_kernel_for(t));
    return ag::mse(ag::blur_reflect(x_hat, kernels), ag::blur_reflect(x_h, kernels));
}

namespace {

Tensor batch_of_one(const Tensor& x) {
    std::vector<int> shape = x.shape();
    shape.insert(shape.begin(), 1);
    return x.reshaped(shape);
}

}  // namespace

double blurred_mse(const Tensor& x_hat, const Tensor& x_h, int t_s) {
    require_same_shape(x_hat, x_h, "blurred_mse");
    if (x_hat.rank() != 3) throw ShapeError("blurred_mse: expected C x H x W, got " + shape_to_string(x_hat.shape()));
    // Evaluated in double on the difference image (the blur is linear), with
    // the taps renormalised in double so constant images are reproduced exactly.
    const std::vector<float> kf = blur_kernel_for(t_s);
    std::vector<double> k(kf.begin(), kf.end());
    double ksum = 0.0;
    for (double v : k) ksum += v;
    for (double& v : k) v /= ksum;
    const int r = static_cast<int>(k.size()) / 2;
    const int c = x_hat.dim(0), h = x_hat.dim(1), w = x_hat.dim(2);
    std::vector<double> d(x_hat.numel()), tmp(x_hat.numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(x_hat[i]) - x_h[i];
    double s = 0.0;
    for (int p = 0; p < c; ++p) {
        const std::size_t off = static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) acc += k[t + r] * d[off + i * w + ag::reflect_index(j + t, w)];
                tmp[off + i * w + j] = acc;
            }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) acc += k[t + r] * tmp[off + ag::reflect_index(i + t, h) * w + j];
                s += acc * acc;
            }
    }
    return s / static_cast<double>(d.size());
}

Var perceptual(const Var& x_hat, const Var& x_h, WeightBinding& probe) {
    if (x_hat.shape() != x_h.shape()) throw ShapeError("perceptual: shape mismatch");
    const auto fa = probe_features(x_hat, probe);
    const auto fb = probe_features(x_h, probe);
    Var total = ag::mean_abs_diff(fa[0], fb[0]);
    for (std::size_t l = 1; l < fa.size(); ++l) total = ag::add(total, ag::mean_abs_diff(fa[l], fb[l]));
    return ag::scale(total, 1.0f / static_cast<float>(fa.size()));
}

double perceptual(const Tensor& x_hat, const Tensor& x_h, const ParamStore& probe) {
    WeightBinding b(probe);
    return perceptual(ag::constant(batch_of_one(x_hat)), ag::constant(batch_of_one(x_h)), b).value().item();
}

StudentTerms student_loss(const Tensor& x_l_up, const Tensor& x_h, std::span<const int> t_s, WeightBinding& student,
                          StudentHead head, WeightBinding& probe, const VSDContext& ctx, const TimestepMap& m,
                          const Tensor& eps, const LossWeights& w, const Tensor* frozen_g) {
    StudentTerms out;
    Var z_l = tae_encode(ag::constant(x_l_up), t_s, student);
    out.z_hat = student_unet(z_l, t_s, student, head, *ctx.schedule);
    out.x_hat = vae_decode(out.z_hat, student);
    Var target = ag::constant(x_h);
    out.blurred = blurred_mse(out.x_hat, target, t_s);
    out.percep = perceptual(out.x_hat, target, probe);
    out.rec = ag::add_scaled(out.blurred, out.percep, static_cast<float>(w.lambda_percep));
    if (frozen_g) {
        for (int t : t_s) out.tavsd.t_v.push_back(map_timestep(t, m));
        out.tavsd.g = *frozen_g;
        out.tavsd.surrogate = ag::mean_dot(out.z_hat, out.tavsd.g);
    } else if (w.lambda_tavsd != 0.0) {
        out.tavsd = tavsd_loss(out.z_hat, t_s, m, ctx, eps);
    } else {
        for (int t : t_s) out.tavsd.t_v.push_back(map_timestep(t, m));
        out.tavsd.g = Tensor(out.z_hat.shape(), 0.0f);
        out.tavsd.surrogate = ag::mean_dot(out.z_hat, out.tavsd.g);
    }
    out.total = ag::add_scaled(out.rec, out.tavsd.surrogate, static_cast<float>(w.lambda_tavsd));
    return out;
}

Var lora_diffusion_loss(const Tensor& z_hat_detached, std::span<const int> t, const Tensor& eps_prime,
                        const VSDContext& ctx, WeightBinding& critic) {
    Tensor z_t = add_noise_batch(z_hat_detached, t, eps_prime, *ctx.schedule);
    Var pred = unet_forward(ag::constant(std::move(z_t)), t, critic, UnetHead::eps);
    return ag::mse(pred, ag::constant(eps_prime));
}

}  // namespace tadsr
