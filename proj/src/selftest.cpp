#include "tadsr/selftest.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "tadsr/checkpoint.hpp"
#include "tadsr/degrade.hpp"
#include "tadsr/gradcheck.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/losses.hpp"
#include "tadsr/metrics.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/rng.hpp"
#include "tadsr/schedule.hpp"

namespace tadsr {

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
    Tensor t(std::move(shape));
    CounterRng rng(seed, 0);
    for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
    return t;
}

Tensor uniform_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    CounterRng rng(seed, 0);
    for (float& v : t.values()) v = static_cast<float>(rng.uniform());
    return t;
}

void randomize_b(LoraSet& lora, std::uint64_t seed, double stddev) {
    for (auto& e : lora.tensors.entries()) {
        if (!e.name.ends_with(".lora_B")) continue;
        CounterRng rng(seed, fnv1a64(e.name));
        for (float& v : e.tensor.values()) v = static_cast<float>(stddev * rng.normal());
    }
}

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

Outcome schedule_algebra() {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    double worst_unit = 0.0;
    for (int t = 0; t < s.T; ++t) worst_unit = std::max(worst_unit, std::abs(s.alpha[t] * s.alpha[t] + s.beta[t] * s.beta[t] - 1.0));
    double worst_rt = 0.0;
    CounterRng rng(11, 0);
    for (int i = 0; i < 100; ++i) {
        const int t = rng.uniform_int(0, s.T - 1);
        const Tensor z = random_tensor({4, 12, 12}, derive_seed(12, i));
        const Tensor eps = random_tensor({4, 12, 12}, derive_seed(13, i));
        const Tensor zt = add_noise(z, t, eps, s);
        worst_rt = std::max(worst_rt, max_abs_diff(eps_from_x0(zt, t, x0_from_eps(zt, t, eps, s), s), eps));
    }
    return {worst_unit < 1e-6 && worst_rt < 1e-5,
            "max|a^2+b^2-1|=" + fmt(worst_unit) + " max roundtrip=" + fmt(worst_rt)};
}

Outcome timestep_map_check() {
    const TimestepMap m;
    const bool ok = map_timestep(0, m) == 100 && map_timestep(999, m) == 500 &&
                    blur_sigma_for_t(0).kernel_size == 3 && blur_sigma_for_t(999).kernel_size == 19;
    return {ok, "t_v(0)=" + std::to_string(map_timestep(0, m)) + " t_v(999)=" + std::to_string(map_timestep(999, m))};
}

struct Toy {
    ArchDescriptor arch = compact_arch();
    NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    ParamStore teacher;
    LoraSet critic;

    Toy() {
        teacher = init_params(arch, 21).select("unet.");
        teacher.set_arch(arch);
        critic = init_lora(teacher, 2, 22);
    }

    VSDContext ctx() const { return {&teacher, &teacher, &critic, &sched, OmegaKind::unit, 20, 980}; }
};

Outcome vsd_duality() {
    Toy toy;
    randomize_b(toy.critic, 23, 0.05);
    const int n = toy.arch.latent_size();
    double worst = 0.0;
    CounterRng rng(24, 0);
    for (int i = 0; i < 50; ++i) {
        const int t[1] = {rng.uniform_int(20, 980)};
        const Tensor z = random_tensor({1, toy.arch.latent_channels, n, n}, derive_seed(25, i));
        const Tensor eps = random_tensor({1, toy.arch.latent_channels, n, n}, derive_seed(26, i));
        worst = std::max(worst, max_abs_diff(vsd_gradient(z, t, eps, toy.ctx()), vsd_gradient_x0(z, t, eps, toy.ctx())));
    }
    return {worst < 1e-5, "max diff=" + fmt(worst)};
}

Outcome lora_identity() {
    Toy toy;
    const int n = toy.arch.latent_size();
    const Tensor z = random_tensor({toy.arch.latent_channels, n, n}, 31);
    const bool same = bit_equal(unet_forward(z, 500, toy.teacher, &toy.critic), unet_forward(z, 500, toy.teacher));
    const Tensor zb = z.reshaped({1, toy.arch.latent_channels, n, n});
    const int t[1] = {300};
    const Tensor g = vsd_gradient(zb, t, random_tensor(zb.shape(), 32), toy.ctx());
    bool zero = true;
    for (float v : g.values()) zero = zero && v == 0.0f;
    return {same && zero, std::string(same ? "forward bit-exact" : "forward differs") + (zero ? ", g == 0" : ", g != 0")};
}

Outcome lora_merge_consistency() {
    Toy toy;
    randomize_b(toy.critic, 41, 0.05);
    const int n = toy.arch.latent_size();
    const Tensor z = random_tensor({toy.arch.latent_channels, n, n}, 42);
    const double d = max_abs_diff(unet_forward(z, 400, lora_merge(toy.teacher, toy.critic)),
                                  unet_forward(z, 400, toy.teacher, &toy.critic));
    return {d < 1e-5, "max diff=" + fmt(d)};
}

Outcome blur_checks() {
    double worst = 0.0;
    for (int t : {0, 250, 500, 999}) {
        const Tensor a({3, 16, 16}, 0.7f), b({3, 16, 16}, 0.2f);
        const double diff = static_cast<double>(0.7f) - static_cast<double>(0.2f);
        const double expect = diff * diff;
        worst = std::max(worst, std::abs(blurred_mse(a, b, t) - expect));
    }
    Tensor x = uniform_tensor({3, 16, 16}, 51), y = x;
    const float amp = 0.1f;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) y[(c * 16 + i) * 16 + j] += ((i + j) % 2 ? -amp : amp);
    const double ratio = blurred_mse(y, x, 999) / (static_cast<double>(amp) * amp);
    return {worst < 1e-8 && ratio < 0.05, "dc err=" + fmt(worst) + " nyquist ratio=" + fmt(ratio)};
}

Outcome metric_checks() {
    const Tensor a({3, 16, 16}, 0.5f), b({3, 16, 16}, 0.6f);
    const double p = psnr(a, b);
    const Tensor x = uniform_tensor({3, 16, 16}, 61);
    const double s = ssim(x, x);
    Tensor cb({1, 8, 8});
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) cb[i * 8 + j] = 0.5f + ((i + j) % 2 ? -0.1f : 0.1f);
    const double hf = hf_energy(cb);
    const double hf_expect = 64.0 * 0.1f * 0.1f;
    const bool ok = std::abs(p - 20.0) < 1e-4 && std::abs(s - 1.0) < 1e-9 && std::isinf(psnr(x, x)) &&
                    std::abs(hf - hf_expect) < 1e-6;
    return {ok, "psnr=" + fmt(p) + " ssim(x,x)=" + fmt(s) + " hf=" + fmt(hf)};
}

Outcome degradation_goldens(const std::vector<std::string>& expected) {
    const auto got = compute_golden_hashes();
    if (expected.size() != got.size()) return {false, "expected " + std::to_string(got.size()) + " hashes"};
    std::string bad;
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (got[i] != expected[i]) bad += (bad.empty() ? "" : ",") + std::to_string(golden_seeds()[i]);
    }
    return {bad.empty(), bad.empty() ? "8 seeds match" : "mismatch for seeds " + bad};
}

Outcome degradation_identity() {
    DegradationConfig cfg;
    cfg.blur_sigma = {0.0, 0.0};
    cfg.resize_scale = {1.0, 1.0};
    cfg.noise_sigma = {0.0, 0.0};
    cfg.quantize_levels = {256, 256};
    const Tensor hq = gen_hq(71, 48);
    const ImagePair p = degrade(hq, cfg, 72);
    const double d = max_abs_diff(p.lq, resize_bilinear(hq, 12, 12));
    return {d <= 1e-6, "max diff=" + fmt(d)};
}

Outcome gradient_check() {
    Toy toy;
    randomize_b(toy.critic, 81, 0.05);
    const int n = toy.arch.latent_size();
    const Tensor z = random_tensor({2, toy.arch.latent_channels, n, n}, 82);
    const Tensor eps = random_tensor(z.shape(), 83);
    const std::vector<int> t{150, 700};
    const VSDContext ctx = toy.ctx();
    auto loss_value = [&] {
        WeightBinding cb(toy.teacher, {}, &toy.critic, false);
        return lora_diffusion_loss(z, t, eps, ctx, cb).item();
    };
    WeightBinding cb(toy.teacher, {}, &toy.critic, true);
    ag::backward(lora_diffusion_loss(z, t, eps, ctx, cb));
    const GradMap grads = cb.lora_grads();
    double worst = 0.0;
    for (const auto& r : finite_difference_check(toy.critic.tensors, pick_coordinates(grads, 5, 84), loss_value, grads)) {
        worst = std::max(worst, r.rel_error);
    }
    return {worst < 1e-2, "max rel err=" + fmt(worst)};
}

Outcome checkpoint_roundtrip() {
    namespace fs = std::filesystem;
    const ParamStore p = init_params(compact_arch(), 91);
    const fs::path dir = fs::temp_directory_path() / ("tadsr-selftest-" + std::to_string(mix64(91 ^ std::chrono::steady_clock::now().time_since_epoch().count())));
    save_checkpoint(dir / "ck", p, nlohmann::json::object());
    const Checkpoint ck = load_checkpoint(dir / "ck");
    fs::remove_all(dir);
    const bool ok = bit_equal(ck.store, p) && ck.store.arch() == p.arch();
    return {ok, ok ? "bit-exact" : "mismatch"};
}

}  // namespace

ArchDescriptor compact_arch() {
    ArchDescriptor a;
    a.image_size = 16;
    a.encoder_channels = {4, 8, 8};
    a.unet_channels = {8, 16};
    a.time_freq_dim = 16;
    a.time_embed_dim = 16;
    a.probe_channels = {4, 4, 4};
    return a;
}

std::vector<std::uint64_t> golden_seeds() { return {0, 1, 2, 3, 42, 1234, 99991, 0xDEADBEEF}; }

std::vector<std::string> default_golden_hashes() {
    return {
        "62f133bbc7281be79c86db28cee9d8554e502bbd49908b11538242b773eebea1",
        "05dba92cf72be93c45d7442b57000ef5d74a07d3d3bda53e07f41d47ddc84998",
        "d9dda8000ef8390e4bcaa53dd7665320a7af152908b43d3e6406d3daabeced89",
        "2928509dc2694c09d5ce0490eeb06fdfe70bfacdb10df871ea714917f7933c88",
        "2bdbc1da92c65f7556bcc096b522a46fe0f7ae63b804cd2b3e380791ed0b552f",
        "21013abcce33950760a43af504a49729f0a5b23b93e1f1300b07e9c448fffe31",
        "720a30237bbc8b3a65bdbf1ebc80d89ce2369dab1f8104b0ab30bf1d6b7b5a40",
        "87c4a7dedada1d17eebd8408d5b0c1357ae9f7b187264ea6781d260fa0df148f",
    };
}

std::vector<std::string> compute_golden_hashes() {
    std::vector<std::string> out;
    const DegradationConfig cfg;
    for (auto s : golden_seeds()) out.push_back(pair_hash(make_pair(s, 48, cfg)));
    return out;
}

std::vector<SelftestCheck> run_selftest(const SelftestOptions& opts) {
    const auto goldens = opts.golden_hashes.empty() ? default_golden_hashes() : opts.golden_hashes;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
        {"schedule_algebra", schedule_algebra},
        {"timestep_map", timestep_map_check},
        {"vsd_duality", vsd_duality},
        {"lora_identity", lora_identity},
        {"lora_merge_consistency", lora_merge_consistency},
        {"blur_dc_and_nyquist", blur_checks},
        {"metric_oracles", metric_checks},
        {"degradation_goldens", [&] { return degradation_goldens(goldens); }},
        {"degradation_identity", degradation_identity},
        {"lora_gradient_fd", gradient_check},
        {"checkpoint_roundtrip", checkpoint_roundtrip},
    };
    std::vector<SelftestCheck> out;
    for (const auto& [name, fn] : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        SelftestCheck c{name, false, "", 0.0};
        try {
            const Outcome o = fn();
            c.pass = o.pass;
            c.detail = o.detail;
        } catch (const std::exception& e) {
            c.detail = std::string("exception: ") + e.what();
        }
        c.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace tadsr
