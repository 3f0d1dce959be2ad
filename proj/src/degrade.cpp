#include "tadsr/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include "json.hpp"
#include <thread>

#include "tadsr/error.hpp"
#include "tadsr/hash.hpp"
#include "tadsr/image_io.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/rng.hpp"

namespace tadsr {

namespace {

// RNG streams under a pair seed.
constexpr std::uint64_t kStreamContent = 1;
constexpr std::uint64_t kStreamOrder = 0x100;

void check_range(double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ConfigError(std::string("degrade.") + what + ": lo must not exceed hi");
}

using Rgb = std::array<double, 3>;

Rgb random_color(CounterRng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

}  // namespace

void DegradationConfig::validate() const {
    if (orders < 0) throw ConfigError("degrade.orders must be >= 0");
    check_range(blur_sigma.lo, blur_sigma.hi, "blur_sigma");
    check_range(resize_scale.lo, resize_scale.hi, "resize_scale");
    check_range(noise_sigma.lo, noise_sigma.hi, "noise_sigma");
    check_range(quantize_levels.lo, quantize_levels.hi, "quantize_levels");
    if (blur_sigma.lo < 0.0) throw ConfigError("degrade.blur_sigma must be >= 0");
    if (resize_scale.lo <= 0.0) throw ConfigError("degrade.resize_scale must be > 0");
    if (noise_sigma.lo < 0.0) throw ConfigError("degrade.noise_sigma must be >= 0");
    if (quantize_levels.lo < 2) throw ConfigError("degrade.quantize_levels must be >= 2");
    if (final_scale < 1) throw ConfigError("degrade.final_scale must be >= 1");
}

Tensor gen_hq(std::uint64_t seed, int size) {
    if (size < 4 || size % 4 != 0) throw ParameterError("gen_hq: size must be a positive multiple of 4");
    CounterRng rng(seed, kStreamContent);
    const double s = size;
    std::vector<Rgb> img(static_cast<std::size_t>(size) * size);

    // Linear gradient background.
    const Rgb c0 = random_color(rng), c1 = random_color(rng);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double u = std::clamp(0.5 + ((x + 0.5 - s / 2) * dx + (y + 0.5 - s / 2) * dy) / s, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(y) * size + x][c] = c0[c] * (1 - u) + c1[c] * u;
        }
    }

    const int count = rng.uniform_int(3, 8);
    for (int k = 0; k < count; ++k) {
        const int kind = rng.uniform_int(0, 2);
        const Rgb color = random_color(rng);
        const double alpha = rng.uniform(0.6, 1.0);
        const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
        const double hw = rng.uniform(0.08, 0.35) * s, hh = rng.uniform(0.08, 0.35) * s;
        const double period = rng.uniform(6.0, 16.0);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double px = std::cos(theta), py = std::sin(theta);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double qx = x + 0.5 - cx, qy = y + 0.5 - cy;
                const double box = std::max(std::abs(qx) - hw, std::abs(qy) - hh);
                double cov = 0.0;
                if (kind == 0) {
                    cov = coverage(box);
                } else if (kind == 1) {
                    cov = coverage(std::hypot(qx, qy) - std::min(hw, hh));
                } else {
                    double f = std::fmod(qx * px + qy * py, period);
                    if (f < 0) f += period;
                    const double half = period / 2;
                    const double d = f < half ? -std::min(f, half - f) : std::min(f - half, period - f);
                    cov = coverage(d) * coverage(box);
                }
                const double a = alpha * cov;
                auto& p = img[static_cast<std::size_t>(y) * size + x];
                for (int c = 0; c < 3; ++c) p[c] = p[c] * (1 - a) + color[c] * a;
            }
        }
    }

    Tensor out({3, size, size});
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(img[i][c], 0.0, 1.0);
            out[static_cast<std::size_t>(c) * plane + i] = static_cast<float>(std::round(v * 255.0) / 255.0);
        }
    }
    return out;
}

ImagePair degrade(const Tensor& hq, const DegradationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (hq.rank() != 3) throw ShapeError("degrade: expected C x H x W, got " + shape_to_string(hq.shape()));
    const int h = hq.dim(1), w = hq.dim(2);
    if (h % cfg.final_scale != 0 || w % cfg.final_scale != 0) {
        throw ShapeError("degrade: image size not divisible by final_scale");
    }
    ImagePair pair;
    pair.hq = hq;
    pair.seed = seed;
    Tensor x = hq;
    for (int k = 0; k < cfg.orders; ++k) {
        CounterRng rng(seed, kStreamOrder + static_cast<std::uint64_t>(k));
        OrderParams p{};
        p.blur_sigma = rng.uniform(cfg.blur_sigma.lo, cfg.blur_sigma.hi);
        p.resize_scale = rng.uniform(cfg.resize_scale.lo, cfg.resize_scale.hi);
        p.noise_sigma = rng.uniform(cfg.noise_sigma.lo, cfg.noise_sigma.hi);
        p.levels = rng.uniform_int(cfg.quantize_levels.lo, cfg.quantize_levels.hi);
        p.height = std::max(cfg.final_scale, static_cast<int>(std::lround(x.dim(1) * p.resize_scale)));
        p.width = std::max(cfg.final_scale, static_cast<int>(std::lround(x.dim(2) * p.resize_scale)));

        x = gaussian_blur(x, p.blur_sigma);
        if (p.height != x.dim(1) || p.width != x.dim(2)) x = resize_bilinear(x, p.height, p.width);
        for (float& v : x.values()) {
            const double n = rng.normal();
            v = std::clamp(static_cast<float>(v + p.noise_sigma * n), 0.0f, 1.0f);
        }
        x = quantize(x, p.levels);
        pair.applied_params.push_back(p);
    }
    pair.lq = resize_bilinear(x, h / cfg.final_scale, w / cfg.final_scale);
    return pair;
}

std::uint64_t pair_seed(std::uint64_t base_seed, std::uint64_t index) { return derive_seed(base_seed, index); }

ImagePair make_pair(std::uint64_t seed, int size, const DegradationConfig& cfg) {
    return degrade(gen_hq(seed, size), cfg, seed);
}

int synthesis_threads() {
    if (const char* env = std::getenv("TADSR_LAB_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<ImagePair> make_dataset(int n, const DegradationConfig& cfg, std::uint64_t base_seed, int size,
                                    std::uint64_t first) {
    if (n < 0) throw ParameterError("make_dataset: n must be >= 0");
    cfg.validate();
    std::vector<ImagePair> out(static_cast<std::size_t>(n));
    const int workers = std::min(synthesis_threads(), std::max(n, 1));
    auto work = [&](int wid) {
        for (int i = wid; i < n; i += workers) {
            out[static_cast<std::size_t>(i)] = make_pair(pair_seed(base_seed, first + static_cast<std::uint64_t>(i)), size, cfg);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (int wid = 0; wid < workers; ++wid) pool.emplace_back(work, wid);
    }
    return out;
}

std::string pair_hash(const ImagePair& pair) {
    Sha256 h;
    h.update(pair.hq.data(), pair.hq.numel() * sizeof(float));
    h.update(pair.lq.data(), pair.lq.numel() * sizeof(float));
    return h.hex_digest();
}

nlohmann::json applied_params_json(const ImagePair& pair) {
    nlohmann::json orders = nlohmann::json::array();
    for (const auto& p : pair.applied_params) {
        orders.push_back({{"blur_sigma", p.blur_sigma},
                          {"resize_scale", p.resize_scale},
                          {"height", p.height},
                          {"width", p.width},
                          {"noise_sigma", p.noise_sigma},
                          {"levels", p.levels}});
    }
    return orders;
}

void export_pairs(const std::filesystem::path& dir, const std::vector<ImagePair>& pairs) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream manifest(dir / "pairs.jsonl");
    if (!manifest) throw IoError("cannot write " + (dir / "pairs.jsonl").string());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string hq = "pair_" + std::to_string(i) + "_hq.png";
        const std::string lq = "pair_" + std::to_string(i) + "_lq.png";
        write_png(dir / hq, pairs[i].hq);
        write_png(dir / lq, pairs[i].lq);
        nlohmann::json row = {{"index", i},
                              {"seed", pairs[i].seed},
                              {"hq", hq},
                              {"lq", lq},
                              {"applied_params", applied_params_json(pairs[i])}};
        manifest << row.dump() << '\n';
    }
}

}  // namespace tadsr
