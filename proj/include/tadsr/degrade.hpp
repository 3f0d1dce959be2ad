#pragma once

#include <cstdint>
#include <filesystem>
#include "json.hpp"
#include <string>
#include <vector>

#include "tadsr/tensor.hpp"

namespace tadsr {

struct RealRange {
    double lo;
    double hi;
};

struct IntRange {
    int lo;
    int hi;
};

/// Ranges are shared by every order. A zero blur sigma skips the blur.
struct DegradationConfig {
    int orders = 2;
    RealRange blur_sigma{0.2, 2.0};
    RealRange resize_scale{0.5, 1.0};
    RealRange noise_sigma{0.0, 0.05};
    IntRange quantize_levels{16, 256};
    int final_scale = 4;

    void validate() const;
};

/// Parameters sampled for one order, plus the size it resized to.
struct OrderParams {
    double blur_sigma;
    double resize_scale;
    int height;
    int width;
    double noise_sigma;
    int levels;
};

struct ImagePair {
    Tensor hq;
    Tensor lq;
    std::uint64_t seed = 0;
    std::vector<OrderParams> applied_params;
};

/// Procedural HQ image: a gradient background under 3 to 8 anti-aliased
/// rectangles, discs and stripe patches, on the 8-bit grid.
Tensor gen_hq(std::uint64_t seed, int size);

/// Blur, resize, noise and quantise per order, then resize to size / final_scale.
ImagePair degrade(const Tensor& hq, const DegradationConfig& cfg, std::uint64_t seed);

/// Seed of pair `index` under `base_seed`.
std::uint64_t pair_seed(std::uint64_t base_seed, std::uint64_t index);
/// gen_hq then degrade, both driven by `seed`.
ImagePair make_pair(std::uint64_t seed, int size, const DegradationConfig& cfg);
/// Pairs for seeds pair_seed(base_seed, first + i), built on up to synthesis_threads() workers.
std::vector<ImagePair> make_dataset(int n, const DegradationConfig& cfg, std::uint64_t base_seed, int size = 48,
                                    std::uint64_t first = 0);
/// Worker count: TADSR_LAB_THREADS when set, otherwise the hardware concurrency.
int synthesis_threads();

/// SHA-256 over the hq and lq payloads.
std::string pair_hash(const ImagePair& pair);

nlohmann::json applied_params_json(const ImagePair& pair);

/// pair_{i}_hq.png, pair_{i}_lq.png and pairs.jsonl under `dir`.
void export_pairs(const std::filesystem::path& dir, const std::vector<ImagePair>& pairs);

}  // namespace tadsr
