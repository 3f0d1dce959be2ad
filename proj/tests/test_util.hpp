#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "tadsr/params.hpp"
#include "tadsr/rng.hpp"
#include "tadsr/tensor.hpp"

namespace tadsr::testing {

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
    Tensor t(std::move(shape));
    CounterRng rng(seed, 0);
    for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
    return t;
}

inline Tensor uniform_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    CounterRng rng(seed, 0);
    for (float& v : t.values()) v = static_cast<float>(rng.uniform());
    return t;
}

inline void randomize_b(LoraSet& lora, std::uint64_t seed, double stddev) {
    for (auto& e : lora.tensors.entries()) {
        if (!e.name.ends_with(".lora_B")) continue;
        CounterRng rng(seed, fnv1a64(e.name));
        for (float& v : e.tensor.values()) v = static_cast<float>(stddev * rng.normal());
    }
}

inline bool all_zero(const Tensor& t) {
    for (float v : t.values()) {
        if (v != 0.0f) return false;
    }
    return true;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("tadsr-" + tag + "-" + std::to_string(mix64(static_cast<std::uint64_t>(stamp))));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace tadsr::testing
