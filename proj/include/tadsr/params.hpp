#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tadsr/tensor.hpp"

namespace tadsr {

/// Shape of every network. The encoder always has three resolution levels
/// (two stride-2 reductions), so latents are image_size / 4.
struct ArchDescriptor {
    int image_channels = 3;
    int image_size = 48;
    int latent_channels = 4;
    std::vector<int> encoder_channels{16, 32, 64};
    std::vector<int> unet_channels{32, 64, 128};
    int time_freq_dim = 64;
    int time_embed_dim = 128;
    std::vector<int> probe_channels{8, 16, 32};

    int latent_size() const { return image_size / 4; }
    void validate() const;
    friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

struct ParamEntry {
    std::string name;
    Tensor tensor;
};

/// Ordered, uniquely named parameter tensors.
class ParamStore {
public:
    ParamStore() = default;
    explicit ParamStore(ArchDescriptor arch) : arch_(std::move(arch)) {}

    void add(std::string name, Tensor tensor);
    bool contains(std::string_view name) const;
    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;

    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    std::vector<ParamEntry>& entries() noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t total_numel() const;

    const ArchDescriptor& arch() const noexcept { return arch_; }
    void set_arch(ArchDescriptor arch) { arch_ = std::move(arch); }

    /// Copy with `prefix` prepended to every name.
    ParamStore with_prefix(std::string_view prefix) const;
    /// Entries whose name starts with `prefix`, with the prefix removed.
    ParamStore extract_prefix(std::string_view prefix) const;
    /// Entries whose name starts with `prefix`, names unchanged.
    ParamStore select(std::string_view prefix) const;
    void merge(const ParamStore& other);

    /// SHA-256 over names, shapes and raw float bytes in entry order.
    std::string content_hash() const;

    friend bool operator==(const ParamStore& a, const ParamStore& b);

private:
    ArchDescriptor arch_;
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

bool bit_equal(const ParamStore& a, const ParamStore& b);

/// Low-rank adapters keyed by the weight they modify. For weight W (m x n
/// after flattening trailing dims) the set holds "<W>.lora_A" (r x n) and
/// "<W>.lora_B" (m x r); the effective weight is W + scale * B A.
struct LoraSet {
    int rank = 4;
    float scale = 0.25f;
    ParamStore tensors;

    std::vector<std::string> targets() const;
    bool adapts(std::string_view weight) const;
    const Tensor& A(std::string_view weight) const;
    const Tensor& B(std::string_view weight) const;
};

std::string lora_a_name(std::string_view weight);
std::string lora_b_name(std::string_view weight);

}  // namespace tadsr
