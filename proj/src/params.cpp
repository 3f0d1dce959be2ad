#include "tadsr/params.hpp"

#include <cstring>

#include "tadsr/error.hpp"
#include "tadsr/hash.hpp"

namespace tadsr {

void ArchDescriptor::validate() const {
    if (image_channels <= 0 || latent_channels <= 0) throw ParameterError("arch: channel counts must be positive");
    if (encoder_channels.size() != 3) throw ParameterError("arch: encoder_channels needs three levels");
    if (unet_channels.empty()) throw ParameterError("arch: unet_channels is empty");
    if (probe_channels.empty()) throw ParameterError("arch: probe_channels is empty");
    for (int c : encoder_channels)
        if (c <= 0) throw ParameterError("arch: encoder channel must be positive");
    for (int c : unet_channels)
        if (c <= 0) throw ParameterError("arch: unet channel must be positive");
    if (image_size <= 0 || image_size % 4 != 0) throw ParameterError("arch: image_size must be divisible by 4");
    const int reduce = 1 << (unet_channels.size() - 1);
    if (latent_size() % reduce != 0) {
        throw ParameterError("arch: latent size not divisible by the unet reduction factor");
    }
    if (time_freq_dim <= 0 || time_freq_dim % 2 != 0) throw ParameterError("arch: time_freq_dim must be even");
    if (time_embed_dim <= 0) throw ParameterError("arch: time_embed_dim must be positive");
}

void ParamStore::add(std::string name, Tensor tensor) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

Tensor& ParamStore::at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ParameterError("unknown parameter " + std::string(name));
    return entries_[it->second].tensor;
}

const Tensor& ParamStore::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ParameterError("unknown parameter " + std::string(name));
    return entries_[it->second].tensor;
}

std::size_t ParamStore::total_numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

ParamStore ParamStore::with_prefix(std::string_view prefix) const {
    ParamStore out(arch_);
    for (const auto& e : entries_) out.add(std::string(prefix) + e.name, e.tensor);
    return out;
}

ParamStore ParamStore::extract_prefix(std::string_view prefix) const {
    ParamStore out(arch_);
    for (const auto& e : entries_) {
        if (e.name.starts_with(prefix)) out.add(e.name.substr(prefix.size()), e.tensor);
    }
    return out;
}

ParamStore ParamStore::select(std::string_view prefix) const {
    ParamStore out(arch_);
    for (const auto& e : entries_) {
        if (e.name.starts_with(prefix)) out.add(e.name, e.tensor);
    }
    return out;
}

void ParamStore::merge(const ParamStore& other) {
    for (const auto& e : other.entries_) add(e.name, e.tensor);
}

std::string ParamStore::content_hash() const {
    Sha256 h;
    for (const auto& e : entries_) {
        h.update(e.name);
        h.update(shape_to_string(e.tensor.shape()));
        h.update(e.tensor.data(), e.tensor.numel() * sizeof(float));
    }
    return h.hex_digest();
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor)) {
            return false;
        }
    }
    return true;
}

bool bit_equal(const ParamStore& a, const ParamStore& b) {
    if (a.entries().size() != b.entries().size()) return false;
    for (std::size_t i = 0; i < a.entries().size(); ++i) {
        if (a.entries()[i].name != b.entries()[i].name ||
            !bit_equal(a.entries()[i].tensor, b.entries()[i].tensor)) {
            return false;
        }
    }
    return true;
}

std::string lora_a_name(std::string_view weight) { return std::string(weight) + ".lora_A"; }
std::string lora_b_name(std::string_view weight) { return std::string(weight) + ".lora_B"; }

std::vector<std::string> LoraSet::targets() const {
    std::vector<std::string> out;
    constexpr std::string_view suffix = ".lora_A";
    for (const auto& e : tensors.entries()) {
        if (e.name.ends_with(suffix)) out.push_back(e.name.substr(0, e.name.size() - suffix.size()));
    }
    return out;
}

bool LoraSet::adapts(std::string_view weight) const { return tensors.contains(lora_a_name(weight)); }
const Tensor& LoraSet::A(std::string_view weight) const { return tensors.at(lora_a_name(weight)); }
const Tensor& LoraSet::B(std::string_view weight) const { return tensors.at(lora_b_name(weight)); }

}  // namespace tadsr
