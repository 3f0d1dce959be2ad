#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tadsr/autograd.hpp"
#include "tadsr/params.hpp"
#include "tadsr/schedule.hpp"

namespace tadsr {

using GradMap = std::unordered_map<std::string, Tensor>;

/// Resolves parameter names to autograd leaves for one forward/backward pass.
///
/// Values are copied out of the store when first requested, so the store may
/// be updated by an optimizer once the pass is finished. A weight with an
/// adapter in `lora` resolves to W + scale * B A.
class WeightBinding {
public:
    using Predicate = std::function<bool(std::string_view)>;

    explicit WeightBinding(const ParamStore& base, Predicate trainable = {}, const LoraSet* lora = nullptr,
                           bool lora_trainable = false);

    ag::Var get(const std::string& name);
    const ParamStore& base() const noexcept { return *base_; }

    /// Gradients of trainable base leaves that took part in the graph.
    GradMap base_grads() const;
    /// Gradients of trainable adapter tensors that took part in the graph.
    GradMap lora_grads() const;

private:
    ag::Var leaf(const std::string& name);

    const ParamStore* base_;
    Predicate trainable_;
    const LoraSet* lora_;
    bool lora_trainable_;
    std::unordered_map<std::string, ag::Var> base_leaves_;
    std::unordered_map<std::string, ag::Var> lora_leaves_;
};

/// Predicate matching names that start with any of the given prefixes.
WeightBinding::Predicate prefix_predicate(std::vector<std::string> prefixes);

enum class InitKind { he, he_small, zero, film_bias };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    InitKind init;
};

/// Every parameter of the encoder ("tae."), decoder ("dec.") and UNet ("unet.") in store order.
std::vector<ParamSpec> param_specs(const ArchDescriptor& arch);
std::vector<ParamSpec> probe_specs(const ArchDescriptor& arch);

/// Deterministic given (arch, seed). FiLM projections start at scale 1, shift 0
/// with zero weights, so the time pathway is inert until trained.
ParamStore init_params(const ArchDescriptor& arch, std::uint64_t seed);
/// Frozen random feature extractor used by the perceptual loss.
ParamStore make_probe(const ArchDescriptor& arch, std::uint64_t seed);

/// Sinusoidal features [sin(t w_i), cos(t w_i)] interleaved, w_i = 10000^(-2i/dim).
std::vector<float> sinusoidal_embedding(int t, int dim);

/// Adapters of rank `rank` on every UNet weight of rank >= 2 except the x0 head.
/// A ~ N(0, 1/n), B = 0, scale = 1/rank.
LoraSet init_lora(const ParamStore& params, int rank, std::uint64_t seed);

/// Folds every adapter into its weight; `base` is left untouched.
ParamStore lora_merge(const ParamStore& base, const LoraSet& adapters);

enum class UnetHead { eps, x0 };
enum class StudentHead { x0_residual, eps_convert };

// Batched autograd forwards. x, z are N x C x H x W, t has one entry per sample.
ag::Var tae_encode(const ag::Var& x, std::span<const int> t_s, WeightBinding& p);
/// `UnetHead::eps` returns the noise prediction, `UnetHead::x0` returns z + x0_head(features).
ag::Var unet_forward(const ag::Var& z, std::span<const int> t, WeightBinding& p, UnetHead head);
ag::Var vae_decode(const ag::Var& z, WeightBinding& p);
/// Student UNet F_theta. x0_residual uses the dedicated clean-latent head;
/// eps_convert maps the noise head through x0_from_eps at t_s.
ag::Var student_unet(const ag::Var& z, std::span<const int> t_s, WeightBinding& p, StudentHead head,
                     const NoiseSchedule& schedule);
/// Activations after each probe layer.
std::vector<ag::Var> probe_features(const ag::Var& x, WeightBinding& probe);

// Single-sample conveniences on C x H x W tensors.
Tensor tae_encode(const Tensor& x, int t_s, const ParamStore& p);
Tensor unet_forward(const Tensor& z, int t, const ParamStore& p, const LoraSet* adapters = nullptr,
                    UnetHead head = UnetHead::eps);
/// Clamps to [0, 1] when `clamp_output` (evaluation); training calls the Var overload.
Tensor vae_decode(const Tensor& z, const ParamStore& p, bool clamp_output = true);

}  // namespace tadsr
