#include "tadsr/nets.hpp"

#include <algorithm>
#include <cmath>

#include "tadsr/error.hpp"
#include "tadsr/rng.hpp"

namespace tadsr {

using ag::Var;

WeightBinding::WeightBinding(const ParamStore& base, Predicate trainable, const LoraSet* lora,
                             bool lora_trainable)
    : base_(&base), trainable_(std::move(trainable)), lora_(lora), lora_trainable_(lora_trainable) {}

Var WeightBinding::leaf(const std::string& name) {
    auto it = base_leaves_.find(name);
    if (it != base_leaves_.end()) return it->second;
    const Tensor& t = base_->at(name);
    Var v = (trainable_ && trainable_(name)) ? ag::parameter(t) : ag::constant(t);
    base_leaves_.emplace(name, v);
    return v;
}

Var WeightBinding::get(const std::string& name) {
    Var w = leaf(name);
    if (!lora_ || !lora_->adapts(name)) return w;

    const Tensor& wt = base_->at(name);
    const int m = wt.dim(0);
    const int n = static_cast<int>(wt.numel() / static_cast<std::size_t>(m));
    const Tensor& a = lora_->A(name);
    const Tensor& b = lora_->B(name);
    const int r = lora_->rank;
    if (a.shape() != std::vector<int>{r, n} || b.shape() != std::vector<int>{m, r}) {
        throw AdapterError("adapter for " + name + " has shapes " + shape_to_string(a.shape()) + ", " +
                           shape_to_string(b.shape()) + " but weight is " + shape_to_string(wt.shape()));
    }
    auto adapter_leaf = [&](const std::string& key, const Tensor& t) {
        auto it = lora_leaves_.find(key);
        if (it != lora_leaves_.end()) return it->second;
        Var v = lora_trainable_ ? ag::parameter(t) : ag::constant(t);
        lora_leaves_.emplace(key, v);
        return v;
    };
    Var va = adapter_leaf(lora_a_name(name), a);
    Var vb = adapter_leaf(lora_b_name(name), b);
    return ag::add_scaled(w, ag::reshape(ag::matmul(vb, va), wt.shape()), lora_->scale);
}

namespace {

GradMap collect(const std::unordered_map<std::string, Var>& leaves) {
    GradMap out;
    for (const auto& [name, v] : leaves) {
        if (!v.requires_grad()) continue;
        out.emplace(name, v.grad().empty() ? Tensor(v.shape(), 0.0f) : v.grad());
    }
    return out;
}

}  // namespace

GradMap WeightBinding::base_grads() const { return collect(base_leaves_); }
GradMap WeightBinding::lora_grads() const { return collect(lora_leaves_); }

WeightBinding::Predicate prefix_predicate(std::vector<std::string> prefixes) {
    return [prefixes = std::move(prefixes)](std::string_view name) {
        return std::any_of(prefixes.begin(), prefixes.end(),
                           [&](const std::string& p) { return name.starts_with(p); });
    };
}

namespace {

void conv_spec(std::vector<ParamSpec>& out, const std::string& name, int co, int ci, InitKind init) {
    out.push_back({name + ".weight", {co, ci, 3, 3}, init});
    out.push_back({name + ".bias", {co}, InitKind::zero});
}

void linear_spec(std::vector<ParamSpec>& out, const std::string& name, int o, int i, InitKind init) {
    out.push_back({name + ".weight", {o, i}, init});
    out.push_back({name + ".bias", {o}, init == InitKind::zero ? InitKind::film_bias : InitKind::zero});
}

void time_spec(std::vector<ParamSpec>& out, const std::string& prefix, const ArchDescriptor& a) {
    linear_spec(out, prefix + ".time.fc1", a.time_embed_dim, a.time_freq_dim, InitKind::he);
    linear_spec(out, prefix + ".time.fc2", a.time_embed_dim, a.time_embed_dim, InitKind::he);
}

void resblock_spec(std::vector<ParamSpec>& out, const std::string& prefix, int c, const ArchDescriptor& a,
                   bool film) {
    conv_spec(out, prefix + ".conv1", c, c, InitKind::he);
    if (film) linear_spec(out, prefix + ".film", 2 * c, a.time_embed_dim, InitKind::zero);
    conv_spec(out, prefix + ".conv2", c, c, InitKind::he_small);
}

}  // namespace

std::vector<ParamSpec> param_specs(const ArchDescriptor& a) {
    a.validate();
    std::vector<ParamSpec> s;
    const auto& ec = a.encoder_channels;
    const auto& uc = a.unet_channels;

    time_spec(s, "tae", a);
    conv_spec(s, "tae.conv_in", ec[0], a.image_channels, InitKind::he);
    for (int l = 0; l < 3; ++l) {
        resblock_spec(s, "tae.stage" + std::to_string(l), ec[l], a, true);
        if (l < 2) conv_spec(s, "tae.down" + std::to_string(l), ec[l + 1], ec[l], InitKind::he);
    }
    conv_spec(s, "tae.conv_out", a.latent_channels, ec[2], InitKind::he_small);

    conv_spec(s, "dec.conv_in", ec[2], a.latent_channels, InitKind::he);
    for (int l = 2; l >= 0; --l) {
        resblock_spec(s, "dec.stage" + std::to_string(l), ec[l], a, false);
        if (l > 0) conv_spec(s, "dec.up" + std::to_string(l), ec[l - 1], ec[l], InitKind::he);
    }
    conv_spec(s, "dec.conv_out", a.image_channels, ec[0], InitKind::he_small);

    const int L = static_cast<int>(uc.size());
    time_spec(s, "unet", a);
    s.push_back({"unet.null_cond", {a.time_embed_dim}, InitKind::zero});
    conv_spec(s, "unet.conv_in", uc[0], a.latent_channels, InitKind::he);
    for (int l = 0; l < L; ++l) {
        resblock_spec(s, "unet.down" + std::to_string(l), uc[l], a, true);
        if (l < L - 1) conv_spec(s, "unet.down" + std::to_string(l) + ".pool", uc[l + 1], uc[l], InitKind::he);
    }
    resblock_spec(s, "unet.mid", uc[L - 1], a, true);
    for (int l = L - 2; l >= 0; --l) {
        conv_spec(s, "unet.up" + std::to_string(l) + ".merge", uc[l], uc[l + 1] + uc[l], InitKind::he);
        resblock_spec(s, "unet.up" + std::to_string(l), uc[l], a, true);
    }
    conv_spec(s, "unet.eps_head", a.latent_channels, uc[0], InitKind::he_small);
    conv_spec(s, "unet.x0_head", a.latent_channels, uc[0], InitKind::zero);
    return s;
}

std::vector<ParamSpec> probe_specs(const ArchDescriptor& a) {
    std::vector<ParamSpec> s;
    int prev = a.image_channels;
    for (std::size_t l = 0; l < a.probe_channels.size(); ++l) {
        conv_spec(s, "probe.conv" + std::to_string(l), a.probe_channels[l], prev, InitKind::he);
        prev = a.probe_channels[l];
    }
    return s;
}

namespace {

Tensor init_tensor(const ParamSpec& spec, std::uint64_t seed) {
    Tensor t(spec.shape, 0.0f);
    switch (spec.init) {
        case InitKind::zero:
            break;
        case InitKind::film_bias: {
            // First half scales (1), second half shifts (0).
            const std::size_t half = t.numel() / 2;
            for (std::size_t i = 0; i < half; ++i) t[i] = 1.0f;
            break;
        }
        case InitKind::he:
        case InitKind::he_small: {
            const std::size_t fan_in = t.numel() / static_cast<std::size_t>(spec.shape[0]);
            double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            if (spec.init == InitKind::he_small) stddev *= 0.3;
            CounterRng rng(seed, fnv1a64(spec.name));
            for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
            break;
        }
    }
    return t;
}

ParamStore build(const std::vector<ParamSpec>& specs, const ArchDescriptor& arch, std::uint64_t seed) {
    ParamStore store(arch);
    for (const auto& spec : specs) store.add(spec.name, init_tensor(spec, seed));
    return store;
}

}  // namespace

ParamStore init_params(const ArchDescriptor& arch, std::uint64_t seed) {
    return build(param_specs(arch), arch, seed);
}

ParamStore make_probe(const ArchDescriptor& arch, std::uint64_t seed) {
    return build(probe_specs(arch), arch, derive_seed(seed, 0x70726f6265ULL));
}

std::vector<float> sinusoidal_embedding(int t, int dim) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        const double w = std::pow(10000.0, -2.0 * i / dim);
        v[static_cast<std::size_t>(2 * i)] = static_cast<float>(std::sin(t * w));
        v[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(std::cos(t * w));
    }
    return v;
}

LoraSet init_lora(const ParamStore& params, int rank, std::uint64_t seed) {
    if (rank < 1) throw AdapterError("LoRA rank must be >= 1");
    LoraSet set;
    set.rank = rank;
    set.scale = 1.0f / static_cast<float>(rank);
    set.tensors = ParamStore(params.arch());
    for (const auto& e : params.entries()) {
        if (!e.name.starts_with("unet.") || e.tensor.rank() < 2 || e.name.starts_with("unet.x0_head")) continue;
        const int m = e.tensor.dim(0);
        const int n = static_cast<int>(e.tensor.numel() / static_cast<std::size_t>(m));
        if (rank > std::min(m, n)) {
            throw AdapterError("LoRA rank " + std::to_string(rank) + " exceeds min dimension of " + e.name);
        }
        Tensor a({rank, n});
        CounterRng rng(seed, fnv1a64(e.name));
        const double stddev = 1.0 / std::sqrt(static_cast<double>(n));
        for (float& v : a.values()) v = static_cast<float>(stddev * rng.normal());
        set.tensors.add(lora_a_name(e.name), std::move(a));
        set.tensors.add(lora_b_name(e.name), Tensor({m, rank}, 0.0f));
    }
    return set;
}

ParamStore lora_merge(const ParamStore& base, const LoraSet& adapters) {
    for (const auto& target : adapters.targets()) {
        if (!base.contains(target)) throw AdapterError("adapter names unknown weight " + target);
    }
    ParamStore out = base;
    for (const auto& target : adapters.targets()) {
        Tensor& w = out.at(target);
        const int m = w.dim(0);
        const int n = static_cast<int>(w.numel() / static_cast<std::size_t>(m));
        const int r = adapters.rank;
        if (r > std::min(m, n)) throw AdapterError("LoRA rank exceeds min dimension of " + target);
        const Tensor& a = adapters.A(target);
        const Tensor& b = adapters.B(target);
        if (a.shape() != std::vector<int>{r, n} || b.shape() != std::vector<int>{m, r}) {
            throw AdapterError("adapter shape mismatch for " + target);
        }
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (int k = 0; k < r; ++k) acc += b[static_cast<std::size_t>(i) * r + k] * a[static_cast<std::size_t>(k) * n + j];
                w[static_cast<std::size_t>(i) * n + j] += adapters.scale * acc;
            }
        }
    }
    return out;
}

namespace {

Var conv(const Var& x, WeightBinding& p, const std::string& name, int stride = 1) {
    return ag::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), stride, 1);
}

Var dense(const Var& x, WeightBinding& p, const std::string& name) {
    return ag::linear(x, p.get(name + ".weight"), p.get(name + ".bias"));
}

Var time_features(std::span<const int> t, int dim) {
    Tensor f({static_cast<int>(t.size()), dim});
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto row = sinusoidal_embedding(t[i], dim);
        std::copy(row.begin(), row.end(), f.data() + i * static_cast<std::size_t>(dim));
    }
    return ag::constant(std::move(f));
}

/// silu(fc2(silu(fc1(sinusoid(t)))) [+ extra]); the trailing SiLU feeds the FiLM projections.
Var time_embedding(std::span<const int> t, WeightBinding& p, const std::string& prefix, const Var* extra) {
    const auto& a = p.base().arch();
    Var h = ag::silu(dense(time_features(t, a.time_freq_dim), p, prefix + ".time.fc1"));
    Var e = dense(h, p, prefix + ".time.fc2");
    if (extra) e = ag::add(e, ag::broadcast_rows(*extra, static_cast<int>(t.size())));
    return ag::silu(e);
}

Var resblock(const Var& h, WeightBinding& p, const std::string& prefix, const Var* emb) {
    Var r = conv(ag::silu(h), p, prefix + ".conv1");
    if (emb) r = ag::film(r, dense(*emb, p, prefix + ".film"));
    r = conv(ag::silu(r), p, prefix + ".conv2");
    return ag::add(h, r);
}

void check_batch(const Var& x, std::span<const int> t, int channels, const char* what) {
    if (x.value().rank() != 4 || x.shape()[1] != channels) {
        throw ShapeError(std::string(what) + ": unexpected input " + shape_to_string(x.shape()));
    }
    if (static_cast<int>(t.size()) != x.shape()[0]) {
        throw ShapeError(std::string(what) + ": one timestep per sample required");
    }
}

}  // namespace

Var tae_encode(const Var& x, std::span<const int> t_s, WeightBinding& p) {
    const auto& a = p.base().arch();
    check_batch(x, t_s, a.image_channels, "tae_encode");
    if (x.shape()[2] % 4 != 0 || x.shape()[3] % 4 != 0) {
        throw ShapeError("tae_encode: spatial dims must be divisible by 4, got " + shape_to_string(x.shape()));
    }
    for (int t : t_s) {
        if (t < 0 || t >= kStudentTimesteps) throw ParameterError("tae_encode: t_s outside [0, 999]");
    }
    Var emb = time_embedding(t_s, p, "tae", nullptr);
    Var h = conv(x, p, "tae.conv_in");
    for (int l = 0; l < 3; ++l) {
        h = resblock(h, p, "tae.stage" + std::to_string(l), &emb);
        if (l < 2) h = conv(h, p, "tae.down" + std::to_string(l), 2);
    }
    return conv(ag::silu(h), p, "tae.conv_out");
}

Var vae_decode(const Var& z, WeightBinding& p) {
    const auto& a = p.base().arch();
    if (z.value().rank() != 4 || z.shape()[1] != a.latent_channels) {
        throw ShapeError("vae_decode: unexpected latent " + shape_to_string(z.shape()));
    }
    Var h = conv(z, p, "dec.conv_in");
    for (int l = 2; l >= 0; --l) {
        h = resblock(h, p, "dec.stage" + std::to_string(l), nullptr);
        if (l > 0) h = conv(ag::upsample_nearest2x(h), p, "dec.up" + std::to_string(l));
    }
    return conv(ag::silu(h), p, "dec.conv_out");
}

Var unet_forward(const Var& z, std::span<const int> t, WeightBinding& p, UnetHead head) {
    const auto& a = p.base().arch();
    check_batch(z, t, a.latent_channels, "unet_forward");
    const int reduce = 1 << (a.unet_channels.size() - 1);
    if (z.shape()[2] % reduce != 0 || z.shape()[3] % reduce != 0) {
        throw ShapeError("unet_forward: latent " + shape_to_string(z.shape()) + " not divisible by " +
                         std::to_string(reduce));
    }
    // Range check only; the schedule length is owned by the caller.
    for (int v : t) {
        if (v < 0) throw ParameterError("unet_forward: negative timestep");
    }
    Var null_cond = p.get("unet.null_cond");
    Var emb = time_embedding(t, p, "unet", &null_cond);
    const int L = static_cast<int>(a.unet_channels.size());
    Var h = conv(z, p, "unet.conv_in");
    std::vector<Var> skips;
    for (int l = 0; l < L; ++l) {
        const std::string pre = "unet.down" + std::to_string(l);
        h = resblock(h, p, pre, &emb);
        if (l < L - 1) {
            skips.push_back(h);
            h = conv(h, p, pre + ".pool", 2);
        }
    }
    h = resblock(h, p, "unet.mid", &emb);
    for (int l = L - 2; l >= 0; --l) {
        const std::string pre = "unet.up" + std::to_string(l);
        h = conv(ag::concat_channels(ag::upsample_nearest2x(h), skips[static_cast<std::size_t>(l)]), p,
                 pre + ".merge");
        h = resblock(h, p, pre, &emb);
    }
    if (head == UnetHead::eps) return conv(ag::silu(h), p, "unet.eps_head");
    return ag::add(z, conv(ag::silu(h), p, "unet.x0_head"));
}

Var student_unet(const Var& z, std::span<const int> t_s, WeightBinding& p, StudentHead head,
                 const NoiseSchedule& schedule) {
    if (head == StudentHead::x0_residual) return unet_forward(z, t_s, p, UnetHead::x0);
    Var eps = unet_forward(z, t_s, p, UnetHead::eps);
    std::vector<float> ca, cb;
    for (int t : t_s) {
        const double al = schedule.alpha_at(t);
        if (al < 1e-8) throw NumericalDomainError("student eps conversion: alpha_t below 1e-8");
        ca.push_back(static_cast<float>(1.0 / al));
        cb.push_back(static_cast<float>(-schedule.beta_at(t) / al));
    }
    return ag::per_sample_affine(z, ca, eps, cb);
}

std::vector<Var> probe_features(const Var& x, WeightBinding& probe) {
    const auto& a = probe.base().arch();
    std::vector<Var> feats;
    // Centre pixel values before the first layer.
    Tensor offset(x.shape(), -0.5f);
    Var h = ag::scale(ag::add(x, ag::constant(std::move(offset))), 2.0f);
    for (std::size_t l = 0; l < a.probe_channels.size(); ++l) {
        h = ag::silu(conv(h, probe, "probe.conv" + std::to_string(l), l == 0 ? 1 : 2));
        feats.push_back(h);
    }
    return feats;
}

namespace {

Tensor as_batch(const Tensor& x) {
    std::vector<int> shape = x.shape();
    if (shape.size() != 3) throw ShapeError("expected a C x H x W tensor, got " + shape_to_string(shape));
    shape.insert(shape.begin(), 1);
    return x.reshaped(shape);
}

Tensor single(const Var& v) {
    std::vector<int> shape(v.shape().begin() + 1, v.shape().end());
    return v.value().reshaped(shape);
}

}  // namespace

Tensor tae_encode(const Tensor& x, int t_s, const ParamStore& p) {
    WeightBinding b(p);
    const int t[1] = {t_s};
    return single(tae_encode(ag::constant(as_batch(x)), t, b));
}

Tensor unet_forward(const Tensor& z, int t, const ParamStore& p, const LoraSet* adapters, UnetHead head) {
    WeightBinding b(p, {}, adapters, false);
    const int ts[1] = {t};
    return single(unet_forward(ag::constant(as_batch(z)), ts, b, head));
}

Tensor vae_decode(const Tensor& z, const ParamStore& p, bool clamp_output) {
    WeightBinding b(p);
    Tensor out = single(vae_decode(ag::constant(as_batch(z)), b));
    if (clamp_output) {
        for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

}  // namespace tadsr
