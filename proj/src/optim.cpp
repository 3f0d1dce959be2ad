#include "tadsr/optim.hpp"

#include <cmath>

#include "tadsr/error.hpp"

namespace tadsr {

void AdamW::step(ParamStore& params, const GradMap& grads, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, steps_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, steps_);
    for (auto& e : params.entries()) {
        auto it = grads.find(e.name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (!g.same_shape(e.tensor)) throw ShapeError("AdamW: gradient shape mismatch for " + e.name);
        if (!m_.contains(e.name)) {
            m_.add(e.name, Tensor(e.tensor.shape(), 0.0f));
            v_.add(e.name, Tensor(e.tensor.shape(), 0.0f));
        }
        Tensor& m = m_.at(e.name);
        Tensor& v = v_.at(e.name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double gi = g[i];
            const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double p = e.tensor[i];
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
            e.tensor[i] = static_cast<float>(p - lr * (update + cfg_.weight_decay * p));
        }
    }
}

ParamStore AdamW::state() const {
    ParamStore s;
    s.add("t", Tensor({1}, static_cast<float>(steps_)));
    for (const auto& e : m_.entries()) s.add("m." + e.name, e.tensor);
    for (const auto& e : v_.entries()) s.add("v." + e.name, e.tensor);
    return s;
}

void AdamW::load_state(const ParamStore& state) {
    if (!state.contains("t")) throw ParameterError("optimizer state lacks a step counter");
    steps_ = static_cast<int>(state.at("t")[0]);
    m_ = state.extract_prefix("m.");
    v_ = state.extract_prefix("v.");
}

}  // namespace tadsr
