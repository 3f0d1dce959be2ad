#pragma once

#include <string_view>

#include "tadsr/nets.hpp"
#include "tadsr/params.hpp"

namespace tadsr {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Moments are created on first update of a name.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// Updates every entry of `params` that has a gradient, in store order.
    void step(ParamStore& params, const GradMap& grads, double lr);
    int steps() const noexcept { return steps_; }

    /// Moments as "m.<name>" / "v.<name>" plus the step counter "t".
    ParamStore state() const;
    void load_state(const ParamStore& state);

private:
    AdamWConfig cfg_;
    int steps_ = 0;
    ParamStore m_;
    ParamStore v_;
};

}  // namespace tadsr
