#include "tadsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tadsr/error.hpp"
#include "tadsr/rng.hpp"

namespace tadsr {

std::vector<Coordinate> pick_coordinates(const GradMap& grads, int k, std::uint64_t seed, double min_frac) {
    // Sorted names keep the draw independent of hash-map order.
    std::map<std::string, const Tensor*> sorted;
    double gmax = 0.0;
    for (const auto& [name, g] : grads) {
        sorted.emplace(name, &g);
        for (float v : g.values()) gmax = std::max(gmax, static_cast<double>(std::abs(v)));
    }
    std::vector<Coordinate> pool;
    for (const auto& [name, g] : sorted) {
        for (std::size_t i = 0; i < g->numel(); ++i) {
            if (gmax > 0.0 && std::abs((*g)[i]) >= min_frac * gmax) pool.push_back({name, i});
        }
    }
    if (static_cast<int>(pool.size()) < k) throw ParameterError("pick_coordinates: too few non-negligible gradients");
    CounterRng rng(seed, 0);
    std::set<std::size_t> chosen;
    std::vector<Coordinate> out;
    while (static_cast<int>(out.size()) < k) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
        if (chosen.insert(j).second) out.push_back(pool[j]);
    }
    return out;
}

std::vector<GradCheckResult> finite_difference_check(ParamStore& store, const std::vector<Coordinate>& coords,
                                                     const std::function<double()>& loss, const GradMap& grads,
                                                     double eps) {
    std::vector<GradCheckResult> out;
    for (const auto& c : coords) {
        float& p = store.at(c.name)[c.index];
        const float saved = p;
        p = static_cast<float>(saved + eps);
        const double up = loss();
        p = static_cast<float>(saved - eps);
        const double down = loss();
        p = saved;
        // Use the step actually representable in float.
        const double h = (static_cast<double>(static_cast<float>(saved + eps)) - static_cast<float>(saved - eps));
        const double numeric = (up - down) / h;
        const double analytic = grads.at(c.name)[c.index];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-30});
        out.push_back({c, analytic, numeric, std::abs(analytic - numeric) / denom});
    }
    return out;
}

}  // namespace tadsr
