#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tadsr/nets.hpp"
#include "tadsr/params.hpp"

namespace tadsr {

struct Coordinate {
    std::string name;
    std::size_t index;
};

struct GradCheckResult {
    Coordinate at;
    double analytic;
    double numeric;
    double rel_error;
};

/// `k` distinct coordinates drawn uniformly from those whose |gradient| is at
/// least `min_frac` of the largest gradient in `grads`.
std::vector<Coordinate> pick_coordinates(const GradMap& grads, int k, std::uint64_t seed, double min_frac = 0.05);

/// Central differences (loss(p + eps) - loss(p - eps)) / 2 eps against `grads`.
/// Relative error is |a - n| / max(|a|, |n|). `store` is restored afterwards.
std::vector<GradCheckResult> finite_difference_check(ParamStore& store, const std::vector<Coordinate>& coords,
                                                     const std::function<double()>& loss, const GradMap& grads,
                                                     double eps = 1e-3);

}  // namespace tadsr
