#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tadsr/params.hpp"

namespace tadsr {

struct SelftestCheck {
    std::string name;
    bool pass = false;
    std::string detail;
    double ms = 0.0;
};

struct SelftestOptions {
    /// Expected degradation hashes for golden_seeds(); empty uses the built-in table.
    std::vector<std::string> golden_hashes;
};

/// Small architecture for fast checks: 16 x 16 images, 4 x 4 latents.
ArchDescriptor compact_arch();

/// Seeds of the frozen degradation goldens (default config, 48 x 48).
std::vector<std::uint64_t> golden_seeds();
std::vector<std::string> default_golden_hashes();
/// Current hashes for golden_seeds().
std::vector<std::string> compute_golden_hashes();

/// Fast invariant suite; failures are reported, never thrown.
std::vector<SelftestCheck> run_selftest(const SelftestOptions& opts = {});

}  // namespace tadsr
