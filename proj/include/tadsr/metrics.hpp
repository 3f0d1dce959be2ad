#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tadsr/degrade.hpp"
#include "tadsr/tensor.hpp"

namespace tadsr {

struct StudentModel;

/// Serialized stand-in for an infinite PSNR.
inline constexpr double kPsnrSentinel = 99.0;

/// 10 log10(1 / MSE) for images in [0, 1]; +infinity when identical.
double psnr(const Tensor& a, const Tensor& b);
double psnr_serialized(double db) noexcept;

/// Mean SSIM over the valid region of a `window` x `window` Gaussian (sigma)
/// window, K1 = 0.01, K2 = 0.03, averaged over channels.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double sigma = 1.5);

/// Mean squared response of the 4-neighbour Laplacian over the interior of every channel.
double hf_energy(const Tensor& x);

/// Spearman rank correlation with average ranks for ties; 0 if either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct EvalRow {
    /// A t_s value, or "baseline_bilinear" / "baseline_identity".
    std::string label;
    double psnr_mean;
    double ssim_mean;
    double hf_energy_mean;
    int n;
};

struct EvalReport {
    std::vector<int> ts;
    /// One row per t_s in order, then the bilinear and identity baselines.
    std::vector<EvalRow> rows;
    double spearman_psnr = 0.0;
    double spearman_hf = 0.0;
};

/// One-step inference at every t_s over `pairs`, scored against the HQ images.
EvalReport sweep_ts(const StudentModel& model, const std::vector<ImagePair>& pairs, const std::vector<int>& ts);
void write_csv(const std::filesystem::path& path, const EvalReport& report);
std::string trend_summary(const EvalReport& report);

}  // namespace tadsr
