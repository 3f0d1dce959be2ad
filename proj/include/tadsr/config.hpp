#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tadsr/degrade.hpp"
#include "tadsr/losses.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/optim.hpp"
#include "tadsr/params.hpp"
#include "tadsr/schedule.hpp"

namespace tadsr {

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct StageConfig {
    int steps;
    int batch_size;
    double lr;
};

struct DistillConfig {
    int steps = 2000;
    int batch_size = 8;
    double lr = 5e-5;
    double critic_lr = 5e-5;
    LossWeights weights;
    OmegaKind omega = OmegaKind::unit;
    StudentHead student_head = StudentHead::x0_residual;
    /// Train every UNet weight directly instead of through adapters.
    bool full_finetune = false;
    int lora_rank = 4;
};

struct TrainConfig {
    std::uint64_t seed = 0;
    int checkpoint_every = 500;
    AdamWConfig adamw;
    StageConfig autoencoder{2500, 8, 5e-4};
    StageConfig teacher{1500, 8, 1e-3};
    DistillConfig distill;
    /// Held-out pairs used for the end-of-stage quality report.
    int heldout_pairs = 64;
};

struct EvalConfig {
    std::uint64_t seed = 0x5eed0e7a1ULL;
    int pairs = 64;
    std::vector<int> ts{100, 300, 500, 700, 900};
    int infer_ts = 200;
};

struct RunConfig {
    ArchDescriptor arch;
    ScheduleConfig schedule;
    TimestepMap timestep_map;
    DegradationConfig degrade;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
    NoiseSchedule make_noise_schedule() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys take defaults; unknown keys and ill-typed values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
/// SHA-256 of the canonical (key-sorted, fully defaulted) JSON dump.
std::string config_hash(const RunConfig& cfg);

/// Applies "section.key=value" (dotted path of any depth); the value is parsed as JSON, else taken as a string.
void apply_override(nlohmann::json& j, std::string_view assignment);
/// Defaults, then the file at `path` if non-empty, then the overrides in order.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::string to_string(OmegaKind k);
std::string to_string(StudentHead h);

}  // namespace tadsr
