#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tadsr/config.hpp"
#include "tadsr/degrade.hpp"
#include "tadsr/losses.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/optim.hpp"

namespace tadsr {

enum class Stage { autoencoder, teacher, distill };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// One line of a stage's metrics.jsonl. Unused fields are 0 for the pretraining stages.
struct MetricRow {
    int step = 0;
    double l_rec = 0.0;
    double l_tavsd_gmean = 0.0;
    double l_diff = 0.0;
    double wall_ms = 0.0;
};

nlohmann::json to_json(const MetricRow& r);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

// Layout under a run directory: <run>/<stage>/{checkpoint/, metrics.jsonl, report.json}.
std::filesystem::path stage_dir(const std::filesystem::path& run_dir, Stage s);
std::filesystem::path checkpoint_dir(const std::filesystem::path& run_dir, Stage s);
std::filesystem::path metrics_path(const std::filesystem::path& run_dir, Stage s);

struct RunOptions {
    /// Continue from the stage checkpoint; its config hash must match.
    bool resume = false;
    /// Checkpoint and return once this many steps are done (< 0: run to completion).
    int stop_after = -1;
    /// Progress lines on stderr.
    bool verbose = false;
};

struct StageReport {
    Stage stage;
    int steps_done = 0;
    bool complete = false;
    std::vector<MetricRow> rows;
    /// Held-out quality measured after the last step (empty until complete).
    nlohmann::json summary;
};

/// Encoder and decoder on HQ images with pixel MSE; the time pathway is held fixed.
/// On completion the per-channel latent RMS is folded into the encoder output
/// and decoder input so latents have unit second moment.
StageReport pretrain_autoencoder(const RunConfig& cfg, const std::filesystem::path& run_dir,
                                 const RunOptions& opts = {});
/// Noise-prediction UNet on latents of the frozen autoencoder.
StageReport pretrain_teacher(const RunConfig& cfg, const std::filesystem::path& run_dir, const RunOptions& opts = {});
/// Alternating student / critic updates.
StageReport run_distillation(const RunConfig& cfg, const std::filesystem::path& run_dir,
                             const RunOptions& opts = {});
StageReport run_stage(Stage s, const RunConfig& cfg, const std::filesystem::path& run_dir,
                      const RunOptions& opts = {});

/// Full distillation state, exposed so single steps can be inspected.
class Distiller {
public:
    Distiller(const RunConfig& cfg, const ParamStore& autoencoder, const ParamStore& teacher);

    struct StepOutcome {
        MetricRow row;
        GradMap student_grads;
        GradMap student_lora_grads;
        GradMap student_grads_after_critic;
        GradMap critic_grads;
    };

    /// One alternation: student update on batch `step`, then critic update on the detached output.
    StepOutcome step();
    int steps_done() const noexcept { return step_; }

    const ParamStore& student() const noexcept { return student_; }
    const LoraSet& student_lora() const noexcept { return student_lora_; }
    const LoraSet& critic() const noexcept { return critic_; }
    const ParamStore& teacher() const noexcept { return teacher_; }
    const ParamStore& probe() const noexcept { return probe_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    VSDContext vsd_context() const;
    WeightBinding::Predicate student_trainable() const;

    /// Everything needed to resume, under the checkpoint prefixes.
    ParamStore to_store() const;
    void load_store(const ParamStore& store, int step);

private:
    RunConfig cfg_;
    NoiseSchedule schedule_;
    ParamStore teacher_;
    ParamStore student_;
    LoraSet student_lora_;
    LoraSet critic_;
    ParamStore probe_;
    AdamW opt_student_;
    AdamW opt_student_lora_;
    AdamW opt_critic_;
    int step_ = 0;
};

/// The distilled one-step model.
struct StudentModel {
    ParamStore params;
    LoraSet lora;
    StudentHead head = StudentHead::x0_residual;
    NoiseSchedule schedule;
    int scale = 4;
};

/// Accepts a run directory or a distill checkpoint directory.
StudentModel load_student(const std::filesystem::path& path);
StudentModel student_from(const Distiller& d, const RunConfig& cfg);

/// Bilinear upsampling of a C x h x W image by `scale`; this is both the
/// student input and the naive baseline.
Tensor upsample_lq(const Tensor& lq, int scale);
/// 3 x h x w LQ image to a clamped 3 x (scale h) x (scale w) prediction.
Tensor super_resolve(const StudentModel& m, const Tensor& lq, int t_s);
/// Clean latent predicted for an LQ image (N x C x h x w batch of upsampled inputs).
Tensor student_latent(const StudentModel& m, const Tensor& lq_up_batch, std::span<const int> t_s);

/// Held-out set shared by every stage's report and the evaluation sweep.
std::vector<ImagePair> heldout_pairs(const RunConfig& cfg);

}  // namespace tadsr
