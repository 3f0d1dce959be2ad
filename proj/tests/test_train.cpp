#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "tadsr/checkpoint.hpp"
#include "tadsr/config.hpp"
#include "tadsr/error.hpp"
#include "tadsr/metrics.hpp"
#include "tadsr/nets.hpp"
#include "tadsr/selftest.hpp"
#include "tadsr/train.hpp"
#include "test_util.hpp"

using namespace tadsr;
namespace fs = std::filesystem;
using tadsr::testing::TempDir;

namespace {

RunConfig tiny() {
    RunConfig c;
    c.arch = compact_arch();
    c.train.autoencoder = {8, 2, 2e-3};
    c.train.teacher = {8, 2, 1e-3};
    c.train.distill.steps = 6;
    c.train.distill.batch_size = 2;
    c.train.checkpoint_every = 3;
    c.train.heldout_pairs = 4;
    c.eval.pairs = 4;
    return c;
}

bool same_losses(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].step != b[i].step || a[i].l_rec != b[i].l_rec || a[i].l_tavsd_gmean != b[i].l_tavsd_gmean ||
            a[i].l_diff != b[i].l_diff) {
            return false;
        }
    }
    return true;
}

/// Autoencoder and teacher stages of `cfg` under `run`.
void pretrain(const RunConfig& cfg, const fs::path& run) {
    REQUIRE(pretrain_autoencoder(cfg, run).complete);
    REQUIRE(pretrain_teacher(cfg, run).complete);
}

struct Stores {
    ParamStore ae;
    ParamStore teacher;
};

Stores random_stores(const RunConfig& cfg) {
    const ParamStore all = init_params(cfg.arch, 17);
    Stores s{ParamStore(cfg.arch), all.select("unet.")};
    s.ae.merge(all.select("tae."));
    s.ae.merge(all.select("dec."));
    s.teacher.set_arch(cfg.arch);
    return s;
}

}  // namespace

TEST_CASE("stage names") {
    CHECK(stage_from_string("distill") == Stage::distill);
    CHECK(to_string(Stage::autoencoder) == "autoencoder");
    CHECK_THROWS(stage_from_string("warmup"));
}

TEST_CASE("later stages require earlier checkpoints") {
    TempDir dir("deps");
    const RunConfig cfg = tiny();
    CHECK_THROWS_AS(pretrain_teacher(cfg, dir.path()), DependencyError);
    CHECK_THROWS_AS(run_distillation(cfg, dir.path()), DependencyError);
    REQUIRE(pretrain_autoencoder(cfg, dir.path()).complete);
    CHECK_THROWS_AS(run_distillation(cfg, dir.path()), DependencyError);
    CHECK_THROWS_AS(load_student(dir.path()), DependencyError);
}

TEST_CASE("full pipeline logs one row per step and is reproducible") {
    TempDir a("pipe-a"), b("pipe-b");
    const RunConfig cfg = tiny();
    for (const auto* d : {&a, &b}) {
        pretrain(cfg, d->path());
        const StageReport r = run_distillation(cfg, d->path());
        CHECK(r.complete);
        CHECK(r.steps_done == 6);
        CHECK(r.summary.contains("heldout_psnr_student"));
        CHECK(fs::exists(stage_dir(d->path(), Stage::distill) / "report.json"));
    }
    for (Stage s : {Stage::autoencoder, Stage::teacher, Stage::distill}) {
        const auto ra = read_metrics(metrics_path(a.path(), s));
        const auto rb = read_metrics(metrics_path(b.path(), s));
        CHECK(ra.size() == static_cast<std::size_t>(s == Stage::distill ? 6 : 8));
        CHECK(same_losses(ra, rb));
    }
    // The teacher is untouched by distillation.
    const ParamStore teacher = load_checkpoint(checkpoint_dir(a.path(), Stage::teacher)).store.extract_prefix("teacher.");
    const auto report = nlohmann::json::parse(std::ifstream(stage_dir(a.path(), Stage::distill) / "report.json"));
    CHECK(report.at("teacher_hash") == teacher.content_hash());
    // Completed stages are not rerun.
    CHECK(run_distillation(cfg, a.path(), {true, -1, false}).complete);

    const StudentModel m = load_student(a.path());
    const auto pairs = heldout_pairs(cfg);
    const Tensor sr = super_resolve(m, pairs[0].lq, 200);
    CHECK(sr.shape() == std::vector<int>{3, 16, 16});
    CHECK(bit_equal(sr, super_resolve(m, pairs[0].lq, 200)));
    CHECK(bit_equal(sr, super_resolve(load_student(checkpoint_dir(b.path(), Stage::distill)), pairs[0].lq, 200)));
    CHECK_THROWS_AS(super_resolve(m, pairs[0].lq, 1000), ParameterError);

    const EvalReport ev = sweep_ts(m, pairs, {100, 500, 900});
    CHECK(ev.rows.size() == 5);
    CHECK(ev.rows[3].label == "baseline_bilinear");
    CHECK(ev.rows[4].label == "baseline_identity");
    CHECK(ev.spearman_psnr >= -1.0);
    CHECK(ev.spearman_psnr <= 1.0);
    const EvalReport ev2 = sweep_ts(m, pairs, {900, 100});
    CHECK(ev2.rows[2].psnr_mean == ev.rows[3].psnr_mean);
}

TEST_CASE("resume reproduces the uninterrupted loss sequence") {
    TempDir full("resume-full"), split("resume-split");
    const RunConfig cfg = tiny();
    pretrain(cfg, full.path());
    pretrain(cfg, split.path());
    run_distillation(cfg, full.path());
    const StageReport part = run_distillation(cfg, split.path(), {false, 4, false});
    CHECK_FALSE(part.complete);
    CHECK(part.steps_done == 4);
    CHECK(run_distillation(cfg, split.path(), {true, -1, false}).complete);
    CHECK(same_losses(read_metrics(metrics_path(full.path(), Stage::distill)),
                      read_metrics(metrics_path(split.path(), Stage::distill))));

    // Autoencoder resume from a mid-stage checkpoint.
    TempDir ae("resume-ae");
    pretrain_autoencoder(cfg, ae.path(), {false, 5, false});
    pretrain_autoencoder(cfg, ae.path(), {true, -1, false});
    CHECK(same_losses(read_metrics(metrics_path(full.path(), Stage::autoencoder)),
                      read_metrics(metrics_path(ae.path(), Stage::autoencoder))));
    CHECK(bit_equal(load_checkpoint(checkpoint_dir(full.path(), Stage::autoencoder)).store,
                    load_checkpoint(checkpoint_dir(ae.path(), Stage::autoencoder)).store));

    // A different config cannot resume this run.
    RunConfig other = cfg;
    other.train.distill.lr = 1e-4;
    run_distillation(cfg, split.path(), {false, 2, false});
    CHECK_THROWS_AS(run_distillation(other, split.path(), {true, -1, false}), ConfigError);
}

TEST_CASE("distiller invariants") {
    const RunConfig cfg = tiny();
    const Stores s = random_stores(cfg);
    Distiller d(cfg, s.ae, s.teacher);
    const std::string teacher_hash = d.teacher().content_hash();
    // Zero-initialised critic: no guidance at step 0.
    const auto first = d.step();
    CHECK(first.row.l_tavsd_gmean == 0.0);
    CHECK(first.student_grads_after_critic.empty());
    CHECK_FALSE(first.critic_grads.empty());
    for (const auto& [name, g] : first.student_grads) {
        CHECK((name.starts_with("tae.") || name.starts_with("unet.x0_head.")));
    }
    CHECK_FALSE(first.student_lora_grads.empty());
    for (int i = 0; i < 4; ++i) d.step();
    CHECK(d.teacher().content_hash() == teacher_hash);
    CHECK(d.steps_done() == 5);
    // The critic moved, so guidance is now live.
    CHECK(d.step().row.l_tavsd_gmean > 0.0);
}

TEST_CASE("critic still trains without the time-aware term") {
    RunConfig cfg = tiny();
    cfg.train.distill.weights.lambda_tavsd = 0.0;
    const Stores s = random_stores(cfg);
    Distiller d(cfg, s.ae, s.teacher);
    const ParamStore critic0 = d.critic().tensors;
    for (int i = 0; i < 3; ++i) {
        const auto o = d.step();
        CHECK(o.row.l_tavsd_gmean == 0.0);
        CHECK_FALSE(o.critic_grads.empty());
    }
    CHECK_FALSE(bit_equal(d.critic().tensors, critic0));
}

TEST_CASE("full fine-tuning trains the UNet directly") {
    RunConfig cfg = tiny();
    cfg.train.distill.full_finetune = true;
    const Stores s = random_stores(cfg);
    Distiller d(cfg, s.ae, s.teacher);
    CHECK(d.student_lora().tensors.size() == 0);
    const auto o = d.step();
    CHECK(o.student_grads.count("unet.conv_in.weight") == 1);
    CHECK(o.student_lora_grads.empty());
}

TEST_CASE("single-stage losses descend") {
    TempDir dir("descend");
    RunConfig cfg = tiny();
    cfg.train.autoencoder = {200, 2, 2e-3};
    const auto rows = pretrain_autoencoder(cfg, dir.path()).rows;
    REQUIRE(rows.size() == 200);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 10; ++i) {
        early += rows[i].l_rec;
        late += rows[190 + i].l_rec;
    }
    CHECK(late < early);
    cfg.train.teacher = {200, 4, 1e-3};
    const auto trows = pretrain_teacher(cfg, dir.path()).rows;
    early = late = 0.0;
    for (int i = 0; i < 20; ++i) {
        early += trows[i].l_diff;
        late += trows[180 + i].l_diff;
    }
    CHECK(late < early);
}
