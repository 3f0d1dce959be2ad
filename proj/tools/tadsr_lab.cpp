// tadsr-lab: data synthesis, staged training, one-step inference, t_s sweeps and self-test.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tadsr/checkpoint.hpp"
#include "tadsr/config.hpp"
#include "tadsr/degrade.hpp"
#include "tadsr/error.hpp"
#include "tadsr/image_io.hpp"
#include "tadsr/metrics.hpp"
#include "tadsr/selftest.hpp"
#include "tadsr/tensor.hpp"
#include "tadsr/train.hpp"

namespace fs = std::filesystem;
using namespace tadsr;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDependency = 3, kDivergence = 4 };

std::vector<int> parse_ts(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ParameterError("bad --ts entry '" + item + "'");
        }
    }
    if (out.empty()) throw ParameterError("--ts needs at least one value");
    return out;
}

/// Pairs from a gen-data directory (pairs.jsonl plus PNGs).
std::vector<ImagePair> read_pairs(const fs::path& dir) {
    std::ifstream in(dir / "pairs.jsonl");
    if (!in) throw IoError("no pairs.jsonl in " + dir.string());
    std::vector<ImagePair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto row = nlohmann::json::parse(line);
        ImagePair p;
        p.hq = read_png(dir / row.at("hq").get<std::string>());
        p.lq = read_png(dir / row.at("lq").get<std::string>());
        p.seed = row.at("seed").get<std::uint64_t>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

int cmd_gen_data(const fs::path& config, const std::vector<std::string>& sets, const fs::path& out, int n,
                 std::uint64_t seed) {
    const RunConfig cfg = load_run_config(config, sets);
    const auto pairs = make_dataset(n, cfg.degrade, seed, cfg.arch.image_size);
    export_pairs(out, pairs);
    std::printf("wrote %d pairs to %s\n", n, out.string().c_str());
    return kOk;
}

int cmd_train(const std::string& stage, const fs::path& config, const std::vector<std::string>& sets, bool resume,
              const fs::path& out, int stop_after, bool quiet) {
    const Stage s = stage_from_string(stage);
    const RunConfig cfg = load_run_config(config, sets);
    RunOptions opts;
    opts.resume = resume;
    opts.stop_after = stop_after;
    opts.verbose = !quiet;
    const auto t0 = std::chrono::steady_clock::now();
    const StageReport r = run_stage(s, cfg, out, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s: %d steps%s in %.1f s\n", stage.c_str(), r.steps_done, r.complete ? " (complete)" : "", secs);
    if (!r.summary.empty()) std::printf("%s\n", r.summary.dump(1).c_str());
    return kOk;
}

int cmd_infer(const fs::path& ckpt, const fs::path& lq_path, int ts, const fs::path& out) {
    const StudentModel m = load_student(ckpt);
    const Tensor lq = read_png(lq_path);
    const Tensor sr = super_resolve(m, lq, ts);
    write_png(out, sr);
    std::printf("wrote %s (%dx%d)\n", out.string().c_str(), sr.dim(2), sr.dim(1));
    return kOk;
}

int cmd_sweep(const fs::path& ckpt, const fs::path& data, const std::string& ts, const fs::path& out) {
    const StudentModel m = load_student(ckpt);
    std::vector<ImagePair> pairs;
    if (data.empty()) {
        const fs::path dir = checkpoint_exists(ckpt) ? ckpt : checkpoint_dir(ckpt, Stage::distill);
        pairs = heldout_pairs(run_config_from_json(load_checkpoint(dir).config.at("run_config")));
    } else {
        pairs = read_pairs(data);
    }
    const EvalReport r = sweep_ts(m, pairs, parse_ts(ts));
    write_csv(out, r);
    for (const auto& row : r.rows) {
        std::printf("%-18s psnr=%.3f ssim=%.4f hf=%.6f n=%d\n", row.label.c_str(), row.psnr_mean, row.ssim_mean,
                    row.hf_energy_mean, row.n);
    }
    std::printf("%s", trend_summary(r).c_str());
    return kOk;
}

int cmd_selftest(const fs::path& goldens) {
    SelftestOptions opts;
    if (!goldens.empty()) {
        std::ifstream in(goldens);
        if (!in) throw IoError("cannot open " + goldens.string());
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) opts.golden_hashes.push_back(line);
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    int failed = 0;
    for (const auto& c : run_selftest(opts)) {
        std::printf("%s %-24s %s (%.0f ms)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str(), c.ms);
        failed += c.pass ? 0 : 1;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s: %d failed, %.1f s\n", failed ? "selftest FAILED" : "selftest passed", failed, secs);
    return failed ? kFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-aware one-step diffusion super-resolution lab"};
    app.require_subcommand(1);

    fs::path config;
    std::vector<std::string> sets;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Run configuration JSON");
        sub->add_option("--set", sets, "Override section.key=value (repeatable)");
    };

    auto* gen = app.add_subcommand("gen-data", "Write synthetic HQ/LQ pairs as PNG plus pairs.jsonl");
    add_config(gen);
    fs::path gen_out;
    int gen_n = 16;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--n", gen_n, "Number of pairs")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", gen_seed, "Base seed");

    auto* train = app.add_subcommand("train", "Run one training stage");
    add_config(train);
    std::string stage;
    fs::path train_out;
    bool resume = false, quiet = false;
    int stop_after = -1;
    train->add_option("--stage", stage, "autoencoder | teacher | distill")->required();
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_flag("--resume", resume, "Continue from the stage checkpoint");
    train->add_option("--stop-after", stop_after, "Checkpoint and stop after this many steps");
    train->add_flag("--quiet", quiet, "No progress output");

    auto* infer = app.add_subcommand("infer", "Super-resolve one LQ PNG");
    fs::path infer_ckpt, infer_lq, infer_out;
    int infer_ts = 200;
    infer->add_option("--ckpt", infer_ckpt, "Run directory or distill checkpoint")->required();
    infer->add_option("--lq", infer_lq, "Input PNG")->required();
    infer->add_option("--ts", infer_ts, "Timestep condition in [0, 999]");
    infer->add_option("--out", infer_out, "Output PNG")->required();

    auto* sweep = app.add_subcommand("sweep", "Evaluate the student across t_s values");
    fs::path sweep_ckpt, sweep_data, sweep_out;
    std::string sweep_ts_arg = "100,300,500,700,900";
    sweep->add_option("--ckpt", sweep_ckpt, "Run directory or distill checkpoint")->required();
    sweep->add_option("--data", sweep_data, "gen-data directory (default: the configured held-out set)");
    sweep->add_option("--ts", sweep_ts_arg, "Comma-separated t_s values");
    sweep->add_option("--out", sweep_out, "CSV report")->required();

    auto* self = app.add_subcommand("selftest", "Run the fast invariant suite");
    fs::path goldens;
    self->add_option("--goldens", goldens, "File with one expected degradation hash per line");

    CLI11_PARSE(app, argc, argv);
    tune_allocator();

    try {
        if (*gen) return cmd_gen_data(config, sets, gen_out, gen_n, gen_seed);
        if (*train) return cmd_train(stage, config, sets, resume, train_out, stop_after, quiet);
        if (*infer) return cmd_infer(infer_ckpt, infer_lq, infer_ts, infer_out);
        if (*sweep) return cmd_sweep(sweep_ckpt, sweep_data, sweep_ts_arg, sweep_out);
        if (*self) return cmd_selftest(goldens);
    } catch (const DependencyError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDependency;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDivergence;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kFailure;
}
