#include "tadsr/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tadsr/checkpoint.hpp"
#include "tadsr/error.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/metrics.hpp"
#include "tadsr/rng.hpp"

namespace tadsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sub-seeds of train.seed, one per purpose.
enum : std::uint64_t {
    kSeedInit = 1,
    kSeedAeData = 2,
    kSeedTeacherData = 3,
    kSeedTeacherNoise = 4,
    kSeedDistillData = 5,
    kSeedDistillNoise = 6,
    kSeedStudentLora = 7,
    kSeedCriticLora = 8,
    kSeedProbe = 9,
    kSeedHeldoutNoise = 10,
};

std::uint64_t sub_seed(const RunConfig& cfg, std::uint64_t purpose) { return derive_seed(cfg.train.seed, purpose); }

std::vector<float> normal_values(CounterRng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return v;
}

Tensor normal_tensor(CounterRng& rng, std::vector<int> shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), normal_values(rng, n));
}

std::vector<int> latent_batch_shape(const ArchDescriptor& a, int n) {
    return {n, a.latent_channels, a.latent_size(), a.latent_size()};
}

Tensor stack_field(const std::vector<ImagePair>& pairs, bool lq, int scale) {
    std::vector<Tensor> items;
    items.reserve(pairs.size());
    for (const auto& p : pairs) items.push_back(lq ? upsample_lq(p.lq, scale) : p.hq);
    return stack(items);
}

Tensor hq_batch(const RunConfig& cfg, std::uint64_t base_seed, int step, int batch) {
    std::vector<Tensor> items;
    for (int b = 0; b < batch; ++b) {
        const auto index = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) + static_cast<std::uint64_t>(b);
        items.push_back(gen_hq(pair_seed(base_seed, index), cfg.arch.image_size));
    }
    return stack(items);
}

void check_finite(double v, const char* what, Stage s, int step) {
    if (!std::isfinite(v)) {
        throw DivergenceError(to_string(s) + " stage diverged at step " + std::to_string(step) + ": " + what +
                              " is " + std::to_string(v));
    }
}

json stage_meta(const RunConfig& cfg, Stage s, int step, bool complete) {
    return {{"config_hash", config_hash(cfg)},
            {"stage", to_string(s)},
            {"step", step},
            {"complete", complete},
            {"run_config", to_json(cfg)}};
}

Checkpoint require_stage(const fs::path& run_dir, Stage needed, Stage wanting) {
    const fs::path dir = checkpoint_dir(run_dir, needed);
    if (!checkpoint_exists(dir)) {
        throw DependencyError(to_string(wanting) + " stage requires a completed " + to_string(needed) +
                              " stage; no checkpoint at " + dir.string());
    }
    Checkpoint ck = load_checkpoint(dir);
    if (!ck.config.value("complete", false)) {
        throw DependencyError(to_string(wanting) + " stage requires a completed " + to_string(needed) +
                              " stage; checkpoint at " + dir.string() + " is partial");
    }
    return ck;
}

/// Shared bookkeeping for a stage: metrics file, resume, checkpoint cadence.
class StageLoop {
public:
    StageLoop(Stage s, const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts)
        : stage_(s), cfg_(cfg), run_dir_(run_dir), opts_(opts) {
        fs::create_directories(stage_dir(run_dir, s));
    }

    /// Loads the resume checkpoint when requested; returns the starting step.
    std::optional<Checkpoint> begin() {
        std::optional<Checkpoint> ck;
        if (opts_.resume) {
            const fs::path dir = checkpoint_dir(run_dir_, stage_);
            if (!checkpoint_exists(dir)) throw IoError("nothing to resume: no checkpoint at " + dir.string());
            ck = load_checkpoint(dir);
            const std::string want = config_hash(cfg_);
            const std::string have = ck->config.value("config_hash", std::string());
            if (have != want) {
                throw ConfigError("config hash mismatch on resume: checkpoint " + have + " vs config " + want);
            }
            start_ = ck->config.at("step").get<int>();
            for (const auto& r : read_metrics(metrics_path(run_dir_, stage_))) {
                if (r.step < start_) rows_.push_back(r);
            }
        }
        std::ofstream out(metrics_path(run_dir_, stage_), std::ios::trunc);
        for (const auto& r : rows_) out << to_json(r).dump() << '\n';
        return ck;
    }

    int start() const noexcept { return start_; }

    /// Last step index (exclusive) this invocation should run to.
    int end(int total) const { return opts_.stop_after >= 0 ? std::min(total, opts_.stop_after) : total; }

    void record(MetricRow row) {
        std::ofstream out(metrics_path(run_dir_, stage_), std::ios::app);
        out << to_json(row).dump() << '\n';
        if (opts_.verbose && (row.step % 50 == 0)) {
            std::fprintf(stderr, "[%s] step %d l_rec=%.6g l_tavsd_gmean=%.4g l_diff=%.6g (%.0f ms)\n",
                         to_string(stage_).c_str(), row.step, row.l_rec, row.l_tavsd_gmean, row.l_diff, row.wall_ms);
        }
        rows_.push_back(row);
    }

    bool due(int done, int total) const {
        return done % cfg_.train.checkpoint_every == 0 || done == total || done == opts_.stop_after;
    }

    void save(const ParamStore& store, int done, bool complete, const json& extra = json::object()) {
        json meta = stage_meta(cfg_, stage_, done, complete);
        meta.update(extra);
        save_checkpoint(checkpoint_dir(run_dir_, stage_), store, std::move(meta));
    }

    StageReport report(int done, bool complete, json summary) {
        if (complete) {
            std::ofstream out(stage_dir(run_dir_, stage_) / "report.json");
            out << summary.dump(1) << '\n';
        }
        return {stage_, done, complete, rows_, std::move(summary)};
    }

private:
    Stage stage_;
    const RunConfig& cfg_;
    fs::path run_dir_;
    RunOptions opts_;
    int start_ = 0;
    std::vector<MetricRow> rows_;
};

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

WeightBinding::Predicate autoencoder_trainable() {
    return [](std::string_view n) {
        if (!(n.starts_with("tae.") || n.starts_with("dec."))) return false;
        return !n.starts_with("tae.time.") && n.find(".film.") == std::string_view::npos;
    };
}

/// Divides encoder output channel c by its RMS r_c and multiplies decoder input channel c by r_c.
void fold_latent_scale(ParamStore& p, const Tensor& latents) {
    const int n = latents.dim(0), c = latents.dim(1);
    const std::size_t plane = static_cast<std::size_t>(latents.dim(2)) * latents.dim(3);
    std::vector<double> rms(static_cast<std::size_t>(c), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const float* v = latents.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) rms[static_cast<std::size_t>(ch)] += static_cast<double>(v[k]) * v[k];
        }
    }
    for (double& r : rms) r = std::sqrt(r / (static_cast<double>(n) * plane));

    Tensor& w_out = p.at("tae.conv_out.weight");
    Tensor& b_out = p.at("tae.conv_out.bias");
    const std::size_t per_out = w_out.numel() / static_cast<std::size_t>(c);
    for (int ch = 0; ch < c; ++ch) {
        const double r = std::max(rms[static_cast<std::size_t>(ch)], 1e-6);
        for (std::size_t k = 0; k < per_out; ++k) w_out[ch * per_out + k] = static_cast<float>(w_out[ch * per_out + k] / r);
        b_out[static_cast<std::size_t>(ch)] = static_cast<float>(b_out[static_cast<std::size_t>(ch)] / r);
    }
    Tensor& w_in = p.at("dec.conv_in.weight");
    const int co = w_in.dim(0);
    const std::size_t kk = static_cast<std::size_t>(w_in.dim(2)) * w_in.dim(3);
    for (int o = 0; o < co; ++o) {
        for (int ch = 0; ch < c; ++ch) {
            const double r = std::max(rms[static_cast<std::size_t>(ch)], 1e-6);
            float* w = w_in.data() + (static_cast<std::size_t>(o) * c + ch) * kk;
            for (std::size_t k = 0; k < kk; ++k) w[k] = static_cast<float>(w[k] * r);
        }
    }
}

Tensor encode_batch(const Tensor& x, const ParamStore& ae) {
    WeightBinding b(ae);
    const std::vector<int> t(static_cast<std::size_t>(x.dim(0)), 0);
    return tae_encode(ag::constant(x), t, b).value();
}

Tensor decode_batch(const Tensor& z, const ParamStore& ae) {
    WeightBinding b(ae);
    Tensor out = vae_decode(ag::constant(z), b).value();
    return clamp01(std::move(out));
}

/// Encodes `hq` in chunks so memory stays bounded for large held-out sets.
Tensor encode_all(const std::vector<Tensor>& hq, const ParamStore& ae) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < hq.size(); i += 16) {
        const std::size_t j = std::min(hq.size(), i + 16);
        Tensor z = encode_batch(stack(std::span(hq).subspan(i, j - i)), ae);
        for (std::size_t k = 0; k < j - i; ++k) out.push_back(unstack_at(z, static_cast<int>(k)));
    }
    return stack(out);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Held-out eps-MSE of a teacher over uniform t with fixed noise.
double heldout_eps_mse(const RunConfig& cfg, const ParamStore& teacher, const Tensor& latents,
                       const NoiseSchedule& sched) {
    CounterRng rng(sub_seed(cfg, kSeedHeldoutNoise), 0);
    const int n = latents.dim(0);
    std::vector<int> t(static_cast<std::size_t>(n));
    for (int& v : t) v = rng.uniform_int(0, sched.T - 1);
    Tensor eps = normal_tensor(rng, latents.shape());
    Tensor zt = add_noise_batch(latents, t, eps, sched);
    WeightBinding b(teacher);
    Tensor pred = unet_forward(ag::constant(zt), t, b, UnetHead::eps).value();
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) s += (static_cast<double>(pred[i]) - eps[i]) * (pred[i] - eps[i]);
    return s / static_cast<double>(pred.numel());
}

}  // namespace

std::string to_string(Stage s) {
    switch (s) {
        case Stage::autoencoder: return "autoencoder";
        case Stage::teacher: return "teacher";
        case Stage::distill: return "distill";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "autoencoder") return Stage::autoencoder;
    if (s == "teacher") return Stage::teacher;
    if (s == "distill") return Stage::distill;
    throw ParameterError("unknown stage '" + s + "' (expected autoencoder, teacher or distill)");
}

json to_json(const MetricRow& r) {
    return {{"step", r.step}, {"l_rec", r.l_rec}, {"l_tavsd_gmean", r.l_tavsd_gmean}, {"l_diff", r.l_diff},
            {"wall_ms", r.wall_ms}};
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
    std::vector<MetricRow> rows;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        rows.push_back({j.at("step").get<int>(), j.at("l_rec").get<double>(), j.at("l_tavsd_gmean").get<double>(),
                        j.at("l_diff").get<double>(), j.at("wall_ms").get<double>()});
    }
    return rows;
}

fs::path stage_dir(const fs::path& run_dir, Stage s) { return run_dir / to_string(s); }
fs::path checkpoint_dir(const fs::path& run_dir, Stage s) { return stage_dir(run_dir, s) / "checkpoint"; }
fs::path metrics_path(const fs::path& run_dir, Stage s) { return stage_dir(run_dir, s) / "metrics.jsonl"; }

std::vector<ImagePair> heldout_pairs(const RunConfig& cfg) {
    return make_dataset(cfg.eval.pairs, cfg.degrade, cfg.eval.seed, cfg.arch.image_size);
}

Tensor upsample_lq(const Tensor& lq, int scale) { return resize_bilinear(lq, lq.dim(1) * scale, lq.dim(2) * scale); }

// ---------------------------------------------------------------------------
// Autoencoder

StageReport pretrain_autoencoder(const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts) {
    cfg.validate();
    const StageConfig& sc = cfg.train.autoencoder;
    StageLoop loop(Stage::autoencoder, cfg, run_dir, opts);

    ParamStore params(cfg.arch);
    {
        const ParamStore all = init_params(cfg.arch, sub_seed(cfg, kSeedInit));
        params.merge(all.select("tae."));
        params.merge(all.select("dec."));
    }
    AdamW opt(cfg.train.adamw);
    if (auto ck = loop.begin()) {
        if (ck->config.value("complete", false)) {
            return loop.report(ck->config.at("step").get<int>(), true, ck->config.value("summary", json::object()));
        }
        params = ck->store.select("tae.");
        params.merge(ck->store.select("dec."));
        opt.load_state(ck->store.extract_prefix("optim.ae."));
    }

    const auto trainable = autoencoder_trainable();
    const std::uint64_t data_seed = sub_seed(cfg, kSeedAeData);
    const int last = loop.end(sc.steps);
    int done = loop.start();
    auto snapshot = [&] {
        ParamStore s = params;
        s.merge(opt.state().with_prefix("optim.ae."));
        return s;
    };
    for (; done < last; ++done) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor x = hq_batch(cfg, data_seed, done, sc.batch_size);
        WeightBinding b(params, trainable);
        const std::vector<int> t(static_cast<std::size_t>(sc.batch_size), 0);
        ag::Var x_hat = vae_decode(tae_encode(ag::constant(x), t, b), b);
        ag::Var loss = ag::mse(x_hat, ag::constant(x));
        const double l = loss.value().item();
        check_finite(l, "reconstruction loss", Stage::autoencoder, done);
        ag::backward(loss);
        opt.step(params, b.base_grads(), sc.lr);
        loop.record({done, l, 0.0, 0.0, elapsed_ms(t0)});
        if (loop.due(done + 1, sc.steps) && done + 1 < sc.steps) loop.save(snapshot(), done + 1, false);
    }
    if (done < sc.steps) return loop.report(done, false, json::object());

    // Latent normalisation from a fixed sample of training-distribution images.
    std::vector<Tensor> calib;
    for (int i = 0; i < 64; ++i) calib.push_back(gen_hq(pair_seed(data_seed, ~0ULL - static_cast<std::uint64_t>(i)), cfg.arch.image_size));
    fold_latent_scale(params, encode_all(calib, params));

    const auto held = heldout_pairs(cfg);
    std::vector<double> psnrs;
    for (const auto& p : held) {
        const Tensor x = stack(std::span(&p.hq, 1));
        const Tensor rec = unstack_at(decode_batch(encode_batch(x, params), params), 0);
        psnrs.push_back(psnr_serialized(psnr(rec, p.hq)));
    }
    json summary = {{"heldout_psnr", mean_of(psnrs)}, {"pairs", held.size()}};
    loop.save(snapshot(), done, true, {{"summary", summary}});
    return loop.report(done, true, summary);
}

// ---------------------------------------------------------------------------
// Teacher

StageReport pretrain_teacher(const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts) {
    cfg.validate();
    const StageConfig& sc = cfg.train.teacher;
    const Checkpoint ae_ck = require_stage(run_dir, Stage::autoencoder, Stage::teacher);
    ParamStore ae = ae_ck.store.select("tae.");
    ae.set_arch(cfg.arch);
    ae.merge(ae_ck.store.select("dec."));

    StageLoop loop(Stage::teacher, cfg, run_dir, opts);
    const NoiseSchedule sched = cfg.make_noise_schedule();
    ParamStore unet = init_params(cfg.arch, sub_seed(cfg, kSeedInit)).select("unet.");
    unet.set_arch(cfg.arch);
    AdamW opt(cfg.train.adamw);
    if (auto ck = loop.begin()) {
        if (ck->config.value("complete", false)) {
            return loop.report(ck->config.at("step").get<int>(), true, ck->config.value("summary", json::object()));
        }
        unet = ck->store.extract_prefix("teacher.");
        unet.set_arch(cfg.arch);
        opt.load_state(ck->store.extract_prefix("optim.teacher."));
    }
    auto snapshot = [&] {
        ParamStore s = unet.with_prefix("teacher.");
        s.set_arch(cfg.arch);
        s.merge(opt.state().with_prefix("optim.teacher."));
        return s;
    };

    const auto trainable = prefix_predicate({"unet."});
    const std::uint64_t data_seed = sub_seed(cfg, kSeedTeacherData);
    const std::uint64_t noise_seed = sub_seed(cfg, kSeedTeacherNoise);
    const int last = loop.end(sc.steps);
    int done = loop.start();
    for (; done < last; ++done) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor z0 = encode_batch(hq_batch(cfg, data_seed, done, sc.batch_size), ae);
        CounterRng rng(noise_seed, static_cast<std::uint64_t>(done));
        std::vector<int> t(static_cast<std::size_t>(sc.batch_size));
        for (int& v : t) v = rng.uniform_int(0, sched.T - 1);
        const Tensor eps = normal_tensor(rng, z0.shape());
        WeightBinding b(unet, trainable);
        ag::Var pred = unet_forward(ag::constant(add_noise_batch(z0, t, eps, sched)), t, b, UnetHead::eps);
        ag::Var loss = ag::mse(pred, ag::constant(eps));
        const double l = loss.value().item();
        check_finite(l, "noise-prediction loss", Stage::teacher, done);
        ag::backward(loss);
        opt.step(unet, b.base_grads(), sc.lr);
        loop.record({done, 0.0, 0.0, l, elapsed_ms(t0)});
        if (loop.due(done + 1, sc.steps) && done + 1 < sc.steps) loop.save(snapshot(), done + 1, false);
    }
    if (done < sc.steps) return loop.report(done, false, json::object());

    const auto held = heldout_pairs(cfg);
    std::vector<Tensor> hq;
    for (const auto& p : held) hq.push_back(p.hq);
    const Tensor latents = encode_all(hq, ae);
    const double mse = heldout_eps_mse(cfg, unet, latents, sched);

    // Time conditioning: same noisy latents evaluated at two timesteps.
    const Tensor z = unstack_at(latents, 0);
    const double live = mean_abs_diff(unet_forward(z, 100, unet), unet_forward(z, 700, unet));
    json summary = {{"heldout_eps_mse", mse}, {"t_liveness", live}, {"pairs", held.size()}};
    loop.save(snapshot(), done, true, {{"summary", summary}});
    return loop.report(done, true, summary);
}

// ---------------------------------------------------------------------------
// Distillation

Distiller::Distiller(const RunConfig& cfg, const ParamStore& autoencoder, const ParamStore& teacher)
    : cfg_(cfg),
      schedule_(cfg.make_noise_schedule()),
      teacher_(teacher),
      student_(cfg.arch),
      opt_student_(cfg.train.adamw),
      opt_student_lora_(cfg.train.adamw),
      opt_critic_(cfg.train.adamw) {
    teacher_.set_arch(cfg.arch);
    student_.merge(autoencoder.select("tae."));
    student_.merge(teacher_);
    student_.merge(autoencoder.select("dec."));
    student_.at("unet.x0_head.weight").fill(0.0f);
    student_.at("unet.x0_head.bias").fill(0.0f);
    const auto& d = cfg.train.distill;
    if (!d.full_finetune) student_lora_ = init_lora(teacher_, d.lora_rank, sub_seed(cfg, kSeedStudentLora));
    critic_ = init_lora(teacher_, d.lora_rank, sub_seed(cfg, kSeedCriticLora));
    probe_ = make_probe(cfg.arch, sub_seed(cfg, kSeedProbe));
}

VSDContext Distiller::vsd_context() const {
    return {&teacher_, &teacher_, &critic_, &schedule_, cfg_.train.distill.omega, cfg_.timestep_map.t_min,
            cfg_.timestep_map.t_max};
}

WeightBinding::Predicate Distiller::student_trainable() const {
    const auto& d = cfg_.train.distill;
    if (d.full_finetune) return prefix_predicate({"tae.", "unet."});
    return prefix_predicate({"tae.", "unet.x0_head."});
}

Distiller::StepOutcome Distiller::step() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& d = cfg_.train.distill;
    const int B = d.batch_size;
    StepOutcome out;

    const std::vector<ImagePair> pairs = make_dataset(B, cfg_.degrade, sub_seed(cfg_, kSeedDistillData),
                                                      cfg_.arch.image_size,
                                                      static_cast<std::uint64_t>(step_) * static_cast<std::uint64_t>(B));
    const Tensor x_h = stack_field(pairs, false, cfg_.degrade.final_scale);
    const Tensor x_l = stack_field(pairs, true, cfg_.degrade.final_scale);

    CounterRng rng(sub_seed(cfg_, kSeedDistillNoise), static_cast<std::uint64_t>(step_));
    std::vector<int> t_s(static_cast<std::size_t>(B));
    for (int& v : t_s) v = rng.uniform_int(0, kStudentTimesteps - 1);
    const Tensor eps = normal_tensor(rng, latent_batch_shape(cfg_.arch, B));
    std::vector<int> t(static_cast<std::size_t>(B));
    for (int& v : t) v = rng.uniform_int(0, schedule_.T - 1);
    const Tensor eps_prime = normal_tensor(rng, latent_batch_shape(cfg_.arch, B));

    const VSDContext ctx = vsd_context();

    // Student update.
    WeightBinding sb(student_, student_trainable(), student_lora_.tensors.size() ? &student_lora_ : nullptr, true);
    WeightBinding pb(probe_);
    StudentTerms terms = student_loss(x_l, x_h, t_s, sb, d.student_head, pb, ctx, cfg_.timestep_map, eps, d.weights);
    const double l_total = terms.total.value().item();
    check_finite(l_total, "student loss", Stage::distill, step_);
    ag::backward(terms.total);
    out.student_grads = sb.base_grads();
    out.student_lora_grads = sb.lora_grads();
    opt_student_.step(student_, out.student_grads, d.lr);
    if (student_lora_.tensors.size()) opt_student_lora_.step(student_lora_.tensors, out.student_lora_grads, d.lr);

    // Critic update on the detached student output.
    const Tensor z_hat = terms.z_hat.value();
    WeightBinding cb(teacher_, {}, &critic_, true);
    ag::Var l_diff = lora_diffusion_loss(z_hat, t, eps_prime, ctx, cb);
    const double ld = l_diff.value().item();
    check_finite(ld, "critic diffusion loss", Stage::distill, step_);
    ag::backward(l_diff);
    out.critic_grads = cb.lora_grads();
    out.student_grads_after_critic = cb.base_grads();
    opt_critic_.step(critic_.tensors, out.critic_grads, d.critic_lr);

    out.row = {step_, terms.rec.value().item(), mean_abs(terms.tavsd.g), ld, elapsed_ms(t0)};
    ++step_;
    return out;
}

ParamStore Distiller::to_store() const {
    ParamStore s(cfg_.arch);
    s.merge(student_.select("tae."));
    s.merge(student_.select("dec."));
    s.merge(student_.select("unet.").with_prefix("student."));
    s.merge(teacher_.with_prefix("teacher."));
    s.merge(student_lora_.tensors.with_prefix("student_lora."));
    s.merge(critic_.tensors.with_prefix("critic_lora."));
    s.merge(opt_student_.state().with_prefix("optim.student."));
    s.merge(opt_student_lora_.state().with_prefix("optim.student_lora."));
    s.merge(opt_critic_.state().with_prefix("optim.critic."));
    return s;
}

void Distiller::load_store(const ParamStore& s, int step) {
    student_ = ParamStore(cfg_.arch);
    student_.merge(s.select("tae."));
    student_.merge(s.extract_prefix("student."));
    student_.merge(s.select("dec."));
    teacher_ = s.extract_prefix("teacher.");
    teacher_.set_arch(cfg_.arch);
    student_lora_.tensors = s.extract_prefix("student_lora.");
    critic_.tensors = s.extract_prefix("critic_lora.");
    opt_student_.load_state(s.extract_prefix("optim.student."));
    opt_student_lora_.load_state(s.extract_prefix("optim.student_lora."));
    opt_critic_.load_state(s.extract_prefix("optim.critic."));
    step_ = step;
}

StudentModel student_from(const Distiller& d, const RunConfig& cfg) {
    return {d.student(), d.student_lora(), cfg.train.distill.student_head, d.schedule(), cfg.degrade.final_scale};
}

Tensor student_latent(const StudentModel& m, const Tensor& lq_up, std::span<const int> t_s) {
    WeightBinding b(m.params, {}, m.lora.tensors.size() ? &m.lora : nullptr, false);
    ag::Var z = tae_encode(ag::constant(lq_up), t_s, b);
    return student_unet(z, t_s, b, m.head, m.schedule).value();
}

Tensor super_resolve(const StudentModel& m, const Tensor& lq, int t_s) {
    if (t_s < 0 || t_s >= kStudentTimesteps) throw ParameterError("t_s must lie in [0, 999]");
    const auto& a = m.params.arch();
    if (lq.rank() != 3 || lq.dim(0) != a.image_channels || lq.dim(1) * m.scale % 4 != 0 ||
        lq.dim(2) * m.scale % 4 != 0) {
        throw ShapeError("super_resolve: LQ image " + shape_to_string(lq.shape()) + " is not latent-compatible");
    }
    const int reduce = 4 << (a.unet_channels.size() - 1);
    if (lq.dim(1) * m.scale % reduce != 0 || lq.dim(2) * m.scale % reduce != 0) {
        throw ShapeError("super_resolve: LQ image " + shape_to_string(lq.shape()) + " is not latent-compatible");
    }
    const Tensor up = upsample_lq(lq, m.scale);
    const int t[1] = {t_s};
    const Tensor z = student_latent(m, stack(std::span(&up, 1)), t);
    WeightBinding b(m.params);
    return clamp01(unstack_at(vae_decode(ag::constant(z), b).value(), 0));
}

StudentModel load_student(const fs::path& path) {
    const Checkpoint ck = checkpoint_exists(path) ? load_checkpoint(path) : require_stage(path, Stage::distill, Stage::distill);
    if (ck.config.value("stage", std::string()) != "distill") {
        throw DependencyError(path.string() + " does not hold a distill stage checkpoint");
    }
    const RunConfig cfg = run_config_from_json(ck.config.at("run_config"));
    StudentModel m;
    m.params = ParamStore(cfg.arch);
    m.params.merge(ck.store.select("tae."));
    m.params.merge(ck.store.extract_prefix("student."));
    m.params.merge(ck.store.select("dec."));
    m.lora.rank = cfg.train.distill.lora_rank;
    m.lora.scale = 1.0f / static_cast<float>(m.lora.rank);
    m.lora.tensors = ck.store.extract_prefix("student_lora.");
    m.head = cfg.train.distill.student_head;
    m.schedule = cfg.make_noise_schedule();
    m.scale = cfg.degrade.final_scale;
    return m;
}

StageReport run_distillation(const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts) {
    cfg.validate();
    const auto& d = cfg.train.distill;
    const Checkpoint ae_ck = require_stage(run_dir, Stage::autoencoder, Stage::distill);
    const Checkpoint teacher_ck = require_stage(run_dir, Stage::teacher, Stage::distill);
    ParamStore teacher = teacher_ck.store.extract_prefix("teacher.");

    StageLoop loop(Stage::distill, cfg, run_dir, opts);
    Distiller dist(cfg, ae_ck.store, teacher);
    if (auto ck = loop.begin()) {
        if (ck->config.value("complete", false)) {
            return loop.report(ck->config.at("step").get<int>(), true, ck->config.value("summary", json::object()));
        }
        dist.load_store(ck->store, loop.start());
    }
    const int last = loop.end(d.steps);
    while (dist.steps_done() < last) {
        auto outcome = dist.step();
        loop.record(outcome.row);
        const int done = dist.steps_done();
        if (loop.due(done, d.steps) && done < d.steps) loop.save(dist.to_store(), done, false);
    }
    const int done = dist.steps_done();
    if (done < d.steps) return loop.report(done, false, json::object());

    const StudentModel model = student_from(dist, cfg);
    const auto held = heldout_pairs(cfg);
    std::vector<double> ps, pb;
    for (const auto& p : held) {
        ps.push_back(psnr_serialized(psnr(super_resolve(model, p.lq, cfg.eval.infer_ts), p.hq)));
        pb.push_back(psnr_serialized(psnr(clamp01(upsample_lq(p.lq, model.scale)), p.hq)));
    }
    json summary = {{"heldout_psnr_student", mean_of(ps)},
                    {"heldout_psnr_bilinear", mean_of(pb)},
                    {"ts", cfg.eval.infer_ts},
                    {"pairs", held.size()},
                    {"teacher_hash", dist.teacher().content_hash()}};
    loop.save(dist.to_store(), done, true, {{"summary", summary}});
    return loop.report(done, true, summary);
}

StageReport run_stage(Stage s, const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts) {
    switch (s) {
        case Stage::autoencoder: return pretrain_autoencoder(cfg, run_dir, opts);
        case Stage::teacher: return pretrain_teacher(cfg, run_dir, opts);
        case Stage::distill: return run_distillation(cfg, run_dir, opts);
    }
    throw ParameterError("unknown stage");
}

}  // namespace tadsr
