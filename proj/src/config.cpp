#include "tadsr/config.hpp"

#include <fstream>

#include "tadsr/checkpoint.hpp"
#include "tadsr/error.hpp"
#include "tadsr/hash.hpp"

namespace tadsr {

using nlohmann::json;

std::string to_string(OmegaKind k) { return k == OmegaKind::unit ? "unit" : "snr"; }
std::string to_string(StudentHead h) { return h == StudentHead::x0_residual ? "x0_residual" : "eps_convert"; }

namespace {

OmegaKind omega_from(const std::string& s) {
    if (s == "unit") return OmegaKind::unit;
    if (s == "snr") return OmegaKind::snr;
    throw ConfigError("train.distill.omega must be \"unit\" or \"snr\", got \"" + s + "\"");
}

StudentHead head_from(const std::string& s) {
    if (s == "x0_residual") return StudentHead::x0_residual;
    if (s == "eps_convert") return StudentHead::eps_convert;
    throw ConfigError("train.distill.student_head must be \"x0_residual\" or \"eps_convert\", got \"" + s + "\"");
}

json stage_json(const StageConfig& s) { return {{"steps", s.steps}, {"batch_size", s.batch_size}, {"lr", s.lr}}; }

StageConfig stage_from(const json& j) {
    return {j.at("steps").get<int>(), j.at("batch_size").get<int>(), j.at("lr").get<double>()};
}

// Every key of `given` must exist in `reference` with a compatible JSON kind.
void check_structure(const json& given, const json& reference, const std::string& path) {
    if (reference.is_object()) {
        if (!given.is_object()) throw ConfigError("config key '" + path + "' must be an object");
        for (const auto& [k, v] : given.items()) {
            const std::string sub = path.empty() ? k : path + "." + k;
            if (!reference.contains(k)) throw ConfigError("unknown config key '" + sub + "'");
            check_structure(v, reference.at(k), sub);
        }
        return;
    }
    const bool ok = (reference.is_number() && given.is_number()) || (reference.is_boolean() && given.is_boolean()) ||
                    (reference.is_string() && given.is_string()) || (reference.is_array() && given.is_array());
    if (!ok) throw ConfigError("config key '" + path + "' has the wrong type");
    if (reference.is_number_integer() && !given.is_number_integer()) {
        throw ConfigError("config key '" + path + "' must be an integer");
    }
}

}  // namespace

void RunConfig::validate() const {
    arch.validate();
    if (schedule.T < 2) throw ConfigError("schedule.T must be >= 2");
    if (!(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1.0)) {
        throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    timestep_map.validate(schedule.T);
    degrade.validate();
    if (arch.image_size % degrade.final_scale != 0) throw ConfigError("arch.image_size must divide by degrade.final_scale");
    auto check_stage = [](const StageConfig& s, const char* name) {
        if (s.steps <= 0) throw ConfigError(std::string("train.") + name + ".steps must be > 0");
        if (s.batch_size <= 0) throw ConfigError(std::string("train.") + name + ".batch_size must be > 0");
        if (!(s.lr > 0.0)) throw ConfigError(std::string("train.") + name + ".lr must be > 0");
    };
    check_stage(train.autoencoder, "autoencoder");
    check_stage(train.teacher, "teacher");
    check_stage({train.distill.steps, train.distill.batch_size, train.distill.lr}, "distill");
    if (!(train.distill.critic_lr > 0.0)) throw ConfigError("train.distill.critic_lr must be > 0");
    if (train.distill.lora_rank < 1) throw ConfigError("train.distill.lora_rank must be >= 1");
    if (train.checkpoint_every <= 0) throw ConfigError("train.checkpoint_every must be > 0");
    if (train.heldout_pairs <= 0) throw ConfigError("train.heldout_pairs must be > 0");
    if (eval.pairs <= 0) throw ConfigError("eval.pairs must be > 0");
    for (int t : eval.ts) {
        if (t < 0 || t >= kStudentTimesteps) throw ConfigError("eval.ts values must lie in [0, 999]");
    }
    if (eval.infer_ts < 0 || eval.infer_ts >= kStudentTimesteps) throw ConfigError("eval.infer_ts must lie in [0, 999]");
}

NoiseSchedule RunConfig::make_noise_schedule() const {
    return make_schedule(schedule.T, schedule.beta_start, schedule.beta_end);
}

json to_json(const RunConfig& c) {
    const auto& d = c.degrade;
    const auto& t = c.train;
    const auto& ds = t.distill;
    return {
        {"arch", arch_to_json(c.arch)},
        {"schedule", {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
        {"timestep_map",
         {{"lambda", c.timestep_map.lam},
          {"gamma", c.timestep_map.gamma},
          {"t_min", c.timestep_map.t_min},
          {"t_max", c.timestep_map.t_max}}},
        {"degrade",
         {{"orders", d.orders},
          {"blur_sigma", {d.blur_sigma.lo, d.blur_sigma.hi}},
          {"resize_scale", {d.resize_scale.lo, d.resize_scale.hi}},
          {"noise_sigma", {d.noise_sigma.lo, d.noise_sigma.hi}},
          {"quantize_levels", {d.quantize_levels.lo, d.quantize_levels.hi}},
          {"final_scale", d.final_scale}}},
        {"train",
         {{"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"heldout_pairs", t.heldout_pairs},
          {"adamw",
           {{"beta1", t.adamw.beta1},
            {"beta2", t.adamw.beta2},
            {"eps", t.adamw.eps},
            {"weight_decay", t.adamw.weight_decay}}},
          {"autoencoder", stage_json(t.autoencoder)},
          {"teacher", stage_json(t.teacher)},
          {"distill",
           {{"steps", ds.steps},
            {"batch_size", ds.batch_size},
            {"lr", ds.lr},
            {"critic_lr", ds.critic_lr},
            {"lambda_tavsd", ds.weights.lambda_tavsd},
            {"lambda_percep", ds.weights.lambda_percep},
            {"omega", to_string(ds.omega)},
            {"student_head", to_string(ds.student_head)},
            {"full_finetune", ds.full_finetune},
            {"lora_rank", ds.lora_rank}}}}},
        {"eval", {{"seed", c.eval.seed}, {"pairs", c.eval.pairs}, {"ts", c.eval.ts}, {"infer_ts", c.eval.infer_ts}}},
    };
}

RunConfig run_config_from_json(const json& given) {
    const json defaults = to_json(RunConfig{});
    check_structure(given, defaults, "");
    json j = defaults;
    j.merge_patch(given);
    RunConfig c;
    try {
        c.arch = arch_from_json(j.at("arch"));
        const auto& s = j.at("schedule");
        c.schedule = {s.at("T").get<int>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>()};
        const auto& m = j.at("timestep_map");
        c.timestep_map = {m.at("lambda").get<double>(), m.at("gamma").get<double>(), m.at("t_min").get<int>(),
                          m.at("t_max").get<int>()};
        const auto& d = j.at("degrade");
        auto real_range = [](const json& r) {
            if (r.size() != 2) throw ConfigError("degrade ranges must be [lo, hi]");
            return RealRange{r[0].get<double>(), r[1].get<double>()};
        };
        c.degrade.orders = d.at("orders").get<int>();
        c.degrade.blur_sigma = real_range(d.at("blur_sigma"));
        c.degrade.resize_scale = real_range(d.at("resize_scale"));
        c.degrade.noise_sigma = real_range(d.at("noise_sigma"));
        const auto& q = d.at("quantize_levels");
        if (q.size() != 2) throw ConfigError("degrade.quantize_levels must be [lo, hi]");
        c.degrade.quantize_levels = {q[0].get<int>(), q[1].get<int>()};
        c.degrade.final_scale = d.at("final_scale").get<int>();

        const auto& t = j.at("train");
        c.train.seed = t.at("seed").get<std::uint64_t>();
        c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
        c.train.heldout_pairs = t.at("heldout_pairs").get<int>();
        const auto& a = t.at("adamw");
        c.train.adamw = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>(),
                         a.at("weight_decay").get<double>()};
        c.train.autoencoder = stage_from(t.at("autoencoder"));
        c.train.teacher = stage_from(t.at("teacher"));
        const auto& ds = t.at("distill");
        auto& o = c.train.distill;
        o.steps = ds.at("steps").get<int>();
        o.batch_size = ds.at("batch_size").get<int>();
        o.lr = ds.at("lr").get<double>();
        o.critic_lr = ds.at("critic_lr").get<double>();
        o.weights.lambda_tavsd = ds.at("lambda_tavsd").get<double>();
        o.weights.lambda_percep = ds.at("lambda_percep").get<double>();
        o.omega = omega_from(ds.at("omega").get<std::string>());
        o.student_head = head_from(ds.at("student_head").get<std::string>());
        o.full_finetune = ds.at("full_finetune").get<bool>();
        o.lora_rank = ds.at("lora_rank").get<int>();

        const auto& e = j.at("eval");
        c.eval.seed = e.at("seed").get<std::uint64_t>();
        c.eval.pairs = e.at("pairs").get<int>();
        c.eval.ts = e.at("ts").get<std::vector<int>>();
        c.eval.infer_ts = e.at("infer_ts").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

void apply_override(json& j, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override must look like section.key=value, got '" + std::string(assignment) + "'");
    }
    const std::string path(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path.string());
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("malformed config " + path.string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(j, o);
    return run_config_from_json(j);
}

}  // namespace tadsr
