#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "tadsr/config.hpp"
#include "tadsr/error.hpp"
#include "test_util.hpp"

using namespace tadsr;
using nlohmann::json;

TEST_CASE("defaults round-trip through JSON") {
    const RunConfig c;
    c.validate();
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(c.train.distill.steps == 2000);
    CHECK(c.train.distill.batch_size == 8);
    CHECK(c.train.distill.lr == 5e-5);
    CHECK(c.train.distill.lora_rank == 4);
    CHECK(c.arch.unet_channels == std::vector<int>{32, 64, 128});
}

TEST_CASE("partial configs take defaults and the hash ignores key order") {
    const json a = json::parse(R"({"train": {"seed": 7, "distill": {"steps": 10}}, "eval": {"pairs": 4}})");
    const json b = json::parse(R"({"eval": {"pairs": 4}, "train": {"distill": {"steps": 10}, "seed": 7}})");
    const RunConfig ca = run_config_from_json(a), cb = run_config_from_json(b);
    CHECK(ca.train.seed == 7);
    CHECK(ca.train.distill.steps == 10);
    CHECK(ca.train.distill.batch_size == 8);
    CHECK(config_hash(ca) == config_hash(cb));
    CHECK(config_hash(ca) != config_hash(RunConfig{}));
}

TEST_CASE("unknown keys and bad types are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"trian": {}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"distill": {"stpes": 1}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"seed": "x"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"teacher": {"steps": 1.5}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"distill": {"omega": "huge"}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"distill": {"lr": 0}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"eval": {"ts": [100, 1000]}})")), ConfigError);
}

TEST_CASE("dotted overrides") {
    json j = to_json(RunConfig{});
    apply_override(j, "train.distill.steps=25");
    apply_override(j, "train.distill.omega=snr");
    apply_override(j, "eval.ts=[100,900]");
    const RunConfig c = run_config_from_json(j);
    CHECK(c.train.distill.steps == 25);
    CHECK(c.train.distill.omega == OmegaKind::snr);
    CHECK(c.eval.ts == std::vector<int>{100, 900});
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_CASE("load from file then override") {
    tadsr::testing::TempDir dir("config");
    const auto path = dir.path() / "run.json";
    std::ofstream(path) << R"({"train": {"seed": 3, "teacher": {"steps": 9}}})";
    const RunConfig c = load_run_config(path, {"train.seed=4"});
    CHECK(c.train.seed == 4);
    CHECK(c.train.teacher.steps == 9);
    CHECK_THROWS(load_run_config(dir.path() / "missing.json"));
}
