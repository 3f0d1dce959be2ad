#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "tadsr/degrade.hpp"
#include "tadsr/error.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/image_io.hpp"
#include "tadsr/metrics.hpp"
#include "tadsr/selftest.hpp"
#include "test_util.hpp"

using namespace tadsr;
namespace fs = std::filesystem;

namespace {
double pixel_std(const Tensor& t) {
    double s = 0.0, s2 = 0.0;
    for (float v : t.values()) {
        s += v;
        s2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(t.numel());
    return std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
}

DegradationConfig identity_config() {
    DegradationConfig cfg;
    cfg.blur_sigma = {0.0, 0.0};
    cfg.resize_scale = {1.0, 1.0};
    cfg.noise_sigma = {0.0, 0.0};
    cfg.quantize_levels = {256, 256};
    return cfg;
}
}  // namespace

TEST_CASE("generated images are deterministic, bounded and non-degenerate") {
    CHECK(bit_equal(gen_hq(5, 48), gen_hq(5, 48)));
    CHECK_FALSE(bit_equal(gen_hq(5, 48), gen_hq(6, 48)));
    int lively = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const Tensor x = gen_hq(s, 48);
        REQUIRE(x.shape() == std::vector<int>{3, 48, 48});
        bool in_range = true;
        for (float v : x.values()) in_range = in_range && v >= 0.0f && v <= 1.0f;
        CHECK(in_range);
        lively += pixel_std(x) > 0.05 ? 1 : 0;
    }
    CHECK(lively >= 990);
}

TEST_CASE("degradation is deterministic and sized by the final scale") {
    const DegradationConfig cfg;
    const ImagePair a = make_pair(11, 48, cfg);
    const ImagePair b = make_pair(11, 48, cfg);
    CHECK(bit_equal(a.lq, b.lq));
    CHECK(bit_equal(a.hq, b.hq));
    CHECK(a.lq.shape() == std::vector<int>{3, 12, 12});
    CHECK(a.applied_params.size() == 2);
    for (const auto& o : a.applied_params) {
        CHECK(o.blur_sigma >= 0.2);
        CHECK(o.blur_sigma <= 2.0);
        CHECK(o.levels >= 16);
        CHECK(o.levels <= 256);
    }
    for (float v : a.lq.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(pair_hash(a) == pair_hash(b));
    CHECK(pair_hash(a) != pair_hash(make_pair(12, 48, cfg)));
}

TEST_CASE("golden hashes match the frozen table") { CHECK(compute_golden_hashes() == default_golden_hashes()); }

TEST_CASE("identity ranges reduce to a bilinear downsample") {
    const Tensor hq = gen_hq(21, 48);
    const ImagePair p = degrade(hq, identity_config(), 22);
    CHECK(max_abs_diff(p.lq, resize_bilinear(hq, 12, 12)) <= 1e-6);
}

TEST_CASE("default degradation lowers PSNR against the identity pipeline") {
    const DegradationConfig def;
    const DegradationConfig id = identity_config();
    double worse = 0.0, identity = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
        const std::uint64_t s = pair_seed(77, i);
        const ImagePair d = make_pair(s, 48, def);
        const ImagePair c = make_pair(s, 48, id);
        worse += psnr(resize_bilinear(d.lq, 48, 48), d.hq);
        identity += psnr(resize_bilinear(c.lq, 48, 48), c.hq);
    }
    CHECK(worse < identity);
}

TEST_CASE("datasets are reproducible, seeded per index and thread-count independent") {
    const DegradationConfig cfg;
    const auto a = make_dataset(6, cfg, 3);
    REQUIRE(a.size() == 6);
    std::set<std::string> hashes;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].seed == pair_seed(3, i));
        hashes.insert(pair_hash(a[i]));
    }
    CHECK(hashes.size() == 6);
    const auto tail = make_dataset(2, cfg, 3, 48, 4);
    CHECK(pair_hash(tail[0]) == pair_hash(a[4]));
    CHECK(pair_hash(tail[1]) == pair_hash(a[5]));
    ::setenv("TADSR_LAB_THREADS", "1", 1);
    const auto serial = make_dataset(6, cfg, 3);
    ::unsetenv("TADSR_LAB_THREADS");
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(pair_hash(serial[i]) == pair_hash(a[i]));
}

TEST_CASE("config validation") {
    DegradationConfig cfg;
    cfg.blur_sigma = {2.0, 1.0};
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.quantize_levels = {1, 4};
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.orders = -1;
    CHECK_THROWS(cfg.validate());
    CHECK_THROWS(gen_hq(1, 50));
}

TEST_CASE("export writes PNG pairs and a manifest") {
    tadsr::testing::TempDir dir("export");
    const auto pairs = make_dataset(4, DegradationConfig{}, 9);
    export_pairs(dir.path(), pairs);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(dir.path())) pngs += e.path().extension() == ".png" ? 1 : 0;
    CHECK(pngs == 8);
    std::ifstream in(dir.path() / "pairs.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("applied_params"));
        CHECK(j.at("applied_params").size() == 2);
        const Tensor lq = read_png(dir.path() / j.at("lq").get<std::string>());
        CHECK(lq.shape() == std::vector<int>{3, 12, 12});
        ++rows;
    }
    CHECK(rows == 4);
}
