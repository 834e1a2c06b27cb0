#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "vstorm/io.hpp"

using namespace vstorm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vstorm_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> violations_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.violations();
    }
    return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v)
        if (s.find(needle) != std::string::npos) return true;
    return false;
}

ExperimentConfig smoke(const std::string& out) {
    ExperimentConfig cfg = parse_config(fs::path(VSTORM_SOURCE_DIR) / "configs" / "smoke.json");
    cfg.output_dir = scratch(out).string();
    return cfg;
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("shipped configs parse and validate") {
    const ExperimentConfig def = parse_config(fs::path(VSTORM_SOURCE_DIR) / "configs" / "default.json");
    ExperimentConfig expect;
    expect.propagate();
    CHECK(def == expect);
    const ExperimentConfig s = parse_config(fs::path(VSTORM_SOURCE_DIR) / "configs" / "smoke.json");
    CHECK(s.phantom.nx == 8);
    CHECK(s.phantom.ny == 8);
    CHECK(s.generator.nx == 8);
}

TEST_CASE("config round trip") {
    ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.train.mode = TrainMode::gstorm_ss;
    cfg.train.sigma2 = 0.123456789012345;
    cfg.train.stage_split = {0.5, 0.25, 0.25};
    cfg.phantom.slice_offsets_s = {0.0, 1.0 / 3.0, 2.5, 7.25};
    cfg.phantom.liver.intensity = 0.1 + 0.2;
    cfg.encoding.transform = TransformMode::direct;
    cfg.generator.stage_channels = {8, 8, 4, 4};
    cfg.generator.conv3d_head = true;
    cfg.evaluation.divergence_seed = 12345678901ull;
    cfg.output_dir = "some/dir";
    cfg.propagate();
    const std::string text = serialize_config(cfg);
    const ExperimentConfig back = parse_config_text(text);
    CHECK(back == cfg);
    CHECK(serialize_config(back) == text);
}

TEST_CASE("unknown keys and type mismatches are all reported with key paths") {
    const auto v = violations_of(R"({"train": {"iterations": "many", "bogus": 1}, "phantom": {"nx": 2.5}, "extra": 0})");
    CHECK(mentions(v, "train.bogus"));
    CHECK(mentions(v, "train.iterations"));
    CHECK(mentions(v, "phantom.nx"));
    CHECK(mentions(v, "extra"));
    CHECK(v.size() >= 4);
    CHECK(!violations_of("{not json").empty());
}

TEST_CASE("slice count mismatch names both keys") {
    const auto v = violations_of(R"({"phantom": {"nz": 4}, "encoding": {"coil_map_slices": 3}})");
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("encoding.coil_map_slices") != std::string::npos);
    CHECK(v[0].find("phantom.nz") != std::string::npos);
}

TEST_CASE("missing config file is a config error") {
    CHECK_THROWS_AS(parse_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("containers round trip bit-exactly") {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0.0f, 1.0f);
    ArrayContainer c;
    c.meta = {{"kind", "test"}, {"note", "two words"}};
    NamedArray cx{"cplx", DType::complex64, "t,y,x", {3, 4, 5}, {}};
    for (int i = 0; i < 2 * 60; ++i) cx.values.push_back(n(rng));
    cx.values[7] = -0.0f;
    cx.values[8] = std::numeric_limits<float>::denorm_min();
    NamedArray re{"real", DType::float32, "n", {11}, {}};
    for (int i = 0; i < 11; ++i) re.values.push_back(n(rng));
    c.arrays = {cx, re};
    const fs::path dir = scratch("roundtrip");
    save_container(dir, c);
    const ArrayContainer back = load_container(dir);
    CHECK(back.meta == c.meta);
    REQUIRE(back.arrays.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.arrays[i].name == c.arrays[i].name);
        CHECK(back.arrays[i].dtype == c.arrays[i].dtype);
        CHECK(back.arrays[i].axes == c.arrays[i].axes);
        CHECK(back.arrays[i].shape == c.arrays[i].shape);
        CHECK(std::memcmp(back.arrays[i].values.data(), c.arrays[i].values.data(), c.arrays[i].bytes()) == 0);
    }
    CHECK(fs::file_size(dir / "cplx.raw") == 60 * 8);
}

TEST_CASE("empty container") {
    const fs::path dir = scratch("empty");
    save_container(dir, {});
    CHECK(container_exists(dir));
    const ArrayContainer back = load_container(dir);
    CHECK(back.arrays.empty());
    CHECK(back.meta.empty());
}

TEST_CASE("truncated payload is a corruption error naming the array") {
    const fs::path dir = scratch("truncated");
    ArrayContainer c;
    c.arrays.push_back(NamedArray::real("weights", "n", {16}, std::vector<double>(16, 1.5)));
    save_container(dir, c);
    fs::resize_file(dir / "weights.raw", 60);
    try {
        load_container(dir);
        FAIL("expected CorruptionError");
    } catch (const CorruptionError& e) {
        CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
    CHECK_THROWS_AS(load_container(scratch("absent")), DependencyError);
}

TEST_CASE("array conversions check shape and type") {
    const std::vector<cdouble> z{{1.0, 2.0}, {-3.0, 0.5}};
    const NamedArray a = NamedArray::complex("z", "n", {2}, z);
    CHECK(a.to_complex() == z);
    CHECK_THROWS_AS(a.to_real(), ShapeError);
    CHECK_THROWS_AS(NamedArray::real("r", "n", {3}, std::vector<double>(2)), ShapeError);
    ArrayContainer c;
    c.arrays.push_back(a);
    CHECK(c.has("z"));
    CHECK_FALSE(c.has("y"));
    CHECK_THROWS_AS(c.get("y"), ConsistencyError);
    const fs::path dir = scratch("badname");
    c.arrays[0].name = "a/b";
    CHECK_THROWS_AS(save_container(dir, c), ArgumentError);
}

TEST_CASE("checkpoint round trip restores parameters and latents at float precision") {
    Architecture arch;
    arch.nx = 16;
    arch.ny = 16;
    arch.nz = 2;
    arch.base_channels = 4;
    arch.stage_channels = {4, 3};
    TrainConfig cfg;
    TrainState s = init_state(arch, {6, 6}, cfg);
    s.iteration = 42;
    const TrainState back = state_from_checkpoint(checkpoint_container(s, TrainMode::vstorm_ms, 7));
    CHECK(back.params.arch == arch);
    CHECK(back.iteration == 42);
    REQUIRE(back.params.values.size() == s.params.values.size());
    for (std::size_t i = 0; i < s.params.values.size(); ++i)
        CHECK(back.params.values[i] == static_cast<double>(static_cast<float>(s.params.values[i])));
    REQUIRE(back.latents.tracks.size() == 2);
    CHECK(back.latents.tracks[1].frames == 6);
    CHECK(back.latents.tracks[1].log_std[3] == static_cast<double>(static_cast<float>(s.latents.tracks[1].log_std[3])));
}

TEST_CASE("images") {
    const fs::path dir = scratch("images");
    write_pgm(dir / "a.pgm", 3, 2, std::vector<double>{0, 1, 2, 3, 4, 8}, 4.0);
    const std::string pgm = slurp(dir / "a.pgm");
    CHECK(pgm.substr(0, 11) == "P5\n3 2\n255\n");
    CHECK(static_cast<unsigned char>(pgm[11 + 2]) == 128);
    CHECK(static_cast<unsigned char>(pgm[11 + 5]) == 255);
    CHECK_THROWS_AS(write_pgm(dir / "b.pgm", 3, 3, std::vector<double>(6), 1.0), ShapeError);
    write_ppm(dir / "c.ppm", 1, 1, std::vector<std::uint8_t>{1, 2, 3});
    CHECK(slurp(dir / "c.ppm") == std::string("P6\n1 1\n255\n\x01\x02\x03", 14));
}

TEST_CASE("loss table format") {
    const std::string t = loss_table({{0, {3.0, 2.0, 0.5, 0.25, 0.25}}});
    CHECK(t.find("# iteration") == 0);
    CHECK(t.find("\n0 3.000000000e+00 2.000000000e+00") != std::string::npos);
}

TEST_CASE("exit codes") {
    CHECK(exit_code(ConfigError("x")) == 2);
    CHECK(exit_code(DependencyError("x")) == 3);
    CHECK(exit_code(NumericError("x")) == 4);
    CHECK(exit_code(std::runtime_error("x")) == 1);
}

TEST_CASE("stages before their inputs raise dependency errors") {
    const ExperimentConfig cfg = smoke("deps");
    for (const char* c : {"train", "reconstruct", "evaluate", "export-frames", "report"}) {
        try {
            run_pipeline(c, cfg);
            FAIL("expected DependencyError for " << c);
        } catch (const DependencyError& e) {
            CHECK(std::string(e.what()).find(cfg.output_dir) != std::string::npos);
        }
    }
    CHECK_THROWS_AS(run_pipeline("bogus", cfg), ArgumentError);
}

TEST_CASE("smoke pipeline writes every artifact") {
    const ExperimentConfig cfg = smoke("pipeline");
    for (const char* c : {"simulate", "train", "reconstruct", "evaluate", "export-frames", "report"})
        CHECK_NOTHROW(run_pipeline(c, cfg));
    const fs::path out = cfg.output_dir;
    CHECK(container_exists(out / "truth"));
    CHECK(container_exists(out / "kspace"));
    CHECK(container_exists(out / "trajectories"));
    CHECK(container_exists(out / "checkpoints/model0/final"));
    CHECK(container_exists(out / "checkpoints/model0/iter000010"));
    CHECK(container_exists(out / "recon"));
    CHECK(fs::exists(out / "loss/model0.txt"));
    CHECK(fs::exists(out / "evaluation/report.json"));
    CHECK(fs::exists(out / "frames/cross_t000.pgm"));
    CHECK(fs::exists(out / "report/summary.md"));
    CHECK(fs::exists(out / "report/loss.ppm"));
    CHECK(fs::exists(out / "report/latent_timecourse.ppm"));
    CHECK(fs::exists(out / "report/latent_scatter.ppm"));
    CHECK(load_container(out / "trajectories").get("trajectory").shape.back() == 3);
    const std::string rec = slurp(out / "records/train.txt");
    CHECK(rec.find(version_string) != std::string::npos);
    CHECK(rec.find("seed " + std::to_string(cfg.seed)) != std::string::npos);
    const ExperimentConfig copy = parse_config_text(rec.substr(rec.find("config\n") + 7));
    CHECK(copy == cfg);
}

TEST_CASE("single-slice mode writes one model per slice") {
    ExperimentConfig cfg = smoke("ss");
    cfg.train.mode = TrainMode::gstorm_ss;
    run_pipeline("simulate", cfg);
    run_pipeline("train", cfg);
    for (int z = 0; z < cfg.phantom.nz; ++z)
        CHECK(container_exists(fs::path(cfg.output_dir) / "checkpoints" / ("model" + std::to_string(z)) / "final"));
    cfg.train.mode = TrainMode::vstorm_ms;
    CHECK_THROWS_AS(run_pipeline("evaluate", cfg), DependencyError);
}

TEST_CASE("repeated runs are byte-identical") {
    ExperimentConfig a = smoke("det_a");
    ExperimentConfig b = smoke("det_b");
    for (const char* c : {"simulate", "train", "evaluate"}) {
        run_pipeline(c, a);
        run_pipeline(c, b);
    }
    for (const char* f : {"checkpoints/model0/final/manifest.txt", "evaluation/report.json", "evaluation/report.txt",
                          "loss/model0.txt", "kspace/slice1.data.raw"})
        CHECK_MESSAGE(slurp(fs::path(a.output_dir) / f) == slurp(fs::path(b.output_dir) / f), f);
    for (const auto& e : fs::directory_iterator(fs::path(a.output_dir) / "checkpoints/model0/final"))
        CHECK(slurp(e.path()) == slurp(fs::path(b.output_dir) / "checkpoints/model0/final" / e.path().filename()));
}

}
