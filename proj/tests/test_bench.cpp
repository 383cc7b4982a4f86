#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "fixtures.hpp"
#include "mpibench/bench.hpp"
#include "mpibench/container.hpp"
#include "mpibench/error.hpp"

using namespace mpibench;
namespace fs = std::filesystem;

namespace {

json small_experiment() {
    return json::parse(R"({
      "simulate": {
        "grid": {"shape": [8, 8, 8], "fov_mm": [16, 16, 8]},
        "phantom": {"kind": "cuboid_union", "boxes": [{"lo_mm": [-3, -3, -2], "hi_mm": [1, 3, 1]}]},
        "operator": {"kind": "spectral", "beta": 1.0, "frequencies_per_coil": 12},
        "coils": 2,
        "snr_db": 25,
        "seed": 4
      },
      "preprocess": {"snr_thresholds": [0, 1]},
      "metrics": {"shift_extent_mm": 0.5, "shift_step_mm": 0.5},
      "sweep": {"methods": [
        {"id": "KACZ-l2", "rho": [1, 0.01], "iterations": 40},
        {"id": "KACZ-TSVD-l1", "keep_rows": [8, 1000], "lambda": [0.1], "iterations": 20},
        {"id": "VAR-Dl2-Pl2", "lambda": [0.01], "iterations": 20, "seeds": [0, 1]}
      ]}
    })");
}

std::vector<ProcessedSystem> systems_for(const ExperimentConfig& cfg) {
    const SimulateConfig& s = *cfg.simulate;
    const Volume truth = rasterize_phantom(s.phantom, s.grid).volume;
    RawDataset ds = synth_operator(s.model, s.grid, s.coils, s.seed);
    const double sigma = noise_sigma_for_snr(ds, truth, s.snr_db);
    ds = synth_measurement(ds, truth, Vector::Constant(ds.rows(), sigma), s.measurement, s.seed + 100);
    std::vector<ProcessedSystem> out;
    for (std::size_t i = 0; i < cfg.preprocess.snr_thresholds.size(); ++i) out.push_back(build_system(ds, cfg.preprocess.at(i)));
    return out;
}

std::string config_error(const json& j) {
    try {
        experiment_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mpibench_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string read(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mpibench");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(int(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("halving grid") {
    const auto p = halving_grid();
    REQUIRE(p.size() == 40);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.5);
    CHECK(p[2] == 0.25);
    CHECK(p[39] == std::ldexp(1.0, -39));
    const auto sub = halving_grid(1, 40, 4);
    CHECK(sub.size() == 10);
    CHECK(sub[1] == 0.0625);
    CHECK_THROWS_AS(halving_grid(0, 40, 1), ConfigError);
    CHECK_THROWS_AS(halving_grid(1, 40, 0), ConfigError);
}

TEST_CASE("method ids map to one solver each") {
    CHECK(method_from_id("DIP-Dl1").family == MethodFamily::dip);
    CHECK(method_from_id("DIP-Dl1").grids.at("lr") == kDipLearningRates);
    CHECK(method_from_id("KACZ-l2").family == MethodFamily::kaczmarz_l2);
    CHECK(method_from_id("KACZ-l1l2").parameter_names() == std::vector<std::string>{"rho", "lambda"});
    CHECK(method_from_id("KACZ-l1").family == MethodFamily::kaczmarz_l1);
    CHECK(method_from_id("KACZ-TSVD-l1").grids.at("keep_rows").size() == 6);
    const MethodSpec var = method_from_id("VAR-Dl1-Ptv");
    CHECK(var.family == MethodFamily::var);
    CHECK(var.fidelity_p == 1);
    CHECK(var.penalty == PenaltyKind::tv);
    CHECK(method_from_id("VAR-Dl2-Pl1l2").parameter_names().size() == 2);
    CHECK(method_from_id("KACZ-l2").iterations == 500);
    for (const char* bad : {"KACZ-l3", "VAR-Dl3-Pl2", "VAR-Dl2-Px", "DIP", ""})
        CHECK_THROWS_AS(method_from_id(bad), ConfigError);
}

TEST_CASE("config errors name the field") {
    json j = small_experiment();
    j["simulate"].erase("coils");
    CHECK(config_error(j).find("simulate.coils") != std::string::npos);

    j = small_experiment();
    j["sweep"]["methods"][0]["rhoo"] = 1;
    CHECK(config_error(j).find("sweep.methods[0].rhoo") != std::string::npos);

    j = small_experiment();
    j["sweep"]["methods"][1]["lambda"] = "big";
    CHECK(config_error(j).find("sweep.methods[1].lambda") != std::string::npos);

    j = small_experiment();
    j["extra"] = 1;
    CHECK(config_error(j).find("extra") != std::string::npos);

    j = small_experiment();
    j["sweep"]["methods"][0]["rho"] = {{"grid", "Q"}};
    CHECK(config_error(j).find("sweep.methods[0].rho.grid") != std::string::npos);

    j = small_experiment();
    j["sweep"]["methods"][1]["keep_rows"] = {2.5};
    CHECK(config_error(j).find("keep_rows") != std::string::npos);

    CHECK(config_error(small_experiment()).empty());
}

TEST_CASE("grid references expand") {
    json j = small_experiment();
    j["sweep"]["methods"][0]["rho"] = {{"grid", "P"}, {"first", 1}, {"last", 3}};
    const auto cfg = experiment_from_json(j);
    CHECK(cfg.sweep->methods[0].grids.at("rho") == std::vector<double>{1.0, 0.5, 0.25});
}

TEST_CASE("run expansion order and filtering") {
    const auto cfg = experiment_from_json(small_experiment());
    const auto systems = systems_for(cfg);
    const auto runs = expand_runs(*cfg.sweep, systems);
    // per tau: 2 KACZ-l2, 1 TSVD (1000 rows dropped), 2 VAR seeds
    REQUIRE(runs.size() == 2 * (2 + 1 + 2));
    CHECK(runs[0].params == std::vector<std::pair<std::string, double>>{{"rho", 1.0}});
    CHECK(runs[1].params[0].second == 0.01);
    CHECK(runs[0].tau_index == 0);
    CHECK(runs[2].tau_index == 1);
    CHECK_FALSE(runs[0].seed.has_value());
    CHECK(runs[4].params[0] == std::pair<std::string, double>{"keep_rows", 8.0});
    CHECK(runs[6].seed == std::optional<std::uint64_t>(0));
    CHECK(runs[7].seed == std::optional<std::uint64_t>(1));

    SweepConfig two;
    two.methods.push_back(method_from_id("KACZ-l1l2"));
    two.methods[0].grids["rho"] = {1, 2};
    two.methods[0].grids["lambda"] = {3, 4, 5};
    const auto r2 = expand_runs(two, {systems[0]});
    REQUIRE(r2.size() == 6);
    CHECK(r2[0].params[1].second == 3);
    CHECK(r2[1].params[1].second == 4);
    CHECK(r2[3].params[0].second == 2);
}

TEST_CASE("Kaczmarz runs stop at the sweep budget") {
    const auto cfg = experiment_from_json(small_experiment());
    const auto systems = systems_for(cfg);
    const MethodSpec m = method_from_id("KACZ-l2");
    const SolverTrace t = execute_run(m, {0, 0, {{"rho", 0.5}}, std::nullopt}, systems[0]);
    const auto expected = CheckpointSchedule::standard(500).indices;
    REQUIRE(t.checkpoints.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t.checkpoints[i].iteration == expected[i]);
    CHECK(t.final_checkpoint().iteration == 500);
    CHECK(t.method == "KACZ-l2");
}

TEST_CASE("sweep output is independent of the worker count") {
    const auto cfg = experiment_from_json(small_experiment());
    const auto systems = systems_for(cfg);
    const SweepOutcome one = run_sweep(cfg, systems, 1);
    const SweepOutcome many = run_sweep(cfg, systems, 4);
    CHECK(one.failures.empty());
    CHECK(one.runs == 10);
    CHECK(results_csv(one.rows) == results_csv(many.rows));
    // one row per (run, checkpoint)
    std::size_t expected = 0;
    for (const auto& run : expand_runs(*cfg.sweep, systems)) {
        const auto& m = cfg.sweep->methods[run.method_index];
        expected += CheckpointSchedule::standard(m.iterations).indices.size();
    }
    CHECK(one.rows.size() == expected);
}

TEST_CASE("failed runs are recorded and the sweep continues") {
    json j = small_experiment();
    // Four halvings of an 8^3 input collapse a stage, so every DIP run fails at construction.
    j["sweep"]["methods"].push_back(
        {{"id", "DIP-Dl1"}, {"lr", {1e-3}}, {"iterations", 2}, {"network", {{"channels", {1, 1, 1, 1}}}}});
    const auto cfg = experiment_from_json(j);
    const SweepOutcome out = run_sweep(cfg, systems_for(cfg), 2);
    CHECK(out.runs == 12);
    REQUIRE(out.failures.size() == 2);
    CHECK(out.failures[0].method == "DIP-Dl1");
    CHECK(out.failures[0].message.find("cannot be downsampled") != std::string::npos);
    CHECK(out.rows.size() == run_sweep(experiment_from_json(small_experiment()), systems_for(cfg), 1).rows.size());
}

TEST_CASE("results table round trip") {
    std::vector<ResultRow> rows{
        {"KACZ-l2", 0.0, true, 2000, "rho=0.5", std::nullopt, 3, 23.5, 0.25},
        {"DIP-Dl1", 2.0, false, 64, "lr=0.001", 7, 10, std::numeric_limits<double>::infinity(), 1.0},
    };
    const std::string csv = results_csv(rows);
    CHECK(csv.find("wall") == std::string::npos);
    const auto back = parse_results_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(results_csv(back) == csv);
    CHECK(std::isinf(back[1].eps_psnr));
    CHECK(back[1].seed == std::optional<std::uint64_t>(7));
    CHECK_FALSE(back[0].whitening == false);
    CHECK_THROWS_AS(parse_results_csv("nope\n"), DataError);
    CHECK_THROWS_AS(parse_results_csv(csv + "x,y\n"), DataError);
}

TEST_CASE("summary keeps the first best row per method and threshold") {
    std::vector<ResultRow> rows{
        {"A", 0, true, 10, "p=1", std::nullopt, 1, 20.0, 0.5},
        {"A", 0, true, 10, "p=2", std::nullopt, 1, 22.0, 0.5},
        {"A", 0, true, 10, "p=3", std::nullopt, 1, 22.0, 0.7},
        {"B", 0, true, 10, "p=1", std::nullopt, 1, 10.0, 0.1},
        {"A", 1, true, 10, "p=1", std::nullopt, 1, 5.0, 0.1},
    };
    const auto s = summarize(rows);
    REQUIRE(s.size() == 3);
    CHECK(s[0].best_psnr.params == "p=2");
    CHECK(s[0].best_ssim.params == "p=3");
    CHECK(s[1].best_psnr.method == "B");
    CHECK(s[2].best_psnr.tau == 1.0);
    CHECK(summary_markdown({s[1]}).find("| B | 0 | 10.00 |") != std::string::npos);
    CHECK(summary_csv(s).substr(0, 6) == "method");
}

TEST_CASE("graymap mapping and slices") {
    const std::string pgm = pgm_bytes({0.0, 50.0, 100.0, 150.0, -3.0, 25.0}, 3, 2, 100.0);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 6);
    CHECK(pgm.substr(0, header.size()) == header);
    const auto px = [&](std::size_t i) { return int(static_cast<unsigned char>(pgm[header.size() + i])); };
    CHECK(px(0) == 0);
    CHECK(px(1) == 128);
    CHECK(px(2) == 255);
    CHECK(px(3) == 255);
    CHECK(px(4) == 0);
    CHECK(px(5) == 64);
    CHECK_THROWS_AS(pgm_bytes({1.0}, 2, 1, 100.0), DimensionError);

    Volume v({19, 19, 19});
    v.at(3, 4, 9) = 7.0;
    std::size_t w = 0, h = 0;
    const auto xy = central_slice(v, SlicePlane::xy, w, h);
    CHECK(w == 19);
    CHECK(h == 19);
    CHECK(xy[4 * 19 + 3] == 7.0);
    central_slice(v, SlicePlane::xz, w, h);
    CHECK((w == 19 && h == 19));
    Volume flat({6, 5, 4});
    central_slice(flat, SlicePlane::yz, w, h);
    CHECK((w == 5 && h == 4));
}

TEST_CASE("command line pipeline and exit codes") {
    TempDir dir("cli");
    const fs::path cfg_path = dir.path / "experiment.json";
    {
        json j = small_experiment();
        j["reconstruct"] = {{"id", "KACZ-l2"}, {"rho", {0.01}}, {"iterations", 30}};
        std::ofstream(cfg_path) << j.dump(2);
    }
    const std::string cfg = cfg_path.string(), out = (dir.path / "out").string();

    CHECK(cli({}) == kExitConfig);
    CHECK(cli({"simulate", "--out", out}) == kExitConfig);
    CHECK(cli({"report", "--out", out}) == kExitData);
    CHECK(cli({"preprocess", "--config", cfg, "--out", out}) == kExitData);

    REQUIRE(cli({"simulate", "--config", cfg, "--out", out}) == kExitOk);
    const std::string first = read(fs::path(out) / "dataset" / "manifest.json");
    REQUIRE(cli({"simulate", "--config", cfg, "--out", out}) == kExitOk);
    CHECK(read(fs::path(out) / "dataset" / "manifest.json") == first);
    REQUIRE(cli({"simulate", "--config", cfg, "--out", out, "--seed", "9"}) == kExitOk);
    CHECK(read(fs::path(out) / "dataset" / "manifest.json") != first);
    REQUIRE(cli({"simulate", "--config", cfg, "--out", out}) == kExitOk);

    CHECK(cli({"preprocess", "--config", cfg, "--out", out}) == kExitOk);
    CHECK(fs::exists(fs::path(out) / "systems" / "tau1" / "manifest.json"));
    CHECK(cli({"reconstruct", "--config", cfg, "--out", out}) == kExitOk);
    CHECK(cli({"evaluate", "--config", cfg, "--out", out}) == kExitOk);
    CHECK(fs::exists(fs::path(out) / "reconstruct" / "evaluation.csv"));

    REQUIRE(cli({"sweep", "--config", cfg, "--out", out, "--workers", "3"}) == kExitOk);
    const std::string results = read(fs::path(out) / "results.csv");
    REQUIRE(cli({"report", "--out", out}) == kExitOk);
    const std::string report = read(fs::path(out) / "report" / "report.md");
    CHECK(report.find("KACZ-TSVD-l1") != std::string::npos);
    const std::string slice = read(fs::path(out) / "report" / "slices" / "KACZ-l2_tau0_psnr_xy.pgm");
    CHECK(slice.substr(0, 8) == "P5\n8 8\n2");
    REQUIRE(cli({"report", "--out", out}) == kExitOk);
    CHECK(read(fs::path(out) / "report" / "report.md") == report);

    // An empty results table is a data error.
    {
        std::ofstream(fs::path(out) / "results.csv") << "method,tau,whitening,rank,params,seed,checkpoint,eps_psnr,eps_ssim\n";
    }
    CHECK(cli({"report", "--out", out}) == kExitData);

    // Recorded run failures give their own exit code.
    {
        json j = small_experiment();
        j["sweep"]["methods"] = {
            {{"id", "DIP-Dl1"}, {"lr", {1e-3}}, {"iterations", 2}, {"network", {{"channels", {1, 1, 1, 1}}}}}};
        std::ofstream(cfg_path) << j.dump(2);
    }
    CHECK(cli({"sweep", "--config", cfg, "--out", out}) == kExitRunFailures);
    CHECK(read(fs::path(out) / "failures.csv").find("DIP-Dl1") != std::string::npos);
    (void)results;
}
