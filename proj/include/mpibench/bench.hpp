#pragma once

// Experiment orchestration: config parsing, run expansion over the parameter
// grids, a deterministic worker pool, result tables and the report.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mpibench/dip.hpp"
#include "mpibench/metrics.hpp"
#include "mpibench/preprocess.hpp"
#include "mpibench/simdata.hpp"
#include "mpibench/solvers.hpp"

namespace mpibench {

namespace fs = std::filesystem;

/// P = {0.5^(i-1) : i = 1..40}; `first`, `last` are 1-based, `stride` subsamples.
std::vector<double> halving_grid(std::size_t first = 1, std::size_t last = 40, std::size_t stride = 1);
inline const std::vector<double> kDipLearningRates{1e-3, 1e-4, 1e-5};
inline const std::vector<std::size_t> kTsvdRowCounts{32, 64, 128, 256, 512, 1024};

struct SimulateConfig {
    GridSpec grid;
    PhantomSpec phantom;
    OperatorModel model;
    int coils = 3;
    double snr_db = 20.0;
    MeasurementOptions measurement;
    std::uint64_t seed = 0;
};

struct PreprocessSweep {
    std::vector<double> snr_thresholds{0.0};  // tau list
    bool whitening = true;
    Eigen::Index rank = 2000;
    std::vector<Band> bandpass;
    std::uint64_t rsvd_seed = 0;

    PreprocessConfig at(std::size_t tau_index) const;
};

struct MetricsConfig {
    double shift_extent = 3.0;
    double shift_step = 0.5;
    double data_range = kDefaultDataRange;

    ShiftGrid shifts() const { return ShiftGrid::make(shift_extent, shift_step); }
};

enum class MethodFamily { dip, kaczmarz_l2, kaczmarz_l1l2, kaczmarz_l1, kaczmarz_tsvd_l1, var };

/// One method id with its parameter lists. Parameter names: rho, lambda, lr, keep_rows.
struct MethodSpec {
    std::string id;
    MethodFamily family = MethodFamily::kaczmarz_l2;
    std::map<std::string, std::vector<double>> grids;
    std::size_t iterations = 500;  // sweeps for Kaczmarz, steps for VAR and DIP
    int fidelity_p = 1;            // DIP and VAR
    PenaltyKind penalty = PenaltyKind::l2;
    double tv_epsilon = 1e-2;
    double var_lr = 1e-2;
    AutoencoderSpec network;
    std::vector<std::uint64_t> seeds{0};  // DIP and VAR only

    bool seeded() const { return family == MethodFamily::dip || family == MethodFamily::var; }
    /// Parameter names in the order they appear in result rows.
    std::vector<std::string> parameter_names() const;
};

/// Parses a method id such as "KACZ-l1l2" or "VAR-Dl2-Ptv"; throws ConfigError on unknown ids.
MethodSpec method_from_id(const std::string& id);

struct SweepConfig {
    std::vector<MethodSpec> methods;
};

/// A whole experiment; each subcommand reads the sections it needs.
struct ExperimentConfig {
    std::optional<SimulateConfig> simulate;
    PreprocessSweep preprocess;
    MetricsConfig metrics;
    std::optional<SweepConfig> sweep;
    std::optional<MethodSpec> reconstruct;
    std::size_t reconstruct_tau_index = 0;
};

/// Strict parse: unknown keys and malformed fields raise ConfigError naming the field path.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

struct RunSpec {
    std::size_t method_index = 0;
    std::size_t tau_index = 0;
    std::vector<std::pair<std::string, double>> params;
    std::optional<std::uint64_t> seed;
};

/// Cartesian product over taus, parameter grids and seeds in a fixed order. TSVD row
/// counts above a system's row count are dropped.
std::vector<RunSpec> expand_runs(const SweepConfig& sweep, const std::vector<ProcessedSystem>& systems);

SolverTrace execute_run(const MethodSpec& method, const RunSpec& run, const ProcessedSystem& sys);

struct ResultRow {
    std::string method;
    double tau = 0.0;
    bool whitening = true;
    Eigen::Index rank = 0;
    std::string params;  // "name=value;..."
    std::optional<std::uint64_t> seed;
    std::size_t checkpoint = 0;
    double eps_psnr = 0.0;
    double eps_ssim = 0.0;
};

struct RunFailure {
    std::size_t run_index = 0;
    std::string method;
    std::string params;
    std::string message;
};

struct SweepOutcome {
    std::vector<ResultRow> rows;
    std::vector<RunFailure> failures;
    std::vector<double> run_seconds;  // wall time per run, not part of the results table
    std::size_t runs = 0;
};

/// Executes every run with `workers` threads; output order depends only on the config.
/// Best-checkpoint volumes are written below `best_dir` when given.
SweepOutcome run_sweep(const ExperimentConfig& cfg, const std::vector<ProcessedSystem>& systems, std::size_t workers,
                       const std::optional<fs::path>& best_dir = std::nullopt);

std::string format_metric(double v);
std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);

/// Best eps_psnr and best eps_ssim row per (method, tau), ties to the earlier row.
struct SummaryEntry {
    ResultRow best_psnr;
    ResultRow best_ssim;
};
std::vector<SummaryEntry> summarize(const std::vector<ResultRow>& rows);
std::string summary_markdown(const std::vector<SummaryEntry>& summary);
std::string summary_csv(const std::vector<SummaryEntry>& summary);

/// Binary portable graymap, values mapped linearly from [0, data_range] to [0, 255] and clamped.
std::string pgm_bytes(const std::vector<double>& values, std::size_t width, std::size_t height, double data_range);
enum class SlicePlane { xy, xz, yz };
/// Central slice; rows run along the second named axis.
std::vector<double> central_slice(const Volume& v, SlicePlane plane, std::size_t& width, std::size_t& height);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv);

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitRunFailures = 4 };

}  // namespace mpibench
