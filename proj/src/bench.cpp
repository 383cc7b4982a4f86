#include "mpibench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mpibench/container.hpp"
#include "mpibench/error.hpp"
#include "mpibench/json_io.hpp"

namespace mpibench {

std::vector<double> halving_grid(std::size_t first, std::size_t last, std::size_t stride) {
    if (first < 1 || last < first || stride < 1) throw ConfigError("halving grid: need 1 <= first <= last and stride >= 1");
    std::vector<double> out;
    for (std::size_t i = first; i <= last; i += stride) out.push_back(std::ldexp(1.0, -int(i - 1)));
    return out;
}

PreprocessConfig PreprocessSweep::at(std::size_t tau_index) const {
    PreprocessConfig c;
    c.snr_threshold = snr_thresholds.at(tau_index);
    c.whitening = whitening;
    c.rank = rank;
    c.bandpass = bandpass;
    c.rsvd_seed = rsvd_seed;
    c.validate();
    return c;
}

std::vector<std::string> MethodSpec::parameter_names() const {
    switch (family) {
        case MethodFamily::dip: return {"lr"};
        case MethodFamily::kaczmarz_l2: return {"rho"};
        case MethodFamily::kaczmarz_l1l2: return {"rho", "lambda"};
        case MethodFamily::kaczmarz_l1: return {"lambda"};
        case MethodFamily::kaczmarz_tsvd_l1: return {"keep_rows", "lambda"};
        case MethodFamily::var:
            return penalty == PenaltyKind::l1_plus_l2 ? std::vector<std::string>{"rho", "lambda"}
                                                       : std::vector<std::string>{"lambda"};
    }
    return {};
}

MethodSpec method_from_id(const std::string& id) {
    MethodSpec m;
    m.id = id;
    if (id == "DIP-Dl1" || id == "DIP-Dl2") {
        m.family = MethodFamily::dip;
        m.fidelity_p = id.back() - '0';
        m.iterations = 20000;
    } else if (id == "KACZ-l2") {
        m.family = MethodFamily::kaczmarz_l2;
    } else if (id == "KACZ-l1l2") {
        m.family = MethodFamily::kaczmarz_l1l2;
    } else if (id == "KACZ-l1") {
        m.family = MethodFamily::kaczmarz_l1;
    } else if (id == "KACZ-TSVD-l1") {
        m.family = MethodFamily::kaczmarz_tsvd_l1;
    } else if (id.rfind("VAR-Dl", 0) == 0 && id.size() > 9 && id.substr(7, 2) == "-P" &&
               (id[6] == '1' || id[6] == '2')) {
        m.family = MethodFamily::var;
        m.fidelity_p = id[6] - '0';
        const std::string r = id.substr(9);
        if (r == "l2") m.penalty = PenaltyKind::l2;
        else if (r == "l1") m.penalty = PenaltyKind::l1;
        else if (r == "l1l2") m.penalty = PenaltyKind::l1_plus_l2;
        else if (r == "tv") m.penalty = PenaltyKind::tv;
        else throw ConfigError("unknown method id '" + id + "'");
    } else {
        throw ConfigError("unknown method id '" + id +
                          "' (expected DIP-Dl1, KACZ-l2, KACZ-l1l2, KACZ-l1, KACZ-TSVD-l1 or VAR-Dl{1,2}-P{l2,l1,l1l2,tv})");
    }
    for (const auto& name : m.parameter_names()) {
        if (name == "lr") m.grids[name] = kDipLearningRates;
        else if (name == "keep_rows") m.grids[name] = {kTsvdRowCounts.begin(), kTsvdRowCounts.end()};
        else m.grids[name] = halving_grid();
    }
    return m;
}

namespace {

// ---------------------------------------------------------------- config parsing

std::vector<double> parse_values(const json& j, const std::string& path) {
    if (j.is_array()) {
        std::vector<double> v;
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number()) throw ConfigError("field '" + path + "[" + std::to_string(i) + "]' must be a number");
            v.push_back(j[i].get<double>());
        }
        if (v.empty()) throw ConfigError("field '" + path + "' must not be empty");
        return v;
    }
    if (!j.is_object()) throw ConfigError("field '" + path + "' must be an array or a grid reference");
    StrictObject o(j, path);
    const auto grid = o.required<std::string>("grid");
    std::vector<double> v;
    if (grid == "P") {
        v = halving_grid(o.optional<std::size_t>("first", 1), o.optional<std::size_t>("last", 40),
                         o.optional<std::size_t>("stride", 1));
    } else if (grid == "dip_lr") {
        v = kDipLearningRates;
    } else if (grid == "tsvd_rows") {
        v.assign(kTsvdRowCounts.begin(), kTsvdRowCounts.end());
    } else {
        throw ConfigError("field '" + o.field("grid") + "' must be one of P, dip_lr, tsvd_rows");
    }
    o.finish();
    return v;
}

MethodSpec parse_method(const json& j, const std::string& path, bool seeds_allowed = true) {
    StrictObject o(j, path);
    MethodSpec m = method_from_id(o.required<std::string>("id"));
    for (const auto& name : m.parameter_names())
        if (o.has(name)) m.grids[name] = parse_values(o.raw(name), o.field(name));
    for (double v : m.grids["keep_rows"])
        if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("field '" + o.field("keep_rows") + "' needs positive integers");
    if (m.family != MethodFamily::kaczmarz_tsvd_l1) m.grids.erase("keep_rows");
    m.iterations = o.optional<std::size_t>("iterations", m.iterations);
    if (m.iterations < 1) throw ConfigError("field '" + o.field("iterations") + "' must be >= 1");
    if (m.family == MethodFamily::var) {
        m.tv_epsilon = o.optional<double>("tv_epsilon", m.tv_epsilon);
        m.var_lr = o.optional<double>("lr", m.var_lr);
        if (!(m.var_lr > 0.0)) throw ConfigError("field '" + o.field("lr") + "' must be > 0");
    }
    if (m.family == MethodFamily::dip) {
        if (auto net = o.optional_child("network")) {
            m.network.encoder_channels = net->optional<std::vector<std::size_t>>("channels", m.network.encoder_channels);
            m.network.kernel = net->optional<int>("kernel", m.network.kernel);
            m.network.leaky_slope = net->optional<double>("leaky_slope", m.network.leaky_slope);
            net->finish();
        }
        m.network.validate();
    }
    if (m.seeded()) {
        if (seeds_allowed) m.seeds = o.optional<std::vector<std::uint64_t>>("seeds", m.seeds);
        else m.seeds = {o.optional<std::uint64_t>("seed", 0)};
        if (m.seeds.empty()) throw ConfigError("field '" + o.field("seeds") + "' must not be empty");
    }
    o.finish();
    return m;
}

SimulateConfig parse_simulate(const json& j) {
    StrictObject o(j, "simulate");
    SimulateConfig s;
    if (o.has("grid")) s.grid = grid_from_json(o.raw("grid"), o.field("grid"));
    if (!o.has("phantom")) throw ConfigError("missing required field 'simulate.phantom'");
    s.phantom = phantom_from_json(o.raw("phantom"), o.field("phantom"));
    if (!o.has("operator")) throw ConfigError("missing required field 'simulate.operator'");
    s.model = operator_from_json(o.raw("operator"), o.field("operator"));
    s.coils = o.required<int>("coils");
    if (s.coils < 1) throw ConfigError("field 'simulate.coils' must be >= 1");
    s.snr_db = o.required<double>("snr_db");
    if (!std::isfinite(s.snr_db)) throw ConfigError("field 'simulate.snr_db' must be finite");
    if (auto m = o.optional_child("measurement")) {
        s.measurement.background_scale = m->optional<double>("background_scale", s.measurement.background_scale);
        s.measurement.background_count = m->optional<std::size_t>("background_count", s.measurement.background_count);
        m->finish();
    }
    s.seed = o.optional<std::uint64_t>("seed", 0);
    o.finish();
    s.grid.validate();
    s.phantom.validate();
    s.model.validate();
    return s;
}

PreprocessSweep parse_preprocess(const json& j) {
    StrictObject o(j, "preprocess");
    PreprocessSweep p;
    p.snr_thresholds = o.optional<std::vector<double>>("snr_thresholds", p.snr_thresholds);
    if (p.snr_thresholds.empty()) throw ConfigError("field 'preprocess.snr_thresholds' must not be empty");
    p.whitening = o.optional<bool>("whitening", p.whitening);
    p.rank = o.optional<Eigen::Index>("rank", p.rank);
    p.rsvd_seed = o.optional<std::uint64_t>("rsvd_seed", p.rsvd_seed);
    if (o.has("bandpass")) {
        const json& b = o.raw("bandpass");
        if (!b.is_array()) throw ConfigError("field 'preprocess.bandpass' must be an array");
        for (std::size_t i = 0; i < b.size(); ++i) {
            StrictObject band(b[i], "preprocess.bandpass[" + std::to_string(i) + "]");
            p.bandpass.push_back({band.required<int>("min_frequency"), band.required<int>("max_frequency")});
            band.finish();
        }
    }
    o.finish();
    for (std::size_t i = 0; i < p.snr_thresholds.size(); ++i) p.at(i);
    return p;
}

MetricsConfig parse_metrics(const json& j) {
    StrictObject o(j, "metrics");
    MetricsConfig m;
    m.shift_extent = o.optional<double>("shift_extent_mm", m.shift_extent);
    m.shift_step = o.optional<double>("shift_step_mm", m.shift_step);
    m.data_range = o.optional<double>("data_range", m.data_range);
    o.finish();
    if (!(m.data_range > 0.0)) throw ConfigError("field 'metrics.data_range' must be > 0");
    m.shifts().validate();
    return m;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
    StrictObject o(j, "");
    ExperimentConfig cfg;
    if (o.has("simulate")) cfg.simulate = parse_simulate(o.raw("simulate"));
    if (o.has("preprocess")) cfg.preprocess = parse_preprocess(o.raw("preprocess"));
    if (o.has("metrics")) cfg.metrics = parse_metrics(o.raw("metrics"));
    if (o.has("sweep")) {
        StrictObject s(o.raw("sweep"), "sweep");
        const json& methods = s.raw("methods");
        if (!methods.is_array() || methods.empty()) throw ConfigError("field 'sweep.methods' must be a nonempty array");
        SweepConfig sweep;
        for (std::size_t i = 0; i < methods.size(); ++i)
            sweep.methods.push_back(parse_method(methods[i], "sweep.methods[" + std::to_string(i) + "]"));
        s.finish();
        cfg.sweep = std::move(sweep);
    }
    if (o.has("reconstruct")) {
        json r = o.raw("reconstruct");
        if (!r.is_object()) throw ConfigError("field 'reconstruct' must be an object");
        if (r.contains("tau_index")) {
            if (!r["tau_index"].is_number_unsigned()) throw ConfigError("field 'reconstruct.tau_index' must be a count");
            cfg.reconstruct_tau_index = r["tau_index"].get<std::size_t>();
            r.erase("tau_index");
        }
        cfg.reconstruct = parse_method(r, "reconstruct", false);
        if (cfg.reconstruct_tau_index >= cfg.preprocess.snr_thresholds.size())
            throw ConfigError("field 'reconstruct.tau_index' exceeds the preprocess.snr_thresholds list");
    }
    o.finish();
    return cfg;
}

ExperimentConfig load_experiment(const std::string& path) { return experiment_from_json(read_json_file(path)); }

// ---------------------------------------------------------------- runs

std::vector<RunSpec> expand_runs(const SweepConfig& sweep, const std::vector<ProcessedSystem>& systems) {
    std::vector<RunSpec> runs;
    for (std::size_t mi = 0; mi < sweep.methods.size(); ++mi) {
        const MethodSpec& m = sweep.methods[mi];
        const auto names = m.parameter_names();
        for (std::size_t ti = 0; ti < systems.size(); ++ti) {
            // Odometer over the parameter grids, last name fastest.
            std::vector<std::size_t> idx(names.size(), 0);
            for (bool done = false; !done;) {
                RunSpec base{mi, ti, {}, std::nullopt};
                bool keep = true;
                for (std::size_t k = 0; k < names.size(); ++k) {
                    const double v = m.grids.at(names[k])[idx[k]];
                    if (names[k] == "keep_rows" && v > double(systems[ti].rows())) keep = false;
                    base.params.emplace_back(names[k], v);
                }
                if (keep && m.seeded()) {
                    for (auto seed : m.seeds) {
                        RunSpec r = base;
                        r.seed = seed;
                        runs.push_back(std::move(r));
                    }
                } else if (keep) {
                    runs.push_back(std::move(base));
                }
                done = true;
                for (std::size_t k = names.size(); k-- > 0;) {
                    if (++idx[k] < m.grids.at(names[k]).size()) {
                        done = false;
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
    }
    return runs;
}

namespace {

double param(const RunSpec& run, const std::string& name) {
    for (const auto& [k, v] : run.params)
        if (k == name) return v;
    throw ConfigError("run is missing parameter '" + name + "'");
}

}  // namespace

SolverTrace execute_run(const MethodSpec& m, const RunSpec& run, const ProcessedSystem& sys) {
    SolverTrace trace;
    const auto kacz_schedule = CheckpointSchedule::standard(m.iterations);
    switch (m.family) {
        case MethodFamily::kaczmarz_l2:
            trace = kaczmarz_l2(sys, param(run, "rho"), m.iterations, kacz_schedule);
            break;
        case MethodFamily::kaczmarz_l1l2:
            trace = kaczmarz_l1l2(sys, param(run, "rho"), param(run, "lambda"), m.iterations, kacz_schedule);
            break;
        case MethodFamily::kaczmarz_l1:
            trace = kaczmarz_l1(sys, param(run, "lambda"), m.iterations, kacz_schedule);
            break;
        case MethodFamily::kaczmarz_tsvd_l1: {
            const auto keep = static_cast<Eigen::Index>(param(run, "keep_rows"));
            trace = kaczmarz_l1(select_rows_by_norm(sys, keep), param(run, "lambda"), m.iterations, kacz_schedule);
            break;
        }
        case MethodFamily::var: {
            VarParams vp;
            vp.fidelity_p = m.fidelity_p;
            vp.penalty.kind = m.penalty;
            vp.penalty.lambda = param(run, "lambda");
            if (m.penalty == PenaltyKind::l1_plus_l2) vp.penalty.rho = param(run, "rho");
            vp.penalty.tv_epsilon = m.tv_epsilon;
            vp.iterations = m.iterations;
            vp.lr = m.var_lr;
            trace = var_solve(sys, vp, CheckpointSchedule::standard(m.iterations), std::nullopt, run.seed.value_or(0));
            break;
        }
        case MethodFamily::dip: {
            DipConfig cfg;
            cfg.lr = param(run, "lr");
            cfg.iterations = m.iterations;
            cfg.fidelity_p = m.fidelity_p;
            cfg.schedule = CheckpointSchedule::standard(m.iterations);
            cfg.seed = run.seed.value_or(0);
            AutoencoderSpec net = m.network;
            net.seed = cfg.seed;
            trace = dip_reconstruct(sys, cfg, net);
            break;
        }
    }
    trace.method = m.id;
    return trace;
}

// ---------------------------------------------------------------- formatting

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string params_string(const RunSpec& run) {
    std::string s;
    for (const auto& [k, v] : run.params) {
        if (!s.empty()) s += ';';
        s += k + "=" + shortest(v);
    }
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_metric(const std::string& s, const std::string& what) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("results: bad " + what + " '" + s + "'");
    return v;
}

template <class T>
T parse_count(const std::string& s, const std::string& what) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("results: bad " + what + " '" + s + "'");
    return v;
}

const char* kResultsHeader = "method,tau,whitening,rank,params,seed,checkpoint,eps_psnr,eps_ssim";

}  // namespace

std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return shortest(v);
}

std::string results_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << kResultsHeader << '\n';
    for (const auto& r : rows) {
        out << r.method << ',' << shortest(r.tau) << ',' << (r.whitening ? "on" : "off") << ',' << r.rank << ','
            << r.params << ',' << (r.seed ? std::to_string(*r.seed) : "") << ',' << r.checkpoint << ','
            << format_metric(r.eps_psnr) << ',' << format_metric(r.eps_ssim) << '\n';
    }
    return out.str();
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kResultsHeader) throw DataError("results: missing or unexpected header");
    std::vector<ResultRow> rows;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 9) throw DataError("results: line " + std::to_string(n) + " has " + std::to_string(f.size()) + " fields");
        ResultRow r;
        r.method = f[0];
        r.tau = parse_metric(f[1], "tau");
        if (f[2] != "on" && f[2] != "off") throw DataError("results: bad whitening flag '" + f[2] + "'");
        r.whitening = f[2] == "on";
        r.rank = parse_count<Eigen::Index>(f[3], "rank");
        r.params = f[4];
        if (!f[5].empty()) r.seed = parse_count<std::uint64_t>(f[5], "seed");
        r.checkpoint = parse_count<std::size_t>(f[6], "checkpoint");
        r.eps_psnr = parse_metric(f[7], "eps_psnr");
        r.eps_ssim = parse_metric(f[8], "eps_ssim");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<SummaryEntry> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryEntry> out;
    std::vector<std::pair<std::string, double>> keys;
    for (const auto& r : rows) {
        std::size_t k = 0;
        while (k < keys.size() && !(keys[k].first == r.method && keys[k].second == r.tau)) ++k;
        if (k == keys.size()) {
            keys.emplace_back(r.method, r.tau);
            out.push_back({r, r});
            continue;
        }
        if (r.eps_psnr > out[k].best_psnr.eps_psnr) out[k].best_psnr = r;
        if (r.eps_ssim > out[k].best_ssim.eps_ssim) out[k].best_ssim = r;
    }
    return out;
}

namespace {

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return format_metric(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string run_label(const ResultRow& r) {
    std::string s = r.params.empty() ? "-" : r.params;
    if (r.seed) s += " seed=" + std::to_string(*r.seed);
    return s;
}

}  // namespace

std::string summary_markdown(const std::vector<SummaryEntry>& summary) {
    std::ostringstream out;
    out << "| method | tau | best eps_PSNR (dB) | parameters | iteration | best eps_SSIM | parameters | iteration |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& e : summary) {
        out << "| " << e.best_psnr.method << " | " << shortest(e.best_psnr.tau) << " | " << fixed(e.best_psnr.eps_psnr, 2)
            << " | " << run_label(e.best_psnr) << " | " << e.best_psnr.checkpoint << " | "
            << fixed(e.best_ssim.eps_ssim, 4) << " | " << run_label(e.best_ssim) << " | "
            << e.best_ssim.checkpoint << " |\n";
    }
    return out.str();
}

std::string summary_csv(const std::vector<SummaryEntry>& summary) {
    std::ostringstream out;
    out << "method,tau,best_eps_psnr,psnr_params,psnr_seed,psnr_checkpoint,best_eps_ssim,ssim_params,ssim_seed,"
           "ssim_checkpoint\n";
    for (const auto& e : summary) {
        const auto seed = [](const ResultRow& r) { return r.seed ? std::to_string(*r.seed) : std::string(); };
        out << e.best_psnr.method << ',' << shortest(e.best_psnr.tau) << ',' << format_metric(e.best_psnr.eps_psnr) << ','
            << e.best_psnr.params << ',' << seed(e.best_psnr) << ',' << e.best_psnr.checkpoint << ','
            << format_metric(e.best_ssim.eps_ssim) << ',' << e.best_ssim.params << ',' << seed(e.best_ssim) << ','
            << e.best_ssim.checkpoint << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------- sweep

namespace {

struct RunResult {
    std::vector<ResultRow> rows;
    std::optional<std::string> error;
    double seconds = 0.0;
    Volume best_psnr_volume, best_ssim_volume;
};

std::string volume_key(const std::string& method, std::size_t tau_index, const std::string& metric) {
    return method + "_tau" + std::to_string(tau_index) + "_" + metric;
}

void save_volume(const Volume& v, const fs::path& dir) {
    ContainerWriter w(dir, "volume");
    w.add("values", v.values);
    w.metadata() = {{"dims", {v.dims.nx, v.dims.ny, v.dims.nz}}, {"voxel_size_mm", v.voxel_size}};
    w.finish();
}

Volume load_volume(const fs::path& dir) {
    ContainerReader r(dir);
    if (r.kind() != "volume") throw DataError(dir.string() + ": not a volume container");
    try {
        const auto d = r.metadata().at("dims").get<std::array<std::size_t, 3>>();
        Volume v(Dims3{d[0], d[1], d[2]}, r.vector("values"), r.metadata().at("voxel_size_mm").get<std::array<double, 3>>());
        if (std::size_t(v.values.size()) != v.dims.size()) throw DataError(dir.string() + ": volume size mismatch");
        return v;
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": bad volume metadata: " + e.what());
    }
}

}  // namespace

SweepOutcome run_sweep(const ExperimentConfig& cfg, const std::vector<ProcessedSystem>& systems, std::size_t workers,
                       const std::optional<fs::path>& best_dir) {
    if (!cfg.sweep) throw ConfigError("missing required field 'sweep'");
    if (!cfg.simulate) throw ConfigError("missing required field 'simulate' (the phantom is needed for evaluation)");
    if (systems.empty()) throw ConfigError("sweep: no preprocessed systems");
    const auto runs = expand_runs(*cfg.sweep, systems);
    const ShiftGrid shifts = cfg.metrics.shifts();
    // Build the reference set once up front so workers only read it.
    const auto refs = ReferenceCache::global().get(cfg.simulate->phantom, systems.front().grid, shifts);

    std::vector<RunResult> results(runs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            const RunSpec& run = runs[i];
            const MethodSpec& m = cfg.sweep->methods[run.method_index];
            const ProcessedSystem& sys = systems[run.tau_index];
            RunResult& out = results[i];
            const auto start = std::chrono::steady_clock::now();
            try {
                const SolverTrace trace = execute_run(m, run, sys);
                double best_p = -std::numeric_limits<double>::infinity(), best_s = best_p;
                for (const auto& cp : trace.checkpoints) {
                    const QualityReport q = eps_metrics(cp.volume, *refs, cfg.metrics.data_range);
                    out.rows.push_back({m.id, sys.config.snr_threshold, sys.config.whitening, sys.config.rank,
                                        params_string(run), run.seed, cp.iteration, q.eps_psnr, q.eps_ssim});
                    if (q.eps_psnr > best_p) best_p = q.eps_psnr, out.best_psnr_volume = cp.volume;
                    if (q.eps_ssim > best_s) best_s = q.eps_ssim, out.best_ssim_volume = cp.volume;
                }
            } catch (const std::exception& e) {
                out.rows.clear();
                out.error = e.what();
            }
            out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, runs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    SweepOutcome outcome;
    outcome.runs = runs.size();
    // (method, tau) -> run index and row holding the best metric, ties to the earlier run.
    struct Best {
        double value;
        std::size_t run;
    };
    std::map<std::pair<std::size_t, std::size_t>, std::pair<Best, Best>> best;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        RunResult& r = results[i];
        outcome.run_seconds.push_back(r.seconds);
        if (r.error) {
            outcome.failures.push_back({i, cfg.sweep->methods[runs[i].method_index].id, params_string(runs[i]), *r.error});
            continue;
        }
        const auto key = std::make_pair(runs[i].method_index, runs[i].tau_index);
        double rp = -std::numeric_limits<double>::infinity(), rs = rp;
        for (const auto& row : r.rows) rp = std::max(rp, row.eps_psnr), rs = std::max(rs, row.eps_ssim);
        auto [it, fresh] = best.try_emplace(key, Best{rp, i}, Best{rs, i});
        if (!fresh) {
            if (rp > it->second.first.value) it->second.first = {rp, i};
            if (rs > it->second.second.value) it->second.second = {rs, i};
        }
        outcome.rows.insert(outcome.rows.end(), r.rows.begin(), r.rows.end());
    }
    if (best_dir) {
        fs::remove_all(*best_dir);
        for (const auto& [key, b] : best) {
            const std::string& id = cfg.sweep->methods[key.first].id;
            save_volume(results[b.first.run].best_psnr_volume, *best_dir / volume_key(id, key.second, "psnr"));
            save_volume(results[b.second.run].best_ssim_volume, *best_dir / volume_key(id, key.second, "ssim"));
        }
    }
    return outcome;
}

// ---------------------------------------------------------------- slices

std::vector<double> central_slice(const Volume& v, SlicePlane plane, std::size_t& width, std::size_t& height) {
    const Dims3 d = v.dims;
    std::vector<double> out;
    switch (plane) {
        case SlicePlane::xy:
            width = d.nx, height = d.ny;
            for (std::size_t j = 0; j < d.ny; ++j)
                for (std::size_t i = 0; i < d.nx; ++i) out.push_back(v.at(i, j, d.nz / 2));
            break;
        case SlicePlane::xz:
            width = d.nx, height = d.nz;
            for (std::size_t k = 0; k < d.nz; ++k)
                for (std::size_t i = 0; i < d.nx; ++i) out.push_back(v.at(i, d.ny / 2, k));
            break;
        case SlicePlane::yz:
            width = d.ny, height = d.nz;
            for (std::size_t k = 0; k < d.nz; ++k)
                for (std::size_t j = 0; j < d.ny; ++j) out.push_back(v.at(d.nx / 2, j, k));
            break;
    }
    return out;
}

std::string pgm_bytes(const std::vector<double>& values, std::size_t width, std::size_t height, double data_range) {
    if (values.size() != width * height) throw DimensionError("pgm: value count does not match width x height");
    if (!(data_range > 0.0)) throw ConfigError("pgm: data range must be > 0");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (double v : values) {
        const double t = std::isfinite(v) ? std::clamp(v / data_range, 0.0, 1.0) : 0.0;
        out += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
    }
    return out;
}

// ---------------------------------------------------------------- CLI

namespace {

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

const SimulateConfig& need_simulate(const ExperimentConfig& cfg) {
    if (!cfg.simulate) throw ConfigError("missing required field 'simulate'");
    return *cfg.simulate;
}

fs::path dataset_dir(const fs::path& out) { return out / "dataset"; }
fs::path system_dir(const fs::path& out, std::size_t tau_index) {
    return out / "systems" / ("tau" + std::to_string(tau_index));
}

RawDataset load_dataset_checked(const fs::path& out) {
    const fs::path dir = dataset_dir(out);
    if (!fs::exists(dir / "manifest.json"))
        throw DataError("no dataset at " + dir.string() + " (run `simulate` with the same --out first)");
    return load_dataset(dir.string());
}

std::vector<ProcessedSystem> preprocess_all(const ExperimentConfig& cfg, const fs::path& out, bool verbose) {
    const RawDataset ds = load_dataset_checked(out);
    if (!ds.has_measurement()) throw DataError("dataset has no measurement");
    std::vector<ProcessedSystem> systems;
    for (std::size_t i = 0; i < cfg.preprocess.snr_thresholds.size(); ++i) {
        systems.push_back(build_system(ds, cfg.preprocess.at(i)));
        save_system(systems.back(), system_dir(out, i).string());
        if (verbose) {
            std::cout << "tau=" << shortest(cfg.preprocess.snr_thresholds[i]) << " rows=" << systems.back().rows()
                      << (systems.back().rank_clamped ? " (rank clamped)" : "") << " -> " << system_dir(out, i).string()
                      << "\n";
        }
    }
    return systems;
}

ProcessedSystem system_for(const ExperimentConfig& cfg, const fs::path& out, std::size_t tau_index) {
    const fs::path dir = system_dir(out, tau_index);
    if (fs::exists(dir / "manifest.json")) return load_system(dir.string());
    return preprocess_all(cfg, out, false).at(tau_index);
}

int cmd_simulate(const ExperimentConfig& cfg, const fs::path& out, std::optional<std::uint64_t> seed) {
    SimulateConfig s = need_simulate(cfg);
    if (seed) s.seed = *seed;
    const RasterResult truth = rasterize_phantom(s.phantom, s.grid);
    if (truth.phantom_outside_grid) std::cerr << "warning: phantom lies outside the grid\n";
    RawDataset ds = synth_operator(s.model, s.grid, s.coils, s.seed);
    const double sigma = noise_sigma_for_snr(ds, truth.volume, s.snr_db);
    ds = synth_measurement(ds, truth.volume, Vector::Constant(ds.rows(), sigma), s.measurement, s.seed + 100);
    fs::remove_all(dataset_dir(out));
    save_dataset(ds, dataset_dir(out).string());
    std::cout << "dataset " << dataset_dir(out).string() << " rows=" << ds.rows() << " voxels=" << s.grid.dims.size()
              << "\nmanifest sha256 " << sha256_file(dataset_dir(out) / "manifest.json") << "\n";
    return kExitOk;
}

int cmd_preprocess(const ExperimentConfig& cfg, const fs::path& out) {
    preprocess_all(cfg, out, true);
    return kExitOk;
}

int cmd_reconstruct(const ExperimentConfig& cfg, const fs::path& out, std::optional<std::uint64_t> seed) {
    if (!cfg.reconstruct) throw ConfigError("missing required field 'reconstruct'");
    MethodSpec m = *cfg.reconstruct;
    if (seed && m.seeded()) m.seeds = {*seed};
    const ProcessedSystem sys = system_for(cfg, out, cfg.reconstruct_tau_index);
    SweepConfig single{{m}};
    auto runs = expand_runs(single, {sys});
    // expand_runs enumerates every tau of the list it is given; here that is only the chosen one.
    for (auto& r : runs) r.tau_index = cfg.reconstruct_tau_index;
    if (runs.size() != 1)
        throw ConfigError("field 'reconstruct' must select exactly one run (got " + std::to_string(runs.size()) + ")");
    SolverTrace trace;
    try {
        trace = execute_run(m, runs.front(), sys);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return kExitRunFailures;
    }
    const fs::path dir = out / "reconstruct";
    fs::remove_all(dir);
    save_trace(trace, dir.string());
    std::cout << m.id << " " << params_string(runs.front()) << ": " << trace.checkpoints.size() << " checkpoints -> "
              << dir.string() << "\n";
    return trace.diverged ? kExitRunFailures : kExitOk;
}

int cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
    const SimulateConfig& s = need_simulate(cfg);
    const fs::path dir = out / "reconstruct";
    if (!fs::exists(dir / "manifest.json")) throw DataError("no reconstruction at " + dir.string());
    const SolverTrace trace = load_trace(dir.string());
    if (trace.checkpoints.empty()) throw DataError("reconstruction has no checkpoints");
    const auto refs = ReferenceCache::global().get(s.phantom, s.grid, cfg.metrics.shifts());
    std::ostringstream csv;
    csv << "checkpoint,eps_psnr,eps_ssim,psnr,ssim,argmax_psnr_mm,argmax_ssim_mm\n";
    QualityReport best;
    std::size_t best_at = 0;
    bool first = true;
    for (const auto& cp : trace.checkpoints) {
        if (cp.volume.dims != s.grid.dims) throw DataError("reconstruction grid does not match simulate.grid");
        const QualityReport q = eps_metrics(cp.volume, *refs, cfg.metrics.data_range);
        const auto vec = [](const Vec3& v) { return shortest(v[0]) + " " + shortest(v[1]) + " " + shortest(v[2]); };
        csv << cp.iteration << ',' << format_metric(q.eps_psnr) << ',' << format_metric(q.eps_ssim) << ','
            << format_metric(q.psnr_unshifted) << ',' << format_metric(q.ssim_unshifted) << ',' << vec(q.argmax_psnr)
            << ',' << vec(q.argmax_ssim) << '\n';
        if (first || q.eps_psnr > best.eps_psnr) best = q, best_at = cp.iteration, first = false;
    }
    write_file(dir / "evaluation.csv", csv.str());
    json summary = best.to_json();
    summary["iteration"] = best_at;
    summary["method"] = trace.method;
    write_file(dir / "evaluation.json", summary.dump(2) + "\n");
    std::cout << trace.method << ": best eps_PSNR " << format_metric(best.eps_psnr) << " dB at iteration " << best_at
              << ", final " << format_metric(eps_metrics(trace.final_checkpoint().volume, *refs, cfg.metrics.data_range).eps_psnr)
              << " dB\n";
    return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg0, const fs::path& out, std::size_t workers, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg = cfg0;
    if (!cfg.sweep) throw ConfigError("missing required field 'sweep'");
    need_simulate(cfg);
    if (seed)
        for (auto& m : cfg.sweep->methods)
            if (m.seeded()) m.seeds = {*seed};
    const auto systems = preprocess_all(cfg, out, false);
    const SweepOutcome outcome = run_sweep(cfg, systems, workers, out / "best");

    write_file(out / "results.csv", results_csv(outcome.rows));
    const auto summary = summarize(outcome.rows);
    write_file(out / "summary.md", summary_markdown(summary));
    write_file(out / "summary.csv", summary_csv(summary));
    std::ostringstream failures, timings;
    failures << "run,method,params,message\n";
    for (const auto& f : outcome.failures) {
        std::string msg = f.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        failures << f.run_index << ',' << f.method << ',' << f.params << ',' << msg << '\n';
    }
    write_file(out / "failures.csv", failures.str());
    timings << "run,seconds\n";
    for (std::size_t i = 0; i < outcome.run_seconds.size(); ++i) timings << i << ',' << outcome.run_seconds[i] << '\n';
    write_file(out / "timings.csv", timings.str());
    json meta = {{"data_range", cfg.metrics.data_range},
                 {"snr_thresholds", cfg.preprocess.snr_thresholds},
                 {"shift_extent_mm", cfg.metrics.shift_extent},
                 {"shift_step_mm", cfg.metrics.shift_step},
                 {"runs", outcome.runs},
                 {"failures", outcome.failures.size()},
                 {"rows", outcome.rows.size()}};
    write_file(out / "sweep.json", meta.dump(2) + "\n");
    std::cout << outcome.runs << " runs, " << outcome.rows.size() << " rows, " << outcome.failures.size()
              << " failures -> " << (out / "results.csv").string() << "\n";
    for (const auto& f : outcome.failures) std::cerr << "run " << f.run_index << " (" << f.method << " " << f.params << ") failed: " << f.message << "\n";
    return outcome.failures.empty() ? kExitOk : kExitRunFailures;
}

int cmd_report(const fs::path& out) {
    const auto rows = parse_results_csv(read_file(out / "results.csv"));
    if (rows.empty()) throw DataError("results are empty; nothing to report");
    json meta;
    try {
        meta = json::parse(read_file(out / "sweep.json"));
    } catch (const json::exception& e) {
        throw DataError("sweep.json: " + std::string(e.what()));
    }
    const double data_range = meta.value("data_range", kDefaultDataRange);
    const auto taus = meta.value("snr_thresholds", std::vector<double>{});
    const auto tau_index = [&](double tau) {
        for (std::size_t i = 0; i < taus.size(); ++i)
            if (taus[i] == tau) return i;
        throw DataError("results mention tau " + shortest(tau) + " absent from sweep.json");
    };

    const auto summary = summarize(rows);
    const fs::path dir = out / "report";
    fs::remove_all(dir);
    std::ostringstream md;
    md << "# Reconstruction benchmark report\n\n";
    md << "Shift-maximized PSNR and SSIM over a +/-" << shortest(meta.value("shift_extent_mm", 3.0)) << " mm grid (step "
       << shortest(meta.value("shift_step_mm", 0.5)) << " mm), data range " << shortest(data_range) << ".\n\n";
    md << "## Best per method and SNR threshold\n\n" << summary_markdown(summary) << "\n";
    md << "## Central slices of the best reconstructions\n\n";
    md << "Gray level = 255 * clamp(value / " << shortest(data_range) << ", 0, 1).\n\n";
    md << "| method | tau | metric | xy | xz | yz |\n|---|---|---|---|---|---|\n";
    for (const auto& e : summary) {
        const std::size_t ti = tau_index(e.best_psnr.tau);
        for (const char* metric : {"psnr", "ssim"}) {
            const std::string key = volume_key(e.best_psnr.method, ti, metric);
            const fs::path src = out / "best" / key;
            if (!fs::exists(src / "manifest.json")) throw DataError("missing best volume " + src.string());
            const Volume v = load_volume(src);
            md << "| " << e.best_psnr.method << " | " << shortest(e.best_psnr.tau) << " | " << metric;
            for (auto [plane, name] : {std::pair{SlicePlane::xy, "xy"}, {SlicePlane::xz, "xz"}, {SlicePlane::yz, "yz"}}) {
                std::size_t w = 0, h = 0;
                const auto slice = central_slice(v, plane, w, h);
                const std::string file = "slices/" + key + "_" + name + ".pgm";
                write_file(dir / file, pgm_bytes(slice, w, h, data_range));
                md << " | [" << w << "x" << h << "](" << file << ")";
            }
            md << " |\n";
        }
    }
    write_file(dir / "report.md", md.str());
    std::cout << "report " << (dir / "report.md").string() << " (" << summary.size() << " method/tau rows)\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Reconstruction benchmark for synthetic magnetic particle imaging data"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::size_t workers = 1;
    std::optional<std::uint64_t> seed;

    auto add = [&](const std::string& name, const std::string& help, bool needs_config) {
        CLI::App* sub = app.add_subcommand(name, help);
        auto* c = sub->add_option("--config", config_path, "experiment JSON");
        if (needs_config) c->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--workers", workers, "parallel solver runs")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "override the dataset seed (simulate) or solver seeds (reconstruct, sweep)");
        return sub;
    };
    auto* simulate = add("simulate", "synthesize a dataset into OUT/dataset", true);
    auto* preprocess = add("preprocess", "build one processed system per SNR threshold into OUT/systems", true);
    auto* reconstruct = add("reconstruct", "run the single configured method into OUT/reconstruct", true);
    auto* evaluate = add("evaluate", "score OUT/reconstruct with the shift-maximized metrics", true);
    auto* sweep = add("sweep", "run every configured method over its grids; write results and summaries", true);
    auto* report = add("report", "render the Markdown report and slice images from OUT", false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const fs::path out(out_dir);
        fs::create_directories(out);
        if (report->parsed()) return cmd_report(out);
        ExperimentConfig cfg;
        try {
            cfg = load_experiment(config_path);
        } catch (const DataError& e) {
            throw ConfigError(e.what());  // an unreadable config is a usage problem, not a data problem
        }
        if (simulate->parsed()) return cmd_simulate(cfg, out, seed);
        if (preprocess->parsed()) return cmd_preprocess(cfg, out);
        if (reconstruct->parsed()) return cmd_reconstruct(cfg, out, seed);
        if (evaluate->parsed()) return cmd_evaluate(cfg, out);
        if (sweep->parsed()) return cmd_sweep(cfg, out, workers, seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "run failure: " << e.what() << "\n";
        return kExitRunFailures;
    }
    return kExitConfig;
}

}  // namespace mpibench
