#include "mpibench/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mpibench/container.hpp"
#include "mpibench/json_io.hpp"
#include "mpibench/optim.hpp"

namespace mpibench {

using nlohmann::json;

CheckpointSchedule CheckpointSchedule::standard(std::size_t cap) {
    struct Range {
        std::size_t first, last, step;
    };
    static constexpr Range ranges[] = {{1, 10, 1},     {12, 30, 2},     {35, 50, 5},       {60, 150, 10},
                                       {175, 500, 25}, {600, 2000, 100}, {2500, 5000, 500}, {6000, 20000, 1000}};
    CheckpointSchedule s;
    for (const auto& r : ranges)
        for (std::size_t i = r.first; i <= r.last && i <= cap; i += r.step) s.indices.push_back(i);
    return s;
}

CheckpointSchedule CheckpointSchedule::every(std::size_t step, std::size_t last) {
    if (step == 0) throw ConfigError("checkpoint step must be positive");
    CheckpointSchedule s;
    for (std::size_t i = step; i <= last; i += step) s.indices.push_back(i);
    if (s.indices.empty() || s.indices.back() != last) s.indices.push_back(last);
    return s;
}

CheckpointSchedule CheckpointSchedule::truncated(std::size_t cap) const {
    CheckpointSchedule s;
    for (auto i : indices)
        if (i <= cap) s.indices.push_back(i);
    return s;
}

bool CheckpointSchedule::contains(std::size_t s) const { return std::binary_search(indices.begin(), indices.end(), s); }

void CheckpointSchedule::validate() const {
    if (indices.empty()) throw ConfigError("checkpoint schedule is empty");
    if (indices.front() == 0) throw ConfigError("checkpoint indices must be positive");
    for (std::size_t i = 1; i < indices.size(); ++i)
        if (indices[i] <= indices[i - 1]) throw ConfigError("checkpoint indices must be strictly increasing");
}

std::string to_string(PenaltyKind k) {
    switch (k) {
        case PenaltyKind::l2: return "l2";
        case PenaltyKind::l1: return "l1";
        case PenaltyKind::l1_plus_l2: return "l1_plus_l2";
        case PenaltyKind::tv: return "tv";
    }
    return "?";
}

PenaltyKind penalty_kind_from_string(const std::string& s) {
    if (s == "l2") return PenaltyKind::l2;
    if (s == "l1") return PenaltyKind::l1;
    if (s == "l1_plus_l2") return PenaltyKind::l1_plus_l2;
    if (s == "tv") return PenaltyKind::tv;
    throw ConfigError("unknown penalty '" + s + "'");
}

void PenaltyConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("penalty: lambda must be >= 0");
    if (!(rho >= 0.0)) throw ConfigError("penalty: rho must be >= 0");
    if (!(tv_epsilon > 0.0)) throw ConfigError("penalty: tv_epsilon must be > 0");
}

namespace {

using Clock = std::chrono::steady_clock;

Vector initial_point(const ProcessedSystem& sys, const std::optional<Volume>& x0) {
    if (!x0) return Vector::Zero(sys.A.cols());
    if (x0->values.size() != sys.A.cols()) {
        throw DimensionError("initial volume has " + std::to_string(x0->values.size()) + " voxels, system has " +
                             std::to_string(sys.A.cols()) + " columns");
    }
    return x0->values;
}

Volume as_volume(const ProcessedSystem& sys, const Vector& c, bool nonneg) {
    const Vec3 vs = sys.grid.voxel_size();
    Volume v(sys.grid.dims, c, {vs[0], vs[1], vs[2]});
    if (nonneg) v.mark_nonnegative();
    return v;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double data_fidelity(const ProcessedSystem& sys, const Vector& c, int p) {
    const Vector r = sys.A * c - sys.y;
    return p == 1 ? r.lpNorm<1>() : 0.5 * r.squaredNorm();
}

SolverTrace kaczmarz(const ProcessedSystem& sys, const KaczmarzParams& params, const CheckpointSchedule& schedule,
                     const std::optional<Volume>& x0) {
    if (!(params.rho >= 0.0) || !(params.lambda >= 0.0)) throw ConfigError("kaczmarz: rho and lambda must be >= 0");
    if (params.sweeps < 1) throw ConfigError("kaczmarz: sweeps must be >= 1");
    schedule.validate();

    const Matrix& A = sys.A;
    const Vector& y = sys.y;
    const Eigen::Index K = A.rows();
    Vector c = initial_point(sys, x0);
    Vector u = Vector::Zero(K);
    const double sqrt_rho = std::sqrt(params.rho);
    const Vector row_norm2 = A.rowwise().squaredNorm();
    const double mean_norm2 = K > 0 ? row_norm2.mean() : 0.0;
    const double denom_mean = mean_norm2 + params.rho;
    const double lambda_step = params.lambda > 0.0 && denom_mean > 0.0 ? params.lambda / denom_mean : 0.0;

    SolverTrace trace;
    trace.config = {{"rho", params.rho},
                    {"lambda", params.lambda},
                    {"lambda_step", lambda_step},
                    {"sweeps", params.sweeps},
                    {"nonnegative", params.nonnegative},
                    {"shrinkage_scaling", "lambda/(mean_row_norm2+rho)"}};

    double prev_norm = c.norm();
    const auto start = Clock::now();
    auto next = schedule.indices.begin();
    for (std::size_t s = 1; s <= params.sweeps && next != schedule.indices.end(); ++s) {
        for (Eigen::Index i = 0; i < K; ++i) {
            const double denom = row_norm2[i] + params.rho;
            if (denom == 0.0) {
                ++trace.skipped_rows;
                continue;
            }
            const double beta = (y[i] - A.row(i).dot(c) - sqrt_rho * u[i]) / denom;
            c.noalias() += beta * A.row(i).transpose();
            u[i] += beta * sqrt_rho;
        }
        if (lambda_step > 0.0) c = soft_shrink(c, lambda_step);
        if (params.nonnegative) c = project_nonneg(c);

        if (params.track_residual) trace.residual_history.push_back((A * c - y + sqrt_rho * u).norm());

        const double norm = c.norm();
        if (!std::isfinite(norm)) throw NumericalError("kaczmarz: non-finite iterate at sweep " + std::to_string(s), s);
        if (prev_norm > 0.0 && norm > 10.0 * prev_norm) {
            if (!trace.diverged) trace.events.push_back("divergence: norm grew " + std::to_string(norm / prev_norm) +
                                                        "x at sweep " + std::to_string(s));
            trace.diverged = true;
        }
        prev_norm = norm;

        if (s == *next) {
            Checkpoint cp;
            cp.iteration = s;
            cp.volume = as_volume(sys, c, params.nonnegative);
            cp.fidelity = data_fidelity(sys, c, 2);
            cp.objective = cp.fidelity + 0.5 * params.rho * c.squaredNorm() + params.lambda * c.lpNorm<1>();
            cp.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
            trace.checkpoints.push_back(std::move(cp));
            ++next;
        }
    }
    if (trace.skipped_rows > 0) trace.events.push_back("skipped zero rows: " + std::to_string(trace.skipped_rows));
    return trace;
}

SolverTrace kaczmarz_l2(const ProcessedSystem& sys, double rho, std::size_t sweeps, const CheckpointSchedule& schedule,
                        const std::optional<Volume>& x0) {
    auto t = kaczmarz(sys, {rho, 0.0, sweeps, true}, schedule, x0);
    t.method = "KACZ-l2";
    return t;
}

SolverTrace kaczmarz_l1l2(const ProcessedSystem& sys, double rho, double lambda, std::size_t sweeps,
                          const CheckpointSchedule& schedule, const std::optional<Volume>& x0) {
    auto t = kaczmarz(sys, {rho, lambda, sweeps, true}, schedule, x0);
    t.method = "KACZ-l1l2";
    return t;
}

SolverTrace kaczmarz_l1(const ProcessedSystem& sys, double lambda, std::size_t sweeps,
                        const CheckpointSchedule& schedule, const std::optional<Volume>& x0) {
    auto t = kaczmarz(sys, {0.0, lambda, sweeps, true}, schedule, x0);
    t.method = "KACZ-l1";
    return t;
}

ProcessedSystem select_rows_by_norm(const ProcessedSystem& sys, Eigen::Index keep) {
    const Eigen::Index K = sys.A.rows();
    if (keep < 1 || keep > K) {
        throw ConfigError("select_rows_by_norm: keep=" + std::to_string(keep) + " outside [1, " + std::to_string(K) + "]");
    }
    const Vector norms = sys.A.rowwise().norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return norms[a] > norms[b]; });
    order.resize(static_cast<std::size_t>(keep));
    std::sort(order.begin(), order.end());

    ProcessedSystem out = sys;
    out.A.resize(keep, sys.A.cols());
    out.y.resize(keep);
    out.retained_rows.clear();
    for (Eigen::Index r = 0; r < keep; ++r) {
        const Eigen::Index i = order[static_cast<std::size_t>(r)];
        out.A.row(r) = sys.A.row(i);
        out.y[r] = sys.y[i];
        if (static_cast<std::size_t>(i) < sys.retained_rows.size()) out.retained_rows.push_back(sys.retained_rows[std::size_t(i)]);
    }
    return out;
}

TvResult tv_penalty(const Volume& c, double eps) {
    if (!(eps > 0.0)) throw ConfigError("tv_penalty: epsilon must be > 0");
    const auto& d = c.dims;
    TvResult out{0.0, Volume(d, c.voxel_size)};
    auto& g = out.gradient;
    auto term = [&](std::size_t from, std::size_t to) {
        const double diff = c.values[Eigen::Index(to)] - c.values[Eigen::Index(from)];
        const double root = std::sqrt(diff * diff + eps * eps);
        out.value += root - eps;
        const double slope = diff / root;
        g.values[Eigen::Index(to)] += slope;
        g.values[Eigen::Index(from)] -= slope;
    };
    // Replicate boundary: differences across the last face vanish and contribute nothing.
    for (std::size_t k = 0; k < d.nz; ++k)
        for (std::size_t j = 0; j < d.ny; ++j)
            for (std::size_t i = 0; i < d.nx; ++i) {
                const std::size_t idx = c.index(i, j, k);
                if (i + 1 < d.nx) term(idx, c.index(i + 1, j, k));
                if (j + 1 < d.ny) term(idx, c.index(i, j + 1, k));
                if (k + 1 < d.nz) term(idx, c.index(i, j, k + 1));
            }
    return out;
}

SolverTrace var_solve(const ProcessedSystem& sys, const VarParams& params, const CheckpointSchedule& schedule,
                      const std::optional<Volume>& x0, std::uint64_t seed) {
    if (params.fidelity_p != 1 && params.fidelity_p != 2) throw ConfigError("var_solve: fidelity p must be 1 or 2");
    if (!(params.lr > 0.0)) throw ConfigError("var_solve: learning rate must be > 0");
    if (params.iterations < 1) throw ConfigError("var_solve: iterations must be >= 1");
    params.penalty.validate();
    schedule.validate();

    const auto& pen = params.penalty;
    const Matrix& A = sys.A;
    Vector c = project_nonneg(initial_point(sys, x0));
    const Vec3 vs = sys.grid.voxel_size();
    Adam opt(static_cast<std::size_t>(c.size()), {params.lr, params.beta1, params.beta2, 1e-8, true});

    auto penalty_value_grad = [&](const Vector& x, Vector* grad) {
        double value = 0.0;
        switch (pen.kind) {
            case PenaltyKind::l2:
                value = 0.5 * pen.lambda * x.squaredNorm();
                if (grad) *grad = pen.lambda * x;
                break;
            case PenaltyKind::l1:
                value = pen.lambda * x.lpNorm<1>();
                if (grad) *grad = pen.lambda * x.unaryExpr([](double v) { return sign(v); });
                break;
            case PenaltyKind::l1_plus_l2:
                value = pen.lambda * x.lpNorm<1>() + 0.5 * pen.rho * x.squaredNorm();
                if (grad) *grad = pen.lambda * x.unaryExpr([](double v) { return sign(v); }) + pen.rho * x;
                break;
            case PenaltyKind::tv: {
                const Volume vol(sys.grid.dims, x, {vs[0], vs[1], vs[2]});
                TvResult tv = tv_penalty(vol, pen.tv_epsilon);
                value = pen.lambda * tv.value;
                if (grad) *grad = pen.lambda * tv.gradient.values;
                break;
            }
        }
        return value;
    };
    auto fidelity_of = [&](const Vector& r) {
        return params.fidelity_p == 1 ? r.lpNorm<1>() : 0.5 * r.squaredNorm();
    };

    SolverTrace trace;
    trace.method = "VAR-Dl" + std::to_string(params.fidelity_p) + "-P" + to_string(pen.kind);
    trace.config = {{"fidelity_p", params.fidelity_p},
                    {"penalty", to_string(pen.kind)},
                    {"lambda", pen.lambda},
                    {"rho", pen.rho},
                    {"tv_epsilon", pen.tv_epsilon},
                    {"iterations", params.iterations},
                    {"lr", params.lr},
                    {"betas", {params.beta1, params.beta2}},
                    {"optimizer", "amsgrad"},
                    {"fidelity_scale", "1/p"},
                    {"seed", seed}};

    const auto start = Clock::now();
    auto next = schedule.indices.begin();
    Vector grad_pen(c.size());
    for (std::size_t t = 1; t <= params.iterations && next != schedule.indices.end(); ++t) {
        const Vector r = A * c - sys.y;
        const double objective = fidelity_of(r) + penalty_value_grad(c, &grad_pen);
        if (!std::isfinite(objective)) {
            throw NumericalError("var_solve: objective is not finite at iteration " + std::to_string(t), t);
        }
        Vector grad = params.fidelity_p == 2 ? Vector(A.transpose() * r)
                                             : Vector(A.transpose() * r.unaryExpr([](double v) { return sign(v); }));
        grad += grad_pen;
        opt.step({c.data(), std::size_t(c.size())}, {grad.data(), std::size_t(grad.size())});
        c = project_nonneg(c);

        if (t == *next) {
            const Vector rc = A * c - sys.y;
            Checkpoint cp;
            cp.iteration = t;
            cp.volume = as_volume(sys, c, true);
            cp.fidelity = fidelity_of(rc);
            cp.objective = cp.fidelity + penalty_value_grad(c, nullptr);
            if (!std::isfinite(cp.objective)) {
                throw NumericalError("var_solve: objective is not finite at iteration " + std::to_string(t), t);
            }
            cp.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
            trace.checkpoints.push_back(std::move(cp));
            ++next;
        }
    }
    return trace;
}

void save_trace(const SolverTrace& trace, const std::string& dir) {
    ContainerWriter w(dir, "solver_trace");
    const std::size_t n = trace.checkpoints.size();
    const std::size_t voxels = n ? trace.checkpoints.front().volume.size() : 0;
    std::vector<double> volumes, iterations, fidelity, objective, wall;
    volumes.reserve(n * voxels);
    for (const auto& cp : trace.checkpoints) {
        volumes.insert(volumes.end(), cp.volume.values.data(), cp.volume.values.data() + cp.volume.values.size());
        iterations.push_back(double(cp.iteration));
        fidelity.push_back(cp.fidelity);
        objective.push_back(cp.objective);
        wall.push_back(cp.wall_seconds);
    }
    w.add("volumes", volumes, {n, voxels});
    w.add("iterations", iterations, {n});
    w.add("fidelity", fidelity, {n});
    w.add("objective", objective, {n});
    w.add("wall_seconds", wall, {n});
    auto& meta = w.metadata();
    meta["method"] = trace.method;
    meta["config"] = trace.config;
    meta["skipped_rows"] = trace.skipped_rows;
    meta["diverged"] = trace.diverged;
    meta["events"] = trace.events;
    if (n) {
        const auto& v = trace.checkpoints.front().volume;
        meta["dims"] = {v.dims.nx, v.dims.ny, v.dims.nz};
        meta["voxel_size"] = v.voxel_size;
        meta["nonnegative"] = v.nonnegative;
    }
    w.finish();
    std::ofstream csv(std::filesystem::path(dir) / "summary.csv");
    csv << trace_summary_csv(trace);
}

SolverTrace load_trace(const std::string& dir) {
    ContainerReader r(dir);
    if (r.kind() != "solver_trace") throw DataError(dir + ": container holds '" + r.kind() + "', not a solver trace");
    SolverTrace t;
    const Matrix volumes = r.matrix("volumes");
    const Vector it = r.vector("iterations"), fid = r.vector("fidelity"), obj = r.vector("objective"),
                 wall = r.vector("wall_seconds");
    try {
        const json& meta = r.metadata();
        t.method = meta.at("method").get<std::string>();
        t.config = meta.at("config");
        t.skipped_rows = meta.at("skipped_rows").get<std::size_t>();
        t.diverged = meta.at("diverged").get<bool>();
        t.events = meta.at("events").get<std::vector<std::string>>();
        if (volumes.rows() > 0) {
            const auto dims = meta.at("dims").get<std::array<std::size_t, 3>>();
            const auto vs = meta.at("voxel_size").get<std::array<double, 3>>();
            const bool nonneg = meta.at("nonnegative").get<bool>();
            for (Eigen::Index k = 0; k < volumes.rows(); ++k) {
                Checkpoint cp;
                cp.iteration = static_cast<std::size_t>(it[k]);
                cp.volume = Volume({dims[0], dims[1], dims[2]}, volumes.row(k).transpose(), vs);
                cp.volume.nonnegative = nonneg;
                cp.fidelity = fid[k];
                cp.objective = obj[k];
                cp.wall_seconds = wall[k];
                t.checkpoints.push_back(std::move(cp));
            }
        }
    } catch (const json::exception& e) {
        throw DataError(dir + ": bad trace metadata: " + e.what());
    }
    return t;
}

std::string trace_summary_csv(const SolverTrace& trace) {
    std::ostringstream os;
    os.precision(17);
    os << "iteration,fidelity,objective\n";
    for (const auto& cp : trace.checkpoints) os << cp.iteration << ',' << cp.fidelity << ',' << cp.objective << '\n';
    return os.str();
}

}  // namespace mpibench
