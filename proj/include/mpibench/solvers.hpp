#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpibench/linalg.hpp"
#include "mpibench/preprocess.hpp"

namespace mpibench {

/// Ordered iteration indices at which reconstructions are extracted.
struct CheckpointSchedule {
    std::vector<std::size_t> indices;

    /// 1..10, 12..30 step 2, 35..50 step 5, 60..150 step 10, 175..500 step 25,
    /// 600..2000 step 100, 2500..5000 step 500, 6000..20000 step 1000; cut at `cap`.
    static CheckpointSchedule standard(std::size_t cap = 20000);
    static CheckpointSchedule every(std::size_t step, std::size_t last);
    static CheckpointSchedule single(std::size_t at) { return {{at}}; }

    CheckpointSchedule truncated(std::size_t cap) const;
    bool contains(std::size_t s) const;
    void validate() const;
};

struct Checkpoint {
    std::size_t iteration = 0;
    Volume volume;
    double fidelity = 0.0;
    double objective = 0.0;
    double wall_seconds = 0.0;
};

struct SolverTrace {
    std::string method;
    nlohmann::json config = nlohmann::json::object();
    std::vector<Checkpoint> checkpoints;
    std::size_t skipped_rows = 0;  // zero-row guard hits
    bool diverged = false;
    std::vector<std::string> events;
    std::vector<double> residual_history;  // per sweep, Kaczmarz only and on request

    const Checkpoint& final_checkpoint() const { return checkpoints.back(); }
};

enum class PenaltyKind { l2, l1, l1_plus_l2, tv };
std::string to_string(PenaltyKind k);
PenaltyKind penalty_kind_from_string(const std::string& s);

/// l2: lambda/2 ||c||^2; l1: lambda ||c||_1; l1_plus_l2: lambda ||c||_1 + rho/2 ||c||^2; tv: lambda TV_eps(c).
struct PenaltyConfig {
    PenaltyKind kind = PenaltyKind::l2;
    double lambda = 0.0;
    double rho = 0.0;
    double tv_epsilon = 1e-2;

    void validate() const;
};

struct KaczmarzParams {
    double rho = 0.0;
    double lambda = 0.0;
    std::size_t sweeps = 500;
    bool nonnegative = true;
    bool track_residual = false;  // record ||Ac - y + sqrt(rho) u|| after every sweep (extra matvec)
};

/// Row-action method on the augmented system [A sqrt(rho) I][c; u] = y, one
/// in-order sweep at a time; after each sweep c <- P_+(shrink(c, lambda_step))
/// with lambda_step = lambda / (mean ||a_i||^2 + rho).
SolverTrace kaczmarz(const ProcessedSystem& sys, const KaczmarzParams& params, const CheckpointSchedule& schedule,
                     const std::optional<Volume>& x0 = std::nullopt);

SolverTrace kaczmarz_l2(const ProcessedSystem& sys, double rho, std::size_t sweeps, const CheckpointSchedule& schedule,
                        const std::optional<Volume>& x0 = std::nullopt);
SolverTrace kaczmarz_l1l2(const ProcessedSystem& sys, double rho, double lambda, std::size_t sweeps,
                          const CheckpointSchedule& schedule, const std::optional<Volume>& x0 = std::nullopt);
SolverTrace kaczmarz_l1(const ProcessedSystem& sys, double lambda, std::size_t sweeps,
                        const CheckpointSchedule& schedule, const std::optional<Volume>& x0 = std::nullopt);

/// Keeps the `keep` rows of largest norm (ties: lower index first), in original order.
ProcessedSystem select_rows_by_norm(const ProcessedSystem& sys, Eigen::Index keep);

struct VarParams {
    int fidelity_p = 2;
    PenaltyConfig penalty;
    std::size_t iterations = 500;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
};

/// Minimizes (1/p)||Ac - y||_p^p + R(c) with AMSGrad, projecting onto c >= 0 after every step.
SolverTrace var_solve(const ProcessedSystem& sys, const VarParams& params, const CheckpointSchedule& schedule,
                      const std::optional<Volume>& x0 = std::nullopt, std::uint64_t seed = 0);

struct TvResult {
    double value = 0.0;
    Volume gradient;
};

/// Anisotropic smoothed TV with replicate boundary: sum over forward differences of sqrt(d^2 + eps^2) - eps.
TvResult tv_penalty(const Volume& c, double eps);

/// (1/p)||r||_p^p with r = Ac - y.
double data_fidelity(const ProcessedSystem& sys, const Vector& c, int p);

void save_trace(const SolverTrace& trace, const std::string& dir);
SolverTrace load_trace(const std::string& dir);
/// "iteration,fidelity,objective" lines.
std::string trace_summary_csv(const SolverTrace& trace);

}  // namespace mpibench
