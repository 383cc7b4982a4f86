#pragma once

// Deep image prior: a 3D convolutional autoencoder (no skip connections)
// with hand-written reverse mode, fitted to a single measurement by Adam.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpibench/linalg.hpp"
#include "mpibench/preprocess.hpp"
#include "mpibench/solvers.hpp"

namespace mpibench {

/// channels x nx x ny x nz, x fastest, channel slowest.
struct Tensor4 {
    std::size_t channels = 0;
    Dims3 dims;
    std::vector<double> values;

    Tensor4() = default;
    Tensor4(std::size_t c, Dims3 d) : channels(c), dims(d), values(c * d.size(), 0.0) {}

    std::span<double> channel(std::size_t c) { return {values.data() + c * dims.size(), dims.size()}; }
    std::span<const double> channel(std::size_t c) const { return {values.data() + c * dims.size(), dims.size()}; }
};

struct AutoencoderSpec {
    std::vector<std::size_t> encoder_channels{64, 128, 256};
    int kernel = 3;
    int downsample_factor = 2;
    double leaky_slope = 0.2;
    double norm_eps = 1e-5;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

struct LayerSlice {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter vector theta with a per-layer layout table.
struct ParamVector {
    std::vector<double> values;
    std::vector<LayerSlice> layout;

    std::span<double> slice(const std::string& name);
    std::span<const double> slice(const std::string& name) const;
    std::size_t size() const noexcept { return values.size(); }
};

class Autoencoder {
public:
    /// Records stage dims (ceil-halving per encoder stage); throws if a stage would collapse.
    Autoencoder(AutoencoderSpec spec, Dims3 input);

    const AutoencoderSpec& spec() const noexcept { return spec_; }
    const std::vector<Dims3>& stage_dims() const noexcept { return stage_dims_; }
    Dims3 input_dims() const noexcept { return stage_dims_.front(); }

    /// Seeded fan-in-scaled uniform weights, unit norm scales, zero offsets.
    ParamVector init_params() const;
    /// Layout with all-zero values.
    ParamVector zero_params() const;

    Volume forward(const ParamVector& theta, const Tensor4& z) const;

    /// Loss ||A phi - y||_p^p and its gradient with respect to theta.
    double loss_and_grad(const ParamVector& theta, const Tensor4& z, const ProcessedSystem& sys, int p,
                         std::vector<double>& grad) const;

private:
    enum class OpKind { conv, norm, leaky, relu, upsample };
    struct Op {
        OpKind kind;
        std::string name;
        std::size_t in_channels = 0, out_channels = 0;
        Dims3 in_dims, out_dims;
        int kernel = 1, stride = 1;
        bool bias = false;
        std::size_t weight_offset = 0, bias_offset = 0;  // conv
        std::size_t scale_offset = 0, offset_offset = 0;  // norm
    };
    struct Tape;
    Volume run_forward(const ParamVector& theta, const Tensor4& z, Tape* tape) const;

    AutoencoderSpec spec_;
    std::vector<Dims3> stage_dims_;
    std::vector<Op> ops_;
    std::vector<LayerSlice> layout_;
    std::size_t param_count_ = 0;
};

struct NetworkBuild {
    ParamVector params;
    std::vector<Dims3> stage_dims;
};

NetworkBuild build_network(const AutoencoderSpec& spec, Dims3 input);
Volume forward(const ParamVector& theta, const Tensor4& z, const AutoencoderSpec& spec);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};
LossGrad grad_theta(const ParamVector& theta, const Tensor4& z, const ProcessedSystem& sys, int p,
                    const AutoencoderSpec& spec);

struct DipConfig {
    double lr = 1e-3;
    std::size_t iterations = 20000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int fidelity_p = 1;
    double input_high = 0.7;  // z ~ U[0, input_high]
    CheckpointSchedule schedule = CheckpointSchedule::standard();
    std::uint64_t seed = 0;

    void validate() const;
};

/// Fixed network input drawn once from U[0, high].
Tensor4 sample_input(Dims3 dims, double high, std::uint64_t seed);

SolverTrace dip_reconstruct(const ProcessedSystem& sys, const DipConfig& cfg, const AutoencoderSpec& spec);

/// c = tau^(1/p) / ||theta||_p * theta, so ||c||_p^p = tau.
Vector homogeneous_map(const Vector& theta, double p, double tau);

/// Adam on theta in R^N minimizing ||A c(theta) - y||_2^2 with c(theta) from homogeneous_map.
/// Volumes are signed (not flagged nonnegative).
SolverTrace homogeneous_dip(const ProcessedSystem& sys, double p, double tau, std::size_t iters, double lr,
                            std::uint64_t seed, const CheckpointSchedule* schedule = nullptr);

}  // namespace mpibench
