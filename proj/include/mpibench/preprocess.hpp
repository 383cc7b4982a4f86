#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpibench/linalg.hpp"
#include "mpibench/simdata.hpp"

namespace mpibench {

struct Band {
    int min_frequency = 0;
    int max_frequency = 0;
};

struct PreprocessConfig {
    double snr_threshold = 0.0;  // tau
    /// One band per coil, or a single band applied to every coil. Empty keeps the full range.
    std::vector<Band> bandpass;
    bool whitening = true;
    Eigen::Index rank = 2000;  // K
    std::uint64_t rsvd_seed = 0;
    RsvdOptions rsvd_options() const { return {10, 2, rsvd_seed}; }

    void validate() const;
};

inline constexpr double kVarianceFloor = 1e-24;

struct SelectedRows {
    Matrix rows;
    Vector data;  // measurement - background
    std::vector<RowLabel> labels;
    Vector snr;
    std::vector<Eigen::Index> source_index;
};

struct ProcessedSystem {
    Matrix A;  // K x N
    Vector y;
    std::vector<RowLabel> retained_rows;
    std::optional<Vector> whitening_weights;
    SvdFactors svd;
    PreprocessConfig config;
    Eigen::Index requested_rank = 0;
    bool rank_clamped = false;
    GridSpec grid;

    Eigen::Index rows() const { return A.rows(); }
};

/// Bandpass plus SNR threshold; Re and Im parts of a frequency are kept or dropped together.
SelectedRows select_rows(const RawDataset& ds, const PreprocessConfig& cfg);

/// Diagonal of W: 1 / sqrt(unbiased variance + floor) per column of `background_samples`.
Vector whitening_matrix(const Matrix& background_samples);

ProcessedSystem build_system(const RawDataset& ds, const PreprocessConfig& cfg);

/// A system assembled directly from (A, y); used for fixtures and externally prepared data.
ProcessedSystem make_system(Matrix A, Vector y, GridSpec grid);

void save_system(const ProcessedSystem& sys, const std::string& dir);
ProcessedSystem load_system(const std::string& dir);

}  // namespace mpibench
