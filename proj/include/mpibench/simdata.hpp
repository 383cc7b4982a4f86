#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mpibench/linalg.hpp"

namespace mpibench {

using Vec3 = std::array<double, 3>;

enum class PhantomKind { cone, five_tube, cuboid_union };

struct Box {
    Vec3 lo{0, 0, 0};
    Vec3 hi{0, 0, 0};
};

/// Truncated cone. `apex_angle_deg` is the angle between axis and lateral
/// surface; tip radius 1 mm, 10 degrees and 22 mm height give 683.9 µl.
struct ConeParams {
    double tip_radius = 1.0;
    double apex_angle_deg = 10.0;
    double height = 22.0;
    Vec3 tip{0.0, -11.0, 0.0};
    Vec3 axis{0.0, 1.0, 0.0};
};

/// Five tubes from a common origin: one along +y, two tilted towards x
/// (in the x-y plane) and two tilted towards z (in the y-z plane).
struct FiveTubeParams {
    double tube_radius = 1.0;
    double length = 30.0;
    Vec3 origin{0.0, -15.0, 0.0};
    std::array<double, 2> in_plane_deg{20.0, 30.0};
    std::array<double, 2> out_of_plane_deg{10.0, 15.0};
};

struct PhantomSpec {
    PhantomKind kind = PhantomKind::cone;
    ConeParams cone;
    FiveTubeParams tubes;
    std::vector<Box> boxes;  // cuboid_union
    double tracer_value = 50.0;

    /// Throws ConfigError on non-positive geometry or angles outside (0, 90).
    void validate() const;
    /// Point membership of the unshifted phantom.
    bool contains(const Vec3& p) const;
    /// Axis-aligned bounds of the unshifted phantom.
    Box bounds() const;
};

std::string to_string(PhantomKind k);
PhantomKind phantom_kind_from_string(const std::string& s);

struct GridSpec {
    Dims3 dims{19, 19, 19};
    Vec3 fov{38.0, 38.0, 19.0};       // mm
    Vec3 origin{-19.0, -19.0, -9.5};  // lower corner, mm

    Vec3 voxel_size() const { return {fov[0] / double(dims.nx), fov[1] / double(dims.ny), fov[2] / double(dims.nz)}; }
    double voxel_volume() const {
        const auto v = voxel_size();
        return v[0] * v[1] * v[2];
    }
    void validate() const;
    bool operator==(const GridSpec&) const = default;
};

struct RasterResult {
    Volume volume;
    bool phantom_outside_grid = false;
};

/// Voxel values are tracer_value times the fraction of each voxel covered by
/// the phantom translated by `shift`, from supersample^3 midpoint samples.
RasterResult rasterize_phantom(const PhantomSpec& spec, const GridSpec& grid, const Vec3& shift = {0, 0, 0},
                               int supersample = 5);

enum class OperatorKind { spectral, langevin };
std::string to_string(OperatorKind k);

struct SpectralParams {
    double beta = 1.0;
    double scale = 1.0;
    std::size_t frequencies_per_coil = 32;
    std::size_t first_frequency = 1;
};

struct LangevinParams {
    Vec3 drive_amplitude_mT{12.0, 12.0, 12.0};
    Vec3 gradient_T_per_m{-1.0, -1.0, 2.0};
    std::array<int, 3> frequency_ratios{17, 16, 15};
    double kappa = 0.5;  // 1/mT
    std::size_t samples_per_period = 256;
    std::size_t max_frequency = 127;
};

struct OperatorModel {
    OperatorKind kind = OperatorKind::spectral;
    SpectralParams spectral;
    LangevinParams langevin;

    void validate() const;
};

enum class Part { re = 0, im = 1 };

struct RowLabel {
    int coil = 0;
    int frequency = 0;
    Part part = Part::re;
    bool operator==(const RowLabel&) const = default;
};

struct RawDataset {
    Matrix system_rows;              // M_raw x N
    std::vector<RowLabel> row_labels;
    Vector measurement;              // phantom scan; empty until synth_measurement
    Vector background;               // v0: mean of background_samples
    Matrix background_samples;       // B x M_raw
    Vector background_pattern;       // unscaled smooth direct-feedthrough shape
    Vector noise_sigma;              // per row
    Vector snr_per_row;
    GridSpec grid;
    std::uint64_t seed = 0;
    std::string provenance;          // JSON echo of the generating model

    Eigen::Index rows() const { return system_rows.rows(); }
    bool has_measurement() const { return measurement.size() == system_rows.rows() && system_rows.rows() > 0; }
    bool operator==(const RawDataset&) const;
};

/// System rows, labels and the background pattern; measurement fields empty.
RawDataset synth_operator(const OperatorModel& model, const GridSpec& grid, int coils, std::uint64_t seed);

/// Magnetization of the equilibrium Langevin model, m(H) = H * 3 L(kappa |H|) / (kappa |H|).
/// Reduces to m = H for kappa = 0.
Vec3 langevin_magnetization(const Vec3& H, double kappa);

struct MeasurementOptions {
    double background_scale = 1.0;
    std::size_t background_count = 16;
};

/// Fills measurement, background samples, v0 and per-row SNR.
RawDataset synth_measurement(const RawDataset& ds, const Volume& phantom, const Vector& noise_sigma_per_row,
                             const MeasurementOptions& opts, std::uint64_t seed);

/// Uniform per-row sigma giving ||S c|| / ||noise|| = 10^(snr_db / 20) in expectation.
double noise_sigma_for_snr(const RawDataset& ds, const Volume& phantom, double snr_db);

void save_dataset(const RawDataset& ds, const std::string& dir);
RawDataset load_dataset(const std::string& dir);

}  // namespace mpibench
