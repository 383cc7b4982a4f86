#pragma once

// PSNR, windowed 3D SSIM, and their shift-maximized variants that tolerate an
// unknown phantom placement.

#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mpibench/linalg.hpp"
#include "mpibench/simdata.hpp"

namespace mpibench {

inline constexpr double kDefaultDataRange = 100.0;
inline constexpr std::size_t kSsimWindow = 7;

struct ShiftGrid {
    double extent = 3.0;  // mm, per axis
    double step = 0.5;    // mm
    std::vector<Vec3> shifts;

    /// All lattice points in [-extent, extent]^3, x fastest; contains 0.
    static ShiftGrid make(double extent, double step);
    static ShiftGrid standard() { return make(3.0, 0.5); }
    void validate() const;
};

/// Squared error based PSNR; identical inputs give +infinity.
double psnr(const Volume& x, const Volume& ref, double data_range = kDefaultDataRange);

/// Mean local SSIM over all fully-interior 7^3 uniform windows, sample covariance.
double ssim3d(const Volume& x, const Volume& ref, double data_range = kDefaultDataRange);

struct QualityReport {
    double eps_psnr = 0.0;
    double eps_ssim = 0.0;
    Vec3 argmax_psnr{0, 0, 0};
    Vec3 argmax_ssim{0, 0, 0};
    double psnr_unshifted = 0.0;
    double ssim_unshifted = 0.0;
    double data_range = kDefaultDataRange;
    std::vector<double> psnr_per_shift;
    std::vector<double> ssim_per_shift;

    /// Infinite PSNR values serialize as "inf".
    nlohmann::json to_json(bool per_shift = false) const;
};

/// Metric value to JSON with the "inf" sentinel.
nlohmann::json metric_json(double v);

/// Rasterized references at every shift plus the per-reference statistics
/// SSIM needs. Built once per (phantom, grid, shift grid).
struct ReferenceSet {
    std::vector<Vec3> shifts;
    std::vector<Volume> references;
    std::vector<std::vector<double>> ssim_sums;    // box sums of r
    std::vector<std::vector<double>> ssim_sqsums;  // box sums of r^2
    std::vector<std::pair<std::size_t, std::size_t>> support;  // [first, last + 1) nonzero linear index
    std::size_t zero_shift = 0;
};

std::shared_ptr<const ReferenceSet> build_reference_set(const PhantomSpec& spec, const GridSpec& grid,
                                                        const ShiftGrid& shifts);

/// Read-mostly cache; concurrent lookups are safe and each key is built once.
class ReferenceCache {
public:
    std::shared_ptr<const ReferenceSet> get(const PhantomSpec& spec, const GridSpec& grid, const ShiftGrid& shifts);
    std::size_t size() const;
    void clear();

    static ReferenceCache& global();

private:
    struct Slot {
        std::once_flag once;
        std::shared_ptr<const ReferenceSet> set;
    };
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<Slot>> slots_;
};

QualityReport eps_metrics(const Volume& x, const ReferenceSet& refs, double data_range = kDefaultDataRange);
/// PSNR half of eps_metrics only; far cheaper when SSIM is not needed.
double eps_psnr(const Volume& x, const ReferenceSet& refs, double data_range = kDefaultDataRange);
QualityReport eps_metrics(const Volume& x, const PhantomSpec& spec, const GridSpec& grid, const ShiftGrid& shifts,
                          double data_range = kDefaultDataRange, ReferenceCache* cache = &ReferenceCache::global());

}  // namespace mpibench
