#include "mpibench/metrics.hpp"

#include <cmath>

#include "mpibench/json_io.hpp"

namespace mpibench {

using nlohmann::json;

ShiftGrid ShiftGrid::make(double extent, double step) {
    if (!(extent >= 0.0) || !(step > 0.0)) throw ConfigError("shift grid: extent must be >= 0 and step > 0");
    const long half = std::lround(extent / step);
    if (std::abs(double(half) * step - extent) > 1e-9 * std::max(1.0, extent)) {
        throw ConfigError("shift grid: extent must be a multiple of the step");
    }
    ShiftGrid g;
    g.extent = extent;
    g.step = step;
    for (long k = -half; k <= half; ++k)
        for (long j = -half; j <= half; ++j)
            for (long i = -half; i <= half; ++i) g.shifts.push_back({double(i) * step, double(j) * step, double(k) * step});
    return g;
}

void ShiftGrid::validate() const {
    if (shifts.empty()) throw ConfigError("shift grid is empty");
    bool has_zero = false;
    for (const auto& s : shifts) {
        if (!(std::isfinite(s[0]) && std::isfinite(s[1]) && std::isfinite(s[2])))
            throw ConfigError("shift grid contains a non-finite shift");
        if (s[0] == 0.0 && s[1] == 0.0 && s[2] == 0.0) has_zero = true;
    }
    if (!has_zero) throw ConfigError("shift grid must contain the zero shift");
}

namespace {

void check_pair(const Volume& x, const Volume& ref, double data_range, const char* what) {
    if (x.dims != ref.dims) {
        throw DimensionError(std::string(what) + ": shape mismatch " + to_string(x.dims) + " vs " + to_string(ref.dims));
    }
    if (!(data_range > 0.0)) throw ConfigError(std::string(what) + ": data_range must be > 0");
}

Dims3 window_dims(Dims3 d) {
    const std::size_t w = kSsimWindow;
    if (d.nx < w || d.ny < w || d.nz < w) {
        throw DimensionError("ssim3d: volume " + to_string(d) + " smaller than the " + std::to_string(w) + "^3 window");
    }
    return {d.nx - w + 1, d.ny - w + 1, d.nz - w + 1};
}

// Sums over every fully-interior window, separably with running sums.
std::vector<double> box_sums(const double* v, Dims3 d) {
    const std::size_t w = kSsimWindow;
    const Dims3 o = window_dims(d);
    std::vector<double> ax(o.nx * d.ny * d.nz);
    for (std::size_t r = 0; r < d.ny * d.nz; ++r) {
        const double* row = v + r * d.nx;
        double s = 0.0;
        for (std::size_t i = 0; i < w; ++i) s += row[i];
        double* out = ax.data() + r * o.nx;
        out[0] = s;
        for (std::size_t i = 1; i < o.nx; ++i) {
            s += row[i + w - 1] - row[i - 1];
            out[i] = s;
        }
    }
    std::vector<double> ay(o.nx * o.ny * d.nz);
    for (std::size_t k = 0; k < d.nz; ++k)
        for (std::size_t i = 0; i < o.nx; ++i) {
            auto in = [&](std::size_t j) { return ax[(k * d.ny + j) * o.nx + i]; };
            double s = 0.0;
            for (std::size_t j = 0; j < w; ++j) s += in(j);
            ay[(k * o.ny) * o.nx + i] = s;
            for (std::size_t j = 1; j < o.ny; ++j) {
                s += in(j + w - 1) - in(j - 1);
                ay[(k * o.ny + j) * o.nx + i] = s;
            }
        }
    std::vector<double> az(o.size());
    const std::size_t plane = o.nx * o.ny;
    for (std::size_t p = 0; p < plane; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < w; ++k) s += ay[k * plane + p];
        az[p] = s;
        for (std::size_t k = 1; k < o.nz; ++k) {
            s += ay[(k + w - 1) * plane + p] - ay[(k - 1) * plane + p];
            az[k * plane + p] = s;
        }
    }
    return az;
}

std::vector<double> squares(const Vector& v) {
    std::vector<double> out(std::size_t(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[std::size_t(i)] = v[i] * v[i];
    return out;
}

double psnr_from_sse(double sse, std::size_t n, double data_range) {
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range * double(n) / sse);
}

// Running sums of x^2 from the front and from the back, so the error outside a
// reference's support costs two lookups and involves no cancellation.
struct EnergyTails {
    std::vector<double> head, tail;  // head[i] = sum_{j<i}, tail[i] = sum_{j>=i}

    explicit EnergyTails(const Vector& x) : head(std::size_t(x.size()) + 1, 0.0), tail(std::size_t(x.size()) + 1, 0.0) {
        const std::size_t n = std::size_t(x.size());
        for (std::size_t i = 0; i < n; ++i) head[i + 1] = head[i] + x[Eigen::Index(i)] * x[Eigen::Index(i)];
        for (std::size_t i = n; i-- > 0;) tail[i] = tail[i + 1] + x[Eigen::Index(i)] * x[Eigen::Index(i)];
    }
};

double shifted_psnr(const Vector& x, const EnergyTails& e, const Volume& r, std::pair<std::size_t, std::size_t> support,
                    double data_range) {
    const auto [lo, hi] = support;
    const Eigen::Index len = Eigen::Index(hi - lo);
    const double inside = (x.segment(Eigen::Index(lo), len) - r.values.segment(Eigen::Index(lo), len)).squaredNorm();
    return psnr_from_sse(e.head[lo] + inside + e.tail[hi], std::size_t(x.size()), data_range);
}

std::pair<std::size_t, std::size_t> nonzero_range(const Vector& v) {
    std::size_t lo = 0, hi = std::size_t(v.size());
    while (lo < hi && v[Eigen::Index(lo)] == 0.0) ++lo;
    while (hi > lo && v[Eigen::Index(hi - 1)] == 0.0) --hi;
    return {lo, hi};
}

double ssim_from_sums(const std::vector<double>& sx, const std::vector<double>& sxx, const std::vector<double>& sy,
                      const std::vector<double>& syy, const std::vector<double>& sxy, double data_range) {
    const double n = double(kSsimWindow * kSsimWindow * kSsimWindow);
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    double total = 0.0;
    for (std::size_t w = 0; w < sx.size(); ++w) {
        const double mx = sx[w] / n, my = sy[w] / n;
        const double vx = (sxx[w] - sx[w] * mx) / (n - 1.0);
        const double vy = (syy[w] - sy[w] * my) / (n - 1.0);
        const double cxy = (sxy[w] - sx[w] * my) / (n - 1.0);
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return total / double(sx.size());
}

std::vector<double> product_sums(const Vector& x, const Vector& r, Dims3 d) {
    std::vector<double> prod(std::size_t(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) prod[std::size_t(i)] = x[i] * r[i];
    return box_sums(prod.data(), d);
}

std::string cache_key(const PhantomSpec& spec, const GridSpec& grid, const ShiftGrid& shifts) {
    json j = {{"phantom", phantom_to_json(spec)}, {"grid", grid_to_json(grid)}};
    json s = json::array();
    for (const auto& v : shifts.shifts) s.push_back({v[0], v[1], v[2]});
    j["shifts"] = std::move(s);
    return j.dump();
}

}  // namespace

double psnr(const Volume& x, const Volume& ref, double data_range) {
    check_pair(x, ref, data_range, "psnr");
    return psnr_from_sse((x.values - ref.values).squaredNorm(), x.size(), data_range);
}

double ssim3d(const Volume& x, const Volume& ref, double data_range) {
    check_pair(x, ref, data_range, "ssim3d");
    window_dims(x.dims);
    const auto sx = box_sums(x.values.data(), x.dims);
    const auto sy = box_sums(ref.values.data(), ref.dims);
    const auto xx = squares(x.values), yy = squares(ref.values);
    return ssim_from_sums(sx, box_sums(xx.data(), x.dims), sy, box_sums(yy.data(), x.dims),
                          product_sums(x.values, ref.values, x.dims), data_range);
}

json metric_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
}

json QualityReport::to_json(bool per_shift) const {
    json j = {{"eps_psnr", metric_json(eps_psnr)},
              {"eps_ssim", metric_json(eps_ssim)},
              {"argmax_psnr_mm", argmax_psnr},
              {"argmax_ssim_mm", argmax_ssim},
              {"psnr_unshifted", metric_json(psnr_unshifted)},
              {"ssim_unshifted", metric_json(ssim_unshifted)},
              {"data_range", data_range}};
    if (per_shift) {
        json p = json::array(), s = json::array();
        for (double v : psnr_per_shift) p.push_back(metric_json(v));
        for (double v : ssim_per_shift) s.push_back(metric_json(v));
        j["psnr_per_shift"] = std::move(p);
        j["ssim_per_shift"] = std::move(s);
    }
    return j;
}

std::shared_ptr<const ReferenceSet> build_reference_set(const PhantomSpec& spec, const GridSpec& grid,
                                                        const ShiftGrid& shifts) {
    shifts.validate();
    window_dims(grid.dims);
    auto set = std::make_shared<ReferenceSet>();
    set->shifts = shifts.shifts;
    set->references.reserve(shifts.shifts.size());
    for (std::size_t s = 0; s < shifts.shifts.size(); ++s) {
        const Vec3& d = shifts.shifts[s];
        if (d[0] == 0.0 && d[1] == 0.0 && d[2] == 0.0) set->zero_shift = s;
        Volume r = rasterize_phantom(spec, grid, d).volume;
        set->ssim_sums.push_back(box_sums(r.values.data(), grid.dims));
        const auto sq = squares(r.values);
        set->ssim_sqsums.push_back(box_sums(sq.data(), grid.dims));
        set->support.push_back(nonzero_range(r.values));
        set->references.push_back(std::move(r));
    }
    return set;
}

std::shared_ptr<const ReferenceSet> ReferenceCache::get(const PhantomSpec& spec, const GridSpec& grid,
                                                        const ShiftGrid& shifts) {
    const std::string key = cache_key(spec, grid, shifts);
    std::shared_ptr<Slot> slot;
    {
        std::lock_guard lock(mutex_);
        auto& s = slots_[key];
        if (!s) s = std::make_shared<Slot>();
        slot = s;
    }
    std::call_once(slot->once, [&] { slot->set = build_reference_set(spec, grid, shifts); });
    return slot->set;
}

std::size_t ReferenceCache::size() const {
    std::lock_guard lock(mutex_);
    return slots_.size();
}

void ReferenceCache::clear() {
    std::lock_guard lock(mutex_);
    slots_.clear();
}

ReferenceCache& ReferenceCache::global() {
    static ReferenceCache cache;
    return cache;
}

QualityReport eps_metrics(const Volume& x, const ReferenceSet& refs, double data_range) {
    if (refs.references.empty()) throw ConfigError("eps_metrics: empty reference set");
    check_pair(x, refs.references.front(), data_range, "eps_metrics");
    const Dims3 d = x.dims;
    const auto sx = box_sums(x.values.data(), d);
    const auto xx = squares(x.values);
    const auto sxx = box_sums(xx.data(), d);
    const EnergyTails energy(x.values);

    QualityReport q;
    q.data_range = data_range;
    const std::size_t n = refs.references.size();
    q.psnr_per_shift.resize(n);
    q.ssim_per_shift.resize(n);
    q.eps_psnr = -std::numeric_limits<double>::infinity();
    q.eps_ssim = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n; ++s) {
        const Volume& r = refs.references[s];
        const double p = shifted_psnr(x.values, energy, r, refs.support[s], data_range);
        const double ss = ssim_from_sums(sx, sxx, refs.ssim_sums[s], refs.ssim_sqsums[s],
                                         product_sums(x.values, r.values, d), data_range);
        q.psnr_per_shift[s] = p;
        q.ssim_per_shift[s] = ss;
        if (p > q.eps_psnr) {
            q.eps_psnr = p;
            q.argmax_psnr = refs.shifts[s];
        }
        if (ss > q.eps_ssim) {
            q.eps_ssim = ss;
            q.argmax_ssim = refs.shifts[s];
        }
    }
    q.psnr_unshifted = q.psnr_per_shift[refs.zero_shift];
    q.ssim_unshifted = q.ssim_per_shift[refs.zero_shift];
    return q;
}

double eps_psnr(const Volume& x, const ReferenceSet& refs, double data_range) {
    if (refs.references.empty()) throw ConfigError("eps_psnr: empty reference set");
    check_pair(x, refs.references.front(), data_range, "eps_psnr");
    const EnergyTails energy(x.values);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < refs.references.size(); ++s)
        best = std::max(best, shifted_psnr(x.values, energy, refs.references[s], refs.support[s], data_range));
    return best;
}

QualityReport eps_metrics(const Volume& x, const PhantomSpec& spec, const GridSpec& grid, const ShiftGrid& shifts,
                          double data_range, ReferenceCache* cache) {
    if (x.dims != grid.dims) {
        throw DimensionError("eps_metrics: volume " + to_string(x.dims) + " does not match grid " + to_string(grid.dims));
    }
    const auto refs = cache ? cache->get(spec, grid, shifts) : build_reference_set(spec, grid, shifts);
    return eps_metrics(x, *refs, data_range);
}

}  // namespace mpibench
