#include "mpibench/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "mpibench/container.hpp"
#include "mpibench/json_io.hpp"

namespace mpibench {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add_scaled(const Vec3& a, const Vec3& d, double t) { return {a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]}; }
Vec3 normalized(const Vec3& a) {
    const double n = std::sqrt(dot(a, a));
    return {a[0] / n, a[1] / n, a[2] / n};
}

// Distance of p from the segment origin + t*dir, t in [0, len], and the axial coordinate.
bool in_cylinder(const Vec3& p, const Vec3& origin, const Vec3& dir, double len, double radius) {
    const Vec3 rel = sub(p, origin);
    const double t = dot(rel, dir);
    if (t < 0.0 || t > len) return false;
    const double r2 = dot(rel, rel) - t * t;
    return r2 <= radius * radius;
}

std::array<Vec3, 5> tube_directions(const FiveTubeParams& t) {
    return {Vec3{0.0, 1.0, 0.0},
            Vec3{std::sin(t.in_plane_deg[0] * kDeg), std::cos(t.in_plane_deg[0] * kDeg), 0.0},
            Vec3{std::sin(t.in_plane_deg[1] * kDeg), std::cos(t.in_plane_deg[1] * kDeg), 0.0},
            Vec3{0.0, std::cos(t.out_of_plane_deg[0] * kDeg), std::sin(t.out_of_plane_deg[0] * kDeg)},
            Vec3{0.0, std::cos(t.out_of_plane_deg[1] * kDeg), std::sin(t.out_of_plane_deg[1] * kDeg)}};
}

void expand(Box& b, const Vec3& p, double r) {
    for (int a = 0; a < 3; ++a) {
        b.lo[a] = std::min(b.lo[a], p[a] - r);
        b.hi[a] = std::max(b.hi[a], p[a] + r);
    }
}

void check_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("phantom: ") + name + " must be > 0");
}

void check_angle(double v, const char* name) {
    if (!(v > 0.0 && v < 90.0)) throw ConfigError(std::string("phantom: ") + name + " must lie in (0, 90) degrees");
}

}  // namespace

std::string to_string(PhantomKind k) {
    switch (k) {
        case PhantomKind::cone: return "cone";
        case PhantomKind::five_tube: return "five_tube";
        case PhantomKind::cuboid_union: return "cuboid_union";
    }
    return "?";
}

PhantomKind phantom_kind_from_string(const std::string& s) {
    if (s == "cone") return PhantomKind::cone;
    if (s == "five_tube") return PhantomKind::five_tube;
    if (s == "cuboid_union") return PhantomKind::cuboid_union;
    throw ConfigError("unknown phantom kind '" + s + "'");
}

std::string to_string(OperatorKind k) { return k == OperatorKind::spectral ? "spectral" : "langevin"; }

void PhantomSpec::validate() const {
    if (!(tracer_value >= 0.0) || !std::isfinite(tracer_value)) throw ConfigError("phantom: tracer_value must be >= 0");
    switch (kind) {
        case PhantomKind::cone:
            check_positive(cone.tip_radius, "tip_radius");
            check_positive(cone.height, "height");
            check_angle(cone.apex_angle_deg, "apex_angle_deg");
            if (dot(cone.axis, cone.axis) <= 0.0) throw ConfigError("phantom: cone axis must be nonzero");
            break;
        case PhantomKind::five_tube:
            check_positive(tubes.tube_radius, "tube_radius");
            check_positive(tubes.length, "length");
            for (double a : tubes.in_plane_deg) check_angle(a, "in_plane_deg");
            for (double a : tubes.out_of_plane_deg) check_angle(a, "out_of_plane_deg");
            break;
        case PhantomKind::cuboid_union:
            if (boxes.empty()) throw ConfigError("phantom: cuboid_union needs at least one box");
            for (const auto& b : boxes)
                for (int a = 0; a < 3; ++a)
                    if (!(b.hi[a] > b.lo[a])) throw ConfigError("phantom: box extents must be positive");
            break;
    }
}

bool PhantomSpec::contains(const Vec3& p) const {
    switch (kind) {
        case PhantomKind::cone: {
            const Vec3 ax = normalized(cone.axis);
            const Vec3 rel = sub(p, cone.tip);
            const double t = dot(rel, ax);
            if (t < 0.0 || t > cone.height) return false;
            const double radius = cone.tip_radius + t * std::tan(cone.apex_angle_deg * kDeg);
            return dot(rel, rel) - t * t <= radius * radius;
        }
        case PhantomKind::five_tube: {
            for (const auto& d : tube_directions(tubes))
                if (in_cylinder(p, tubes.origin, d, tubes.length, tubes.tube_radius)) return true;
            return false;
        }
        case PhantomKind::cuboid_union:
            for (const auto& b : boxes) {
                if (p[0] >= b.lo[0] && p[0] < b.hi[0] && p[1] >= b.lo[1] && p[1] < b.hi[1] && p[2] >= b.lo[2] &&
                    p[2] < b.hi[2])
                    return true;
            }
            return false;
    }
    return false;
}

Box PhantomSpec::bounds() const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    Box b{{inf, inf, inf}, {-inf, -inf, -inf}};
    switch (kind) {
        case PhantomKind::cone: {
            const Vec3 ax = normalized(cone.axis);
            const double rmax = cone.tip_radius + cone.height * std::tan(cone.apex_angle_deg * kDeg);
            expand(b, cone.tip, rmax);
            expand(b, add_scaled(cone.tip, ax, cone.height), rmax);
            break;
        }
        case PhantomKind::five_tube:
            for (const auto& d : tube_directions(tubes)) {
                expand(b, tubes.origin, tubes.tube_radius);
                expand(b, add_scaled(tubes.origin, d, tubes.length), tubes.tube_radius);
            }
            break;
        case PhantomKind::cuboid_union:
            for (const auto& box : boxes) {
                expand(b, box.lo, 0.0);
                expand(b, box.hi, 0.0);
            }
            break;
    }
    return b;
}

void GridSpec::validate() const {
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) throw ConfigError("grid: counts must be positive");
    for (double f : fov)
        if (!(f > 0.0)) throw ConfigError("grid: field of view must be positive");
}

RasterResult rasterize_phantom(const PhantomSpec& spec, const GridSpec& grid, const Vec3& shift, int supersample) {
    if (supersample < 1) throw ConfigError("rasterize_phantom: supersample must be >= 1");
    spec.validate();
    grid.validate();
    const Vec3 d = grid.voxel_size();
    RasterResult out{Volume(grid.dims, std::array<double, 3>{d[0], d[1], d[2]}), false};

    Box bb = spec.bounds();
    for (int a = 0; a < 3; ++a) {
        bb.lo[a] += shift[a];
        bb.hi[a] += shift[a];
    }
    const Vec3 grid_hi{grid.origin[0] + grid.fov[0], grid.origin[1] + grid.fov[1], grid.origin[2] + grid.fov[2]};
    bool overlaps = true;
    for (int a = 0; a < 3; ++a)
        if (bb.hi[a] <= grid.origin[a] || bb.lo[a] >= grid_hi[a]) overlaps = false;
    if (!overlaps || spec.tracer_value == 0.0) {
        out.phantom_outside_grid = !overlaps;
        out.volume.mark_nonnegative();
        return out;
    }

    const std::array<std::size_t, 3> n{grid.dims.nx, grid.dims.ny, grid.dims.nz};
    // Index ranges of voxels touching the shifted bounding box.
    std::array<std::size_t, 3> first{}, last{};
    for (int a = 0; a < 3; ++a) {
        const double lo = std::floor((bb.lo[a] - grid.origin[a]) / d[a]) - 1.0;
        const double hi = std::ceil((bb.hi[a] - grid.origin[a]) / d[a]) + 1.0;
        first[a] = static_cast<std::size_t>(std::clamp(lo, 0.0, double(n[a])));
        last[a] = static_cast<std::size_t>(std::clamp(hi, 0.0, double(n[a])));
    }

    const int ss = supersample;
    const double inv_count = 1.0 / double(ss * ss * ss);
    double total = 0.0;
    for (std::size_t k = first[2]; k < last[2]; ++k)
        for (std::size_t j = first[1]; j < last[1]; ++j)
            for (std::size_t i = first[0]; i < last[0]; ++i) {
                int inside = 0;
                for (int c = 0; c < ss; ++c)
                    for (int b = 0; b < ss; ++b)
                        for (int a = 0; a < ss; ++a) {
                            const Vec3 p{grid.origin[0] + (double(i) + (a + 0.5) / ss) * d[0] - shift[0],
                                         grid.origin[1] + (double(j) + (b + 0.5) / ss) * d[1] - shift[1],
                                         grid.origin[2] + (double(k) + (c + 0.5) / ss) * d[2] - shift[2]};
                            if (spec.contains(p)) ++inside;
                        }
                const double v = spec.tracer_value * inside * inv_count;
                out.volume.at(i, j, k) = v;
                total += v;
            }
    out.phantom_outside_grid = total == 0.0;
    out.volume.mark_nonnegative();
    return out;
}

void OperatorModel::validate() const {
    if (kind == OperatorKind::spectral) {
        if (!(spectral.beta > 0.0)) throw ConfigError("operator: spectral beta must be > 0");
        if (!(spectral.scale > 0.0)) throw ConfigError("operator: spectral scale must be > 0");
        if (spectral.frequencies_per_coil < 1) throw ConfigError("operator: frequencies_per_coil must be >= 1");
    } else {
        const auto& r = langevin.frequency_ratios;
        for (int f : r)
            if (f < 1) throw ConfigError("operator: Lissajous frequency ratios must be positive integers");
        if (std::gcd(r[0], r[1]) != 1 || std::gcd(r[0], r[2]) != 1 || std::gcd(r[1], r[2]) != 1) {
            throw ConfigError("operator: Lissajous frequency ratios must be pairwise coprime");
        }
        if (!(langevin.kappa >= 0.0)) throw ConfigError("operator: kappa must be >= 0");
        if (langevin.samples_per_period < 8) throw ConfigError("operator: samples_per_period must be >= 8");
        if (langevin.max_frequency < 1 || 2 * langevin.max_frequency >= langevin.samples_per_period) {
            throw ConfigError("operator: max_frequency must be in [1, samples_per_period/2)");
        }
    }
}

Vec3 langevin_magnetization(const Vec3& H, double kappa) {
    const double h = std::sqrt(dot(H, H));
    const double s = kappa * h;
    double f;  // 3 L(s) / s
    if (s < 1e-3) {
        const double s2 = s * s;
        f = 1.0 - s2 / 15.0 + 2.0 * s2 * s2 / 315.0;
    } else {
        f = 3.0 * (1.0 / std::tanh(s) - 1.0 / s) / s;
    }
    return {H[0] * f, H[1] * f, H[2] * f};
}

namespace {

// First r orthonormal 3D DCT-II atoms ordered by physical frequency.
Matrix dct_atoms(const GridSpec& grid, Eigen::Index r) {
    const auto& d = grid.dims;
    const Vec3 vs = grid.voxel_size();
    struct Atom {
        std::size_t kx, ky, kz;
        double freq2;
    };
    std::vector<Atom> atoms;
    atoms.reserve(d.size());
    for (std::size_t kz = 0; kz < d.nz; ++kz)
        for (std::size_t ky = 0; ky < d.ny; ++ky)
            for (std::size_t kx = 0; kx < d.nx; ++kx) {
                const double fx = double(kx) / (double(d.nx) * vs[0]);
                const double fy = double(ky) / (double(d.ny) * vs[1]);
                const double fz = double(kz) / (double(d.nz) * vs[2]);
                atoms.push_back({kx, ky, kz, fx * fx + fy * fy + fz * fz});
            }
    std::stable_sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.freq2 < b.freq2; });

    auto basis1d = [](std::size_t n, std::size_t k) {
        Vector b(static_cast<Eigen::Index>(n));
        const double c = k == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
        for (std::size_t i = 0; i < n; ++i) b[Eigen::Index(i)] = c * std::cos(std::numbers::pi * double(k) * (i + 0.5) / double(n));
        return b;
    };

    Matrix C(static_cast<Eigen::Index>(d.size()), r);
    for (Eigen::Index col = 0; col < r; ++col) {
        const auto& a = atoms[static_cast<std::size_t>(col)];
        const Vector bx = basis1d(d.nx, a.kx), by = basis1d(d.ny, a.ky), bz = basis1d(d.nz, a.kz);
        Eigen::Index idx = 0;
        for (std::size_t k = 0; k < d.nz; ++k)
            for (std::size_t j = 0; j < d.ny; ++j)
                for (std::size_t i = 0; i < d.nx; ++i) C(idx++, col) = bx[Eigen::Index(i)] * by[Eigen::Index(j)] * bz[Eigen::Index(k)];
    }
    return C;
}

std::vector<RowLabel> stacked_labels(int coils, std::size_t first_freq, std::size_t count) {
    std::vector<RowLabel> labels;
    labels.reserve(std::size_t(coils) * count * 2);
    for (int l = 0; l < coils; ++l)
        for (Part part : {Part::re, Part::im})
            for (std::size_t j = 0; j < count; ++j) labels.push_back({l, int(first_freq + j), part});
    return labels;
}

Vector smooth_pattern(Eigen::Index m, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    constexpr int order = 4;
    std::array<double, order + 1> a{}, b{};
    for (int k = 0; k <= order; ++k) {
        a[std::size_t(k)] = gauss(rng);
        b[std::size_t(k)] = gauss(rng);
    }
    Vector p(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        double v = 0.0;
        for (int k = 0; k <= order; ++k) {
            const double w = 2.0 * std::numbers::pi * k * double(i) / double(m);
            v += (a[std::size_t(k)] * std::cos(w) + b[std::size_t(k)] * std::sin(w)) / (1.0 + k);
        }
        p[i] = v;
    }
    return p;
}

Matrix spectral_rows(const SpectralParams& sp, const GridSpec& grid, Eigen::Index m_raw, std::mt19937_64& rng) {
    const Eigen::Index n = static_cast<Eigen::Index>(grid.dims.size());
    const Eigen::Index r = std::min(m_raw, n);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Matrix G(m_raw, r);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = gauss(rng);
    const Matrix U = orthonormalize(G);

    // Mildly mixed low-frequency DCT atoms: leading right singular vectors stay smooth.
    Matrix mix = Matrix::Identity(r, r);
    const double eps = 0.3 / std::sqrt(double(r));
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] += eps * gauss(rng);
    const Matrix V = orthonormalize(dct_atoms(grid, r) * mix);

    Vector s(r);
    for (Eigen::Index k = 0; k < r; ++k) s[k] = sp.scale * std::pow(double(k + 1), -sp.beta);
    return U * s.asDiagonal() * V.transpose();
}

Matrix langevin_rows(const LangevinParams& lp, const GridSpec& grid, int coils) {
    const std::size_t ns = lp.samples_per_period;
    const std::size_t nf = lp.max_frequency;
    const auto& d = grid.dims;
    const Vec3 vs = grid.voxel_size();
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    const Eigen::Index m_raw = Eigen::Index(2 * coils) * Eigen::Index(nf);

    // Twiddles: e^{-i 2 pi j t_n} for j = 1..nf.
    const auto rows_f = static_cast<Eigen::Index>(nf), cols_t = static_cast<Eigen::Index>(ns);
    Matrix cosj(rows_f, cols_t), sinj(rows_f, cols_t);
    for (std::size_t j = 1; j <= nf; ++j)
        for (std::size_t t = 0; t < ns; ++t) {
            const double w = 2.0 * std::numbers::pi * double((j * t) % ns) / double(ns);
            cosj(Eigen::Index(j - 1), Eigen::Index(t)) = std::cos(w);
            sinj(Eigen::Index(j - 1), Eigen::Index(t)) = -std::sin(w);
        }
    std::array<Vector, 3> drive;
    for (int a = 0; a < 3; ++a) {
        drive[std::size_t(a)].resize(Eigen::Index(ns));
        for (std::size_t t = 0; t < ns; ++t) {
            const double w = 2.0 * std::numbers::pi * double((std::size_t(lp.frequency_ratios[std::size_t(a)]) * t) % ns) / double(ns);
            drive[std::size_t(a)][Eigen::Index(t)] = lp.drive_amplitude_mT[std::size_t(a)] * std::sin(w);
        }
    }

    Matrix S(m_raw, n);
    Matrix mt(3, Eigen::Index(ns));
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < d.nz; ++k)
        for (std::size_t j = 0; j < d.ny; ++j)
            for (std::size_t i = 0; i < d.nx; ++i, ++col) {
                const Vec3 x{grid.origin[0] + (i + 0.5) * vs[0], grid.origin[1] + (j + 0.5) * vs[1],
                             grid.origin[2] + (k + 0.5) * vs[2]};
                for (std::size_t t = 0; t < ns; ++t) {
                    Vec3 H;
                    for (int a = 0; a < 3; ++a)
                        H[std::size_t(a)] = lp.gradient_T_per_m[std::size_t(a)] * x[std::size_t(a)] - drive[std::size_t(a)][Eigen::Index(t)];
                    const Vec3 m = langevin_magnetization(H, lp.kappa);
                    for (int a = 0; a < 3; ++a) mt(a, Eigen::Index(t)) = m[std::size_t(a)];
                }
                // <dm/dt, psi_j> = (-1)^j (i 2 pi j) mhat_j with mhat_j the DFT mean.
                for (int l = 0; l < coils; ++l) {
                    const Vector re = cosj * mt.row(l).transpose() / double(ns);
                    const Vector im = sinj * mt.row(l).transpose() / double(ns);
                    const Eigen::Index base = Eigen::Index(l) * 2 * Eigen::Index(nf);
                    for (std::size_t jj = 0; jj < nf; ++jj) {
                        const double freq = double(jj + 1);
                        const double sign = ((jj + 1) % 2 == 0) ? 1.0 : -1.0;
                        const double w = 2.0 * std::numbers::pi * freq;
                        // (i w)(re + i im) = -w im + i w re
                        S(base + Eigen::Index(jj), col) = sign * (-w * im[Eigen::Index(jj)]);
                        S(base + Eigen::Index(nf + jj), col) = sign * (w * re[Eigen::Index(jj)]);
                    }
                }
            }
    return S;
}

}  // namespace

RawDataset synth_operator(const OperatorModel& model, const GridSpec& grid, int coils, std::uint64_t seed) {
    model.validate();
    grid.validate();
    if (coils < 1) throw ConfigError("synth_operator: coils must be >= 1");

    RawDataset ds;
    ds.grid = grid;
    ds.seed = seed;
    std::mt19937_64 rng(seed);

    if (model.kind == OperatorKind::spectral) {
        const auto& sp = model.spectral;
        ds.row_labels = stacked_labels(coils, sp.first_frequency, sp.frequencies_per_coil);
        ds.system_rows = spectral_rows(sp, grid, Eigen::Index(ds.row_labels.size()), rng);
    } else {
        if (coils > 3) {
            throw ConfigError("synth_operator: langevin trajectory supports 1 to 3 receive coils, got " +
                              std::to_string(coils));
        }
        ds.row_labels = stacked_labels(coils, 1, model.langevin.max_frequency);
        ds.system_rows = langevin_rows(model.langevin, grid, coils);
    }
    ds.background_pattern = smooth_pattern(ds.system_rows.rows(), rng);
    ds.provenance = operator_to_json(model).dump();
    return ds;
}

RawDataset synth_measurement(const RawDataset& ds, const Volume& phantom, const Vector& noise_sigma_per_row,
                             const MeasurementOptions& opts, std::uint64_t seed) {
    const Eigen::Index m = ds.system_rows.rows();
    if (phantom.dims != ds.grid.dims) {
        throw DimensionError("synth_measurement: phantom is " + to_string(phantom.dims) + " but grid is " +
                             to_string(ds.grid.dims));
    }
    if (noise_sigma_per_row.size() != m) {
        throw DimensionError("synth_measurement: noise sigma has length " + std::to_string(noise_sigma_per_row.size()) +
                             ", expected " + std::to_string(m));
    }
    if ((noise_sigma_per_row.array() < 0.0).any()) throw ConfigError("synth_measurement: negative noise sigma");
    if (opts.background_count < 2) throw ConfigError("synth_measurement: need at least 2 background samples");
    if (ds.background_pattern.size() != m) throw DimensionError("synth_measurement: dataset has no background pattern");

    RawDataset out = ds;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const Vector clean = ds.system_rows * phantom.values;
    const Vector bg = opts.background_scale * ds.background_pattern;
    out.measurement.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) out.measurement[i] = clean[i] + bg[i] + noise_sigma_per_row[i] * gauss(rng);

    const auto b = static_cast<Eigen::Index>(opts.background_count);
    out.background_samples.resize(b, m);
    for (Eigen::Index s = 0; s < b; ++s)
        for (Eigen::Index i = 0; i < m; ++i) out.background_samples(s, i) = bg[i] + noise_sigma_per_row[i] * gauss(rng);
    out.background = out.background_samples.colwise().mean().transpose();

    out.noise_sigma = noise_sigma_per_row;
    out.snr_per_row.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double signal = std::abs(clean[i]);
        const double sigma = noise_sigma_per_row[i];
        out.snr_per_row[i] = sigma > 0.0 ? signal / sigma : (signal > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    }
    out.seed = seed;
    return out;
}

double noise_sigma_for_snr(const RawDataset& ds, const Volume& phantom, double snr_db) {
    const Vector clean = matvec(ds.system_rows, phantom.values);
    const double ratio = std::pow(10.0, snr_db / 20.0);
    return clean.norm() / (ratio * std::sqrt(double(clean.size())));
}

bool RawDataset::operator==(const RawDataset& o) const {
    auto same = [](const auto& a, const auto& b) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
        return a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
    };
    return same(system_rows, o.system_rows) && row_labels == o.row_labels && same(measurement, o.measurement) &&
           same(background, o.background) && same(background_samples, o.background_samples) &&
           same(background_pattern, o.background_pattern) && same(noise_sigma, o.noise_sigma) &&
           same(snr_per_row, o.snr_per_row) && grid == o.grid && seed == o.seed && provenance == o.provenance;
}

void save_dataset(const RawDataset& ds, const std::string& dir) {
    ContainerWriter w(dir, "raw_dataset");
    w.add("system_rows", ds.system_rows);
    std::vector<double> labels;
    labels.reserve(ds.row_labels.size() * 3);
    for (const auto& l : ds.row_labels) {
        labels.push_back(l.coil);
        labels.push_back(l.frequency);
        labels.push_back(static_cast<double>(l.part));
    }
    w.add("row_labels", labels, {ds.row_labels.size(), 3});
    w.add("measurement", ds.measurement);
    w.add("background", ds.background);
    w.add("background_samples", ds.background_samples);
    w.add("background_pattern", ds.background_pattern);
    w.add("noise_sigma", ds.noise_sigma);
    w.add("snr_per_row", ds.snr_per_row);
    w.metadata()["grid"] = grid_to_json(ds.grid);
    w.metadata()["seed"] = ds.seed;
    w.metadata()["provenance"] = ds.provenance;
    w.finish();
}

RawDataset load_dataset(const std::string& dir) {
    ContainerReader r(dir);
    if (r.kind() != "raw_dataset") throw DataError(dir + ": container holds '" + r.kind() + "', not a raw dataset");
    RawDataset ds;
    ds.system_rows = r.matrix("system_rows");
    const auto labels = r.raw("row_labels");
    if (labels.size() != std::size_t(ds.system_rows.rows()) * 3) throw DataError(dir + ": row_labels length mismatch");
    for (std::size_t i = 0; i + 2 < labels.size(); i += 3) {
        ds.row_labels.push_back({int(labels[i]), int(labels[i + 1]), labels[i + 2] == 0.0 ? Part::re : Part::im});
    }
    ds.measurement = r.vector("measurement");
    ds.background = r.vector("background");
    ds.background_samples = r.matrix("background_samples");
    ds.background_pattern = r.vector("background_pattern");
    ds.noise_sigma = r.vector("noise_sigma");
    ds.snr_per_row = r.vector("snr_per_row");
    try {
        ds.grid = grid_from_json(r.metadata().at("grid"));
        ds.seed = r.metadata().at("seed").get<std::uint64_t>();
        ds.provenance = r.metadata().value("provenance", std::string{});
    } catch (const json::exception& e) {
        throw DataError(dir + ": bad dataset metadata: " + e.what());
    }
    return ds;
}

}  // namespace mpibench
