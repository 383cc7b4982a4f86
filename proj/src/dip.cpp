#include "mpibench/dip.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "mpibench/optim.hpp"

namespace mpibench {

using nlohmann::json;

void AutoencoderSpec::validate() const {
    if (encoder_channels.empty()) throw ConfigError("autoencoder: encoder_channels must be nonempty");
    for (auto c : encoder_channels)
        if (c == 0) throw ConfigError("autoencoder: channel counts must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("autoencoder: kernel must be odd and positive");
    if (downsample_factor != 2) throw ConfigError("autoencoder: only a downsample factor of 2 is supported");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("autoencoder: leaky slope must lie in [0, 1)");
    if (!(norm_eps > 0.0)) throw ConfigError("autoencoder: norm_eps must be > 0");
}

json AutoencoderSpec::to_json() const {
    return {{"encoder_channels", encoder_channels}, {"kernel", kernel},           {"downsample_factor", downsample_factor},
            {"leaky_slope", leaky_slope},           {"norm_eps", norm_eps},       {"seed", seed},
            {"normalization", "instance"},          {"final_activation", "relu"}, {"skip_connections", false}};
}

std::span<double> ParamVector::slice(const std::string& name) {
    for (const auto& l : layout)
        if (l.name == name) return {values.data() + l.offset, l.size};
    throw ConfigError("no parameter block named '" + name + "'");
}

std::span<const double> ParamVector::slice(const std::string& name) const {
    for (const auto& l : layout)
        if (l.name == name) return {values.data() + l.offset, l.size};
    throw ConfigError("no parameter block named '" + name + "'");
}

namespace {

Dims3 halve(Dims3 d) { return {(d.nx + 1) / 2, (d.ny + 1) / 2, (d.nz + 1) / 2}; }

// Output index range [lo, hi) along one axis for which the input index
// o*stride + kk - pad stays inside [0, n_in).
struct AxisRange {
    std::vector<long> lo, hi;
};

AxisRange axis_ranges(long n_in, long n_out, int k, int stride) {
    const long pad = (k - 1) / 2;
    AxisRange r;
    r.lo.resize(std::size_t(k));
    r.hi.resize(std::size_t(k));
    for (int kk = 0; kk < k; ++kk) {
        long lo = 0;
        while (lo < n_out && lo * stride + kk - pad < 0) ++lo;
        long hi = n_out;
        while (hi > lo && (hi - 1) * stride + kk - pad >= n_in) --hi;
        r.lo[std::size_t(kk)] = lo;
        r.hi[std::size_t(kk)] = hi;
    }
    return r;
}

struct ConvGeometry {
    long nx_in, ny_in, nz_in, nx_out, ny_out, nz_out;
    int k, stride;
    long pad;
    AxisRange rx, ry, rz;

    ConvGeometry(Dims3 in, Dims3 out, int kernel, int s)
        : nx_in(long(in.nx)), ny_in(long(in.ny)), nz_in(long(in.nz)), nx_out(long(out.nx)), ny_out(long(out.ny)),
          nz_out(long(out.nz)), k(kernel), stride(s), pad((kernel - 1) / 2),
          rx(axis_ranges(nx_in, nx_out, kernel, s)), ry(axis_ranges(ny_in, ny_out, kernel, s)),
          rz(axis_ranges(nz_in, nz_out, kernel, s)) {}
};

// Calls f(out_row, in_row, count, stride) for every valid (oz, oy) row segment of
// one kernel offset; in_row already points at the first contributing input.
template <class F>
void for_each_row(const ConvGeometry& g, int kz, int ky, int kx, F&& f) {
    const long xlo = g.rx.lo[std::size_t(kx)], xhi = g.rx.hi[std::size_t(kx)];
    if (xhi <= xlo) return;
    for (long oz = g.rz.lo[std::size_t(kz)]; oz < g.rz.hi[std::size_t(kz)]; ++oz) {
        const long iz = oz * g.stride + kz - g.pad;
        for (long oy = g.ry.lo[std::size_t(ky)]; oy < g.ry.hi[std::size_t(ky)]; ++oy) {
            const long iy = oy * g.stride + ky - g.pad;
            const long out_base = (oz * g.ny_out + oy) * g.nx_out + xlo;
            const long in_base = (iz * g.ny_in + iy) * g.nx_in + xlo * g.stride + kx - g.pad;
            f(out_base, in_base, xhi - xlo);
        }
    }
}

void conv_forward(const Tensor4& in, Tensor4& out, const double* w, const double* bias, const ConvGeometry& g) {
    const std::size_t cin = in.channels, cout = out.channels;
    const int k = g.k, s = g.stride;
    const std::size_t k3 = std::size_t(k * k * k);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        double* o = out.channel(oc).data();
        std::fill(o, o + out.dims.size(), bias ? bias[oc] : 0.0);
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* x = in.channel(ic).data();
            const double* wk = w + (oc * cin + ic) * k3;
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        if (wv == 0.0) continue;
                        for_each_row(g, kz, ky, kx, [&](long ob, long ib, long n) {
                            double* orow = o + ob;
                            const double* irow = x + ib;
                            if (s == 1) {
                                for (long t = 0; t < n; ++t) orow[t] += wv * irow[t];
                            } else {
                                for (long t = 0; t < n; ++t) orow[t] += wv * irow[t * s];
                            }
                        });
                    }
        }
    }
}

void conv_backward(const Tensor4& in, const Tensor4& gout, Tensor4& gin, const double* w, double* gw, double* gb,
                   const ConvGeometry& g) {
    const std::size_t cin = in.channels, cout = gout.channels;
    const int k = g.k, s = g.stride;
    const std::size_t k3 = std::size_t(k * k * k);
    std::fill(gin.values.begin(), gin.values.end(), 0.0);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* go = gout.channel(oc).data();
        if (gb) {
            double acc = 0.0;
            for (std::size_t i = 0; i < gout.dims.size(); ++i) acc += go[i];
            gb[oc] += acc;
        }
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* x = in.channel(ic).data();
            double* gx = gin.channel(ic).data();
            const double* wk = w + (oc * cin + ic) * k3;
            double* gwk = gw + (oc * cin + ic) * k3;
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        double acc = 0.0;
                        for_each_row(g, kz, ky, kx, [&](long ob, long ib, long n) {
                            const double* grow = go + ob;
                            const double* irow = x + ib;
                            double* girow = gx + ib;
                            if (s == 1) {
                                for (long t = 0; t < n; ++t) {
                                    acc += grow[t] * irow[t];
                                    girow[t] += wv * grow[t];
                                }
                            } else {
                                for (long t = 0; t < n; ++t) {
                                    acc += grow[t] * irow[t * s];
                                    girow[t * s] += wv * grow[t];
                                }
                            }
                        });
                        gwk[(kz * k + ky) * k + kx] += acc;
                    }
        }
    }
}

std::vector<std::size_t> nearest_map(std::size_t n_in, std::size_t n_out) {
    std::vector<std::size_t> m(n_out);
    for (std::size_t o = 0; o < n_out; ++o) m[o] = o * n_in / n_out;
    return m;
}

void check_finite(const Tensor4& t, const std::string& layer) {
    for (double v : t.values)
        if (!std::isfinite(v)) throw NumericalError("non-finite activation in layer " + layer, 0);
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

struct Autoencoder::Tape {
    std::vector<Tensor4> acts;                     // acts[i] is the input of op i
    std::vector<std::vector<double>> norm_xhat;    // per op (empty unless norm)
    std::vector<std::vector<double>> norm_inv_std; // per op, per channel
};

Autoencoder::Autoencoder(AutoencoderSpec spec, Dims3 input) : spec_(std::move(spec)) {
    spec_.validate();
    if (input.size() == 0) throw ConfigError("autoencoder: input has a zero dimension");
    stage_dims_.push_back(input);
    for (std::size_t s = 0; s < spec_.encoder_channels.size(); ++s) {
        const Dims3 d = stage_dims_.back();
        if (d.nx < 2 || d.ny < 2 || d.nz < 2) {
            throw ConfigError("autoencoder: encoder stage " + std::to_string(s + 1) + " input " + to_string(d) +
                              " cannot be downsampled further (spatial dim would reach 0)");
        }
        stage_dims_.push_back(halve(d));
    }

    std::size_t offset = 0;
    auto add_block = [&](const std::string& name, std::size_t size) {
        layout_.push_back({name, offset, size});
        offset += size;
        return offset - size;
    };
    const std::size_t k3 = std::size_t(spec_.kernel) * std::size_t(spec_.kernel) * std::size_t(spec_.kernel);
    auto add_conv = [&](const std::string& name, std::size_t cin, std::size_t cout, Dims3 din, Dims3 dout, int kernel,
                        int stride, bool bias) {
        Op op{OpKind::conv, name, cin, cout, din, dout, kernel, stride, bias};
        const std::size_t kk = std::size_t(kernel) * std::size_t(kernel) * std::size_t(kernel);
        op.weight_offset = add_block(name + ".weight", cout * cin * kk);
        if (bias) op.bias_offset = add_block(name + ".bias", cout);
        ops_.push_back(op);
    };
    auto add_norm_act = [&](const std::string& name, std::size_t c, Dims3 d) {
        Op norm{OpKind::norm, name + ".norm", c, c, d, d};
        norm.scale_offset = add_block(name + ".norm.scale", c);
        norm.offset_offset = add_block(name + ".norm.offset", c);
        ops_.push_back(norm);
        ops_.push_back(Op{OpKind::leaky, name + ".act", c, c, d, d});
    };
    (void)k3;

    const auto& ch = spec_.encoder_channels;
    const std::size_t stages = ch.size();
    std::size_t cin = 1;
    for (std::size_t s = 0; s < stages; ++s) {
        const std::string name = "enc" + std::to_string(s + 1);
        add_conv(name + ".conv", cin, ch[s], stage_dims_[s], stage_dims_[s + 1], spec_.kernel, 2, false);
        add_norm_act(name, ch[s], stage_dims_[s + 1]);
        cin = ch[s];
    }
    for (std::size_t s = stages; s >= 1; --s) {
        const std::string name = "dec" + std::to_string(s);
        const Dims3 from = stage_dims_[s], to = stage_dims_[s - 1];
        ops_.push_back(Op{OpKind::upsample, name + ".up", cin, cin, from, to});
        const std::size_t cout = s >= 2 ? ch[s - 2] : ch[0];
        add_conv(name + ".conv", cin, cout, to, to, spec_.kernel, 1, false);
        add_norm_act(name, cout, to);
        cin = cout;
    }
    add_conv("head.conv", cin, 1, stage_dims_[0], stage_dims_[0], 1, 1, true);
    ops_.push_back(Op{OpKind::relu, "head.act", 1, 1, stage_dims_[0], stage_dims_[0]});
    param_count_ = offset;
}

ParamVector Autoencoder::zero_params() const {
    ParamVector p;
    p.values.assign(param_count_, 0.0);
    p.layout = layout_;
    return p;
}

ParamVector Autoencoder::init_params() const {
    ParamVector p = zero_params();
    std::mt19937_64 rng(spec_.seed);
    for (const auto& op : ops_) {
        if (op.kind == OpKind::conv) {
            const double fan_in = double(op.in_channels) * op.kernel * op.kernel * op.kernel;
            std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
            const std::size_t nw = op.out_channels * op.in_channels * std::size_t(op.kernel * op.kernel * op.kernel);
            for (std::size_t i = 0; i < nw; ++i) p.values[op.weight_offset + i] = u(rng);
            if (op.bias)
                for (std::size_t i = 0; i < op.out_channels; ++i) p.values[op.bias_offset + i] = u(rng);
        } else if (op.kind == OpKind::norm) {
            for (std::size_t i = 0; i < op.out_channels; ++i) p.values[op.scale_offset + i] = 1.0;
        }
    }
    return p;
}

Volume Autoencoder::run_forward(const ParamVector& theta, const Tensor4& z, Tape* tape) const {
    if (theta.values.size() != param_count_) {
        throw DimensionError("autoencoder: parameter vector has " + std::to_string(theta.values.size()) +
                             " entries, expected " + std::to_string(param_count_));
    }
    if (z.channels != 1 || z.dims != stage_dims_.front()) {
        throw DimensionError("autoencoder: input must be (1, " + to_string(stage_dims_.front()) + "), got (" +
                             std::to_string(z.channels) + ", " + to_string(z.dims) + ")");
    }
    const double* th = theta.values.data();
    Tensor4 cur = z;
    if (tape) {
        tape->acts.clear();
        tape->norm_xhat.assign(ops_.size(), {});
        tape->norm_inv_std.assign(ops_.size(), {});
    }
    for (std::size_t oi = 0; oi < ops_.size(); ++oi) {
        const Op& op = ops_[oi];
        if (tape) tape->acts.push_back(cur);
        Tensor4 next(op.out_channels, op.out_dims);
        switch (op.kind) {
            case OpKind::conv: {
                const ConvGeometry g(op.in_dims, op.out_dims, op.kernel, op.stride);
                conv_forward(cur, next, th + op.weight_offset, op.bias ? th + op.bias_offset : nullptr, g);
                break;
            }
            case OpKind::norm: {
                const std::size_t n = op.in_dims.size();
                if (tape) {
                    tape->norm_xhat[oi].resize(cur.values.size());
                    tape->norm_inv_std[oi].resize(op.in_channels);
                }
                for (std::size_t c = 0; c < op.in_channels; ++c) {
                    auto x = cur.channel(c);
                    auto out = next.channel(c);
                    double mean = 0.0;
                    for (double v : x) mean += v;
                    mean /= double(n);
                    double var = 0.0;
                    for (double v : x) var += (v - mean) * (v - mean);
                    var /= double(n);
                    const double inv = 1.0 / std::sqrt(var + spec_.norm_eps);
                    const double gamma = th[op.scale_offset + c], beta = th[op.offset_offset + c];
                    for (std::size_t i = 0; i < n; ++i) {
                        const double xh = (x[i] - mean) * inv;
                        out[i] = gamma * xh + beta;
                        if (tape) tape->norm_xhat[oi][c * n + i] = xh;
                    }
                    if (tape) tape->norm_inv_std[oi][c] = inv;
                }
                break;
            }
            case OpKind::leaky:
                for (std::size_t i = 0; i < cur.values.size(); ++i) {
                    const double v = cur.values[i];
                    next.values[i] = v > 0.0 ? v : spec_.leaky_slope * v;
                }
                break;
            case OpKind::relu:
                for (std::size_t i = 0; i < cur.values.size(); ++i) next.values[i] = std::max(cur.values[i], 0.0);
                break;
            case OpKind::upsample: {
                const auto mx = nearest_map(op.in_dims.nx, op.out_dims.nx);
                const auto my = nearest_map(op.in_dims.ny, op.out_dims.ny);
                const auto mz = nearest_map(op.in_dims.nz, op.out_dims.nz);
                for (std::size_t c = 0; c < op.in_channels; ++c) {
                    auto x = cur.channel(c);
                    auto out = next.channel(c);
                    std::size_t o = 0;
                    for (std::size_t k = 0; k < op.out_dims.nz; ++k)
                        for (std::size_t j = 0; j < op.out_dims.ny; ++j)
                            for (std::size_t i = 0; i < op.out_dims.nx; ++i)
                                out[o++] = x[(mz[k] * op.in_dims.ny + my[j]) * op.in_dims.nx + mx[i]];
                }
                break;
            }
        }
        check_finite(next, op.name);
        cur = std::move(next);
    }
    const Dims3 d = stage_dims_.front();
    Volume out(d, Vector(Eigen::Map<const Vector>(cur.values.data(), Eigen::Index(cur.values.size()))));
    out.mark_nonnegative();
    return out;
}

Volume Autoencoder::forward(const ParamVector& theta, const Tensor4& z) const { return run_forward(theta, z, nullptr); }

double Autoencoder::loss_and_grad(const ParamVector& theta, const Tensor4& z, const ProcessedSystem& sys, int p,
                                  std::vector<double>& grad) const {
    if (p != 1 && p != 2) throw ConfigError("autoencoder loss: p must be 1 or 2");
    if (static_cast<std::size_t>(sys.A.cols()) != stage_dims_.front().size()) {
        throw DimensionError("autoencoder loss: system has " + std::to_string(sys.A.cols()) + " columns, network output " +
                             to_string(stage_dims_.front()));
    }
    Tape tape;
    const Volume phi = run_forward(theta, z, &tape);
    const Vector r = sys.A * phi.values - sys.y;
    double loss;
    Vector gphi;
    if (p == 1) {
        loss = r.lpNorm<1>();
        gphi = sys.A.transpose() * r.unaryExpr([](double v) { return sgn(v); });
    } else {
        loss = r.squaredNorm();
        gphi = 2.0 * (sys.A.transpose() * r);
    }
    if (!std::isfinite(loss)) throw NumericalError("autoencoder loss is not finite", 0);

    grad.assign(param_count_, 0.0);
    const double* th = theta.values.data();
    double* gth = grad.data();
    Tensor4 g(1, stage_dims_.front());
    std::copy(gphi.data(), gphi.data() + gphi.size(), g.values.begin());

    for (std::size_t oi = ops_.size(); oi-- > 0;) {
        const Op& op = ops_[oi];
        const Tensor4& in = tape.acts[oi];
        Tensor4 gin(op.in_channels, op.in_dims);
        switch (op.kind) {
            case OpKind::conv: {
                const ConvGeometry geo(op.in_dims, op.out_dims, op.kernel, op.stride);
                conv_backward(in, g, gin, th + op.weight_offset, gth + op.weight_offset,
                              op.bias ? gth + op.bias_offset : nullptr, geo);
                break;
            }
            case OpKind::norm: {
                const std::size_t n = op.in_dims.size();
                const auto& xhat = tape.norm_xhat[oi];
                for (std::size_t c = 0; c < op.in_channels; ++c) {
                    auto gy = g.channel(c);
                    auto gx = gin.channel(c);
                    const double gamma = th[op.scale_offset + c];
                    const double inv = tape.norm_inv_std[oi][c];
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        sum_g += gy[i];
                        sum_gx += gy[i] * xhat[c * n + i];
                    }
                    gth[op.offset_offset + c] += sum_g;
                    gth[op.scale_offset + c] += sum_gx;
                    // d/dx of gamma * xhat: inv/n * (n g - sum g - xhat sum(g xhat)), all scaled by gamma.
                    const double dn = double(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        gx[i] = gamma * inv / dn * (dn * gy[i] - sum_g - xhat[c * n + i] * sum_gx);
                    }
                }
                break;
            }
            case OpKind::leaky:
                for (std::size_t i = 0; i < in.values.size(); ++i)
                    gin.values[i] = in.values[i] > 0.0 ? g.values[i] : spec_.leaky_slope * g.values[i];
                break;
            case OpKind::relu:
                for (std::size_t i = 0; i < in.values.size(); ++i) gin.values[i] = in.values[i] > 0.0 ? g.values[i] : 0.0;
                break;
            case OpKind::upsample: {
                const auto mx = nearest_map(op.in_dims.nx, op.out_dims.nx);
                const auto my = nearest_map(op.in_dims.ny, op.out_dims.ny);
                const auto mz = nearest_map(op.in_dims.nz, op.out_dims.nz);
                for (std::size_t c = 0; c < op.in_channels; ++c) {
                    auto go = g.channel(c);
                    auto gi = gin.channel(c);
                    std::size_t o = 0;
                    for (std::size_t k = 0; k < op.out_dims.nz; ++k)
                        for (std::size_t j = 0; j < op.out_dims.ny; ++j)
                            for (std::size_t i = 0; i < op.out_dims.nx; ++i)
                                gi[(mz[k] * op.in_dims.ny + my[j]) * op.in_dims.nx + mx[i]] += go[o++];
                }
                break;
            }
        }
        check_finite(gin, op.name + " (backward)");
        g = std::move(gin);
    }
    for (double v : grad)
        if (!std::isfinite(v)) throw NumericalError("non-finite parameter gradient", 0);
    return loss;
}

NetworkBuild build_network(const AutoencoderSpec& spec, Dims3 input) {
    Autoencoder net(spec, input);
    return {net.init_params(), net.stage_dims()};
}

Volume forward(const ParamVector& theta, const Tensor4& z, const AutoencoderSpec& spec) {
    return Autoencoder(spec, z.dims).forward(theta, z);
}

LossGrad grad_theta(const ParamVector& theta, const Tensor4& z, const ProcessedSystem& sys, int p,
                    const AutoencoderSpec& spec) {
    Autoencoder net(spec, z.dims);
    LossGrad out;
    out.grad.layout = theta.layout;
    out.loss = net.loss_and_grad(theta, z, sys, p, out.grad.values);
    return out;
}

void DipConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("dip: learning rate must be > 0");
    if (iterations < 1) throw ConfigError("dip: iterations must be >= 1");
    if (fidelity_p != 1 && fidelity_p != 2) throw ConfigError("dip: fidelity p must be 1 or 2");
    if (!(input_high > 0.0)) throw ConfigError("dip: input range must be positive");
    schedule.validate();
}

Tensor4 sample_input(Dims3 dims, double high, std::uint64_t seed) {
    Tensor4 z(1, dims);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, high);
    for (auto& v : z.values) v = u(rng);
    return z;
}

SolverTrace dip_reconstruct(const ProcessedSystem& sys, const DipConfig& cfg, const AutoencoderSpec& spec) {
    cfg.validate();
    const Autoencoder net(spec, sys.grid.dims);
    ParamVector theta = net.init_params();
    const Tensor4 z = sample_input(sys.grid.dims, cfg.input_high, cfg.seed);
    Adam opt(theta.size(), {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, false});

    SolverTrace trace;
    trace.method = "DIP-Dl" + std::to_string(cfg.fidelity_p);
    trace.config = {{"lr", cfg.lr},         {"iterations", cfg.iterations}, {"betas", {cfg.beta1, cfg.beta2}},
                    {"fidelity_p", cfg.fidelity_p}, {"input_range", {0.0, cfg.input_high}}, {"seed", cfg.seed},
                    {"optimizer", "adam"},  {"network", spec.to_json()},    {"parameters", theta.size()}};

    const auto start = std::chrono::steady_clock::now();
    std::vector<double> grad;
    auto next = cfg.schedule.indices.begin();
    const Vec3 vs = sys.grid.voxel_size();
    for (std::size_t t = 1; t <= cfg.iterations && next != cfg.schedule.indices.end(); ++t) {
        net.loss_and_grad(theta, z, sys, cfg.fidelity_p, grad);
        opt.step(theta.values, grad);
        if (t == *next) {
            Checkpoint cp;
            cp.iteration = t;
            cp.volume = net.forward(theta, z);
            cp.volume.voxel_size = {vs[0], vs[1], vs[2]};
            const Vector r = sys.A * cp.volume.values - sys.y;
            cp.fidelity = cfg.fidelity_p == 1 ? r.lpNorm<1>() : r.squaredNorm();
            cp.objective = cp.fidelity;
            cp.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            trace.checkpoints.push_back(std::move(cp));
            ++next;
        }
    }
    return trace;
}

Vector homogeneous_map(const Vector& theta, double p, double tau) {
    if (!(p >= 1.0)) throw ConfigError("homogeneous map: p must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("homogeneous map: tau must be > 0");
    const double norm = std::pow(theta.array().abs().pow(p).sum(), 1.0 / p);
    if (!(norm > 0.0)) throw NumericalError("homogeneous map undefined at theta = 0", 0);
    return (std::pow(tau, 1.0 / p) / norm) * theta;
}

SolverTrace homogeneous_dip(const ProcessedSystem& sys, double p, double tau, std::size_t iters, double lr,
                            std::uint64_t seed, const CheckpointSchedule* schedule) {
    if (!(p >= 1.0)) throw ConfigError("homogeneous_dip: p must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("homogeneous_dip: tau must be > 0");
    if (!(lr > 0.0)) throw ConfigError("homogeneous_dip: learning rate must be > 0");
    if (iters < 1) throw ConfigError("homogeneous_dip: iterations must be >= 1");
    const CheckpointSchedule sched = schedule ? *schedule : CheckpointSchedule::every(1, iters);
    sched.validate();

    const Eigen::Index n = sys.A.cols();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&] {
        Vector t(n);
        for (Eigen::Index i = 0; i < n; ++i) t[i] = gauss(rng);
        return t;
    };
    Vector theta = draw();
    Adam opt(std::size_t(n), {lr, 0.9, 0.999, 1e-8, false});
    const double root_tau = std::pow(tau, 1.0 / p);
    const Vec3 vs = sys.grid.voxel_size();

    SolverTrace trace;
    trace.method = "DIP-homogeneous";
    trace.config = {{"p", p}, {"tau", tau}, {"iterations", iters}, {"lr", lr}, {"seed", seed}};

    auto lp_norm = [&](const Vector& v) { return std::pow(v.array().abs().pow(p).sum(), 1.0 / p); };
    auto next = sched.indices.begin();
    for (std::size_t t = 1; t <= iters && next != sched.indices.end(); ++t) {
        double norm = lp_norm(theta);
        while (!(norm > 0.0)) {
            trace.events.push_back("theta vanished at iteration " + std::to_string(t) + "; reinitialized");
            theta = draw();
            norm = lp_norm(theta);
        }
        const double scale = root_tau / norm;
        const Vector c = scale * theta;
        const Vector r = sys.A * c - sys.y;
        const Vector gc = 2.0 * (sys.A.transpose() * r);
        // d||theta||_p / d theta_j = |theta_j|^(p-1) sign(theta_j) / ||theta||_p^(p-1)
        const Vector dnorm =
            theta.unaryExpr([&](double v) { return std::pow(std::abs(v), p - 1.0) * sgn(v); }) / std::pow(norm, p - 1.0);
        const Vector grad = scale * gc - (scale / norm) * theta.dot(gc) * dnorm;
        if (!grad.allFinite()) throw NumericalError("homogeneous_dip: non-finite gradient", t);
        opt.step({theta.data(), std::size_t(n)}, {grad.data(), std::size_t(n)});

        if (t == *next) {
            double nn = lp_norm(theta);
            if (!(nn > 0.0)) {
                trace.events.push_back("theta vanished after iteration " + std::to_string(t) + "; reinitialized");
                theta = draw();
                nn = lp_norm(theta);
            }
            const Vector ct = (root_tau / nn) * theta;
            Checkpoint cp;
            cp.iteration = t;
            cp.volume = Volume(sys.grid.dims, ct, {vs[0], vs[1], vs[2]});
            cp.fidelity = (sys.A * ct - sys.y).squaredNorm();
            cp.objective = cp.fidelity;
            trace.checkpoints.push_back(std::move(cp));
            ++next;
        }
    }
    return trace;
}

}  // namespace mpibench
