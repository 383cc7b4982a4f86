#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "dip_gradcheck.hpp"
#include "fixtures.hpp"
#include "mpibench/dip.hpp"
#include "mpibench/error.hpp"
#include "mpibench/optim.hpp"

using namespace mpibench;

namespace {

AutoencoderSpec small_spec(std::vector<std::size_t> channels, std::uint64_t seed = 0) {
    AutoencoderSpec s;
    s.encoder_channels = std::move(channels);
    s.seed = seed;
    return s;
}

// Parameters moved off their trivial initial norm scales/offsets so every block is exercised.
ParamVector jittered(const Autoencoder& net, std::uint64_t seed) {
    ParamVector theta = net.init_params();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.02, 0.02);
    for (auto& v : theta.values) v += u(rng);
    return theta;
}

ProcessedSystem random_system(Dims3 dims, Eigen::Index rows, std::uint64_t seed) {
    GridSpec g = fixtures::cube_grid(dims.nx);
    Matrix A = fixtures::gaussian(rows, Eigen::Index(dims.size()), seed);
    Vector y = fixtures::gaussian_vector(rows, seed + 1);
    return make_system(std::move(A), std::move(y), g);
}

}  // namespace

TEST_CASE("stage dims halve with ceiling") {
    const auto build = build_network(small_spec({64, 128, 256}), {19, 19, 19});
    REQUIRE(build.stage_dims.size() == 4);
    CHECK(build.stage_dims[1] == Dims3{10, 10, 10});
    CHECK(build.stage_dims[2] == Dims3{5, 5, 5});
    CHECK(build.stage_dims[3] == Dims3{3, 3, 3});

    const auto tiny = build_network(small_spec({2}), {4, 4, 4});
    REQUIRE(tiny.stage_dims.size() == 2);
    CHECK(tiny.stage_dims[1] == Dims3{2, 2, 2});
}

TEST_CASE("collapsing stage is rejected") {
    CHECK_THROWS_AS(build_network(small_spec({2, 2}), {2, 2, 2}), ConfigError);
    CHECK_THROWS_AS(build_network(small_spec({}), {4, 4, 4}), ConfigError);
}

TEST_CASE("initialization is seed deterministic") {
    const auto a = build_network(small_spec({4, 8}, 7), {9, 9, 9});
    const auto b = build_network(small_spec({4, 8}, 7), {9, 9, 9});
    const auto c = build_network(small_spec({4, 8}, 8), {9, 9, 9});
    CHECK(a.params.values == b.params.values);
    CHECK(a.params.values != c.params.values);
    for (double v : a.params.slice("enc1.norm.scale")) CHECK(v == 1.0);
    for (double v : a.params.slice("enc1.norm.offset")) CHECK(v == 0.0);
    CHECK_THROWS_AS(a.params.slice("nope"), ConfigError);
}

TEST_CASE("forward output shape and zero parameters") {
    for (std::size_t n : {std::size_t(19), std::size_t(8)}) {
        const Dims3 d{n, n, n};
        const Autoencoder net(small_spec({2, 3, 4}), d);
        const Tensor4 z = sample_input(d, 0.7, 1);
        const Volume out = net.forward(net.init_params(), z);
        CHECK(out.dims == d);
        CHECK(out.values.minCoeff() >= 0.0);
        CHECK(out.values.allFinite());

        const Volume zero = net.forward(net.zero_params(), z);
        CHECK(zero.values.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("input sample is bounded and deterministic") {
    const Tensor4 a = sample_input({5, 6, 7}, 0.7, 3), b = sample_input({5, 6, 7}, 0.7, 3);
    CHECK(a.values == b.values);
    CHECK(a.channels == 1);
    for (double v : a.values) CHECK((v >= 0.0 && v <= 0.7));
}

TEST_CASE("gradient matches central differences on every layer") {
    struct Case {
        std::size_t n;
        std::vector<std::size_t> channels;
    };
    for (const Case& c : {Case{5, {4, 8}}, Case{9, {2, 3, 4}}}) {
        const Dims3 d{c.n, c.n, c.n};
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const Autoencoder net(small_spec(c.channels, seed), d);
            const ParamVector theta = jittered(net, seed + 10);
            const Tensor4 z = sample_input(d, 0.7, seed);
            const ProcessedSystem sys = random_system(d, 12, seed + 20);
            for (const auto& layer : fixtures::finite_difference_check(net, theta, z, sys, 2, 20, seed)) {
                INFO(c.n << " seed " << seed << " " << layer.layer);
                CHECK(layer.worst <= 1e-4);
            }
        }
    }
}

TEST_CASE("consistent measurement has zero loss and gradient") {
    const Dims3 d{5, 5, 5};
    const Autoencoder net(small_spec({3, 4}, 2), d);
    const ParamVector theta = net.init_params();
    const Tensor4 z = sample_input(d, 0.7, 2);
    Matrix A = fixtures::gaussian(10, 125, 3);
    const Vector y = A * net.forward(theta, z).values;
    const ProcessedSystem sys = make_system(A, y, fixtures::cube_grid(5));
    std::vector<double> grad;
    const double loss = net.loss_and_grad(theta, z, sys, 2, grad);
    CHECK(loss <= 1e-20);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    CHECK(gmax <= 1e-9);
}

TEST_CASE("l1 gradient scales with the measurement") {
    const Dims3 d{5, 5, 5};
    const Autoencoder net(small_spec({3, 4}, 4), d);
    const ParamVector theta = net.init_params();
    const Tensor4 z = sample_input(d, 0.7, 4);
    const ProcessedSystem sys = random_system(d, 15, 5);
    const ProcessedSystem doubled = make_system(2.0 * sys.A, 2.0 * sys.y, sys.grid);
    std::vector<double> g1, g2;
    const double l1 = net.loss_and_grad(theta, z, sys, 1, g1);
    const double l2 = net.loss_and_grad(theta, z, doubled, 1, g2);
    CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-12));
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("non-finite parameters name the failing layer") {
    const Dims3 d{5, 5, 5};
    const Autoencoder net(small_spec({2, 2}), d);
    ParamVector theta = net.init_params();
    theta.slice("enc2.conv.weight")[0] = std::numeric_limits<double>::quiet_NaN();
    const Tensor4 z = sample_input(d, 0.7, 0);
    try {
        (void)net.forward(theta, z);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("enc2.conv") != std::string::npos);
    }
}

TEST_CASE("first Adam step is bounded by the learning rate") {
    const Dims3 d{5, 5, 5};
    const ProcessedSystem sys = random_system(d, 12, 9);
    const AutoencoderSpec spec = small_spec({3, 4}, 1);
    DipConfig cfg;
    cfg.lr = 1e-3;
    cfg.iterations = 1;
    cfg.schedule = CheckpointSchedule::single(1);
    cfg.seed = 1;
    const SolverTrace trace = dip_reconstruct(sys, cfg, spec);
    REQUIRE(trace.checkpoints.size() == 1);

    // Replay the single step directly and compare against the Adam bound.
    const Autoencoder net(spec, d);
    const ParamVector theta0 = net.init_params();
    const Tensor4 z = sample_input(d, cfg.input_high, cfg.seed);
    std::vector<double> grad;
    net.loss_and_grad(theta0, z, sys, cfg.fidelity_p, grad);
    ParamVector theta1 = theta0;
    Adam opt(theta1.size(), {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, false});
    opt.step(theta1.values, grad);
    for (std::size_t i = 0; i < theta0.size(); ++i)
        CHECK(std::abs(theta1.values[i] - theta0.values[i]) <= cfg.lr * (1.0 + 1e-8));
    CHECK((net.forward(theta1, z).values - trace.final_checkpoint().volume.values).norm() == 0.0);
}

TEST_CASE("network overfits a noiseless underdetermined system") {
    const Dims3 d{5, 5, 5};
    const Matrix A = fixtures::gaussian(30, 125, 11);
    const Vector y = A * fixtures::uniform_vector(125, 0.0, 1.0, 12);
    const ProcessedSystem sys = make_system(A, y, fixtures::cube_grid(5));
    DipConfig cfg;
    cfg.fidelity_p = 2;
    cfg.iterations = 2000;
    cfg.schedule = CheckpointSchedule::every(500, 2000);
    const SolverTrace trace = dip_reconstruct(sys, cfg, small_spec({4, 8}, 1));
    CHECK(trace.method == "DIP-Dl2");
    CHECK(trace.checkpoints.size() == 4);
    CHECK(trace.final_checkpoint().fidelity <= 1e-6 * y.squaredNorm());
    CHECK(trace.final_checkpoint().volume.nonnegative);
}

TEST_CASE("reconstruction is deterministic") {
    const ProcessedSystem sys = random_system({5, 5, 5}, 12, 13);
    DipConfig cfg;
    cfg.iterations = 30;
    cfg.schedule = CheckpointSchedule::every(10, 30);
    const auto a = dip_reconstruct(sys, cfg, small_spec({2, 3}, 3));
    const auto b = dip_reconstruct(sys, cfg, small_spec({2, 3}, 3));
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        CHECK(a.checkpoints[i].volume.values == b.checkpoints[i].volume.values);
        CHECK(a.checkpoints[i].fidelity == b.checkpoints[i].fidelity);
    }
    CHECK(a.method == "DIP-Dl1");
}

TEST_CASE("invalid configuration is rejected") {
    const ProcessedSystem sys = random_system({5, 5, 5}, 12, 13);
    DipConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(dip_reconstruct(sys, cfg, small_spec({2})), ConfigError);
    cfg.lr = 1e-3;
    cfg.fidelity_p = 3;
    CHECK_THROWS_AS(dip_reconstruct(sys, cfg, small_spec({2})), ConfigError);
}

TEST_CASE("homogeneous map examples") {
    Vector theta(2);
    theta << 3.0, 4.0;
    const Vector c2 = homogeneous_map(theta, 2.0, 4.0);
    CHECK(c2[0] == doctest::Approx(1.2));
    CHECK(c2[1] == doctest::Approx(1.6));
    const Vector c1 = homogeneous_map(theta, 1.0, 1.0);
    CHECK(c1[0] == doctest::Approx(3.0 / 7.0));
    CHECK(c1[1] == doctest::Approx(4.0 / 7.0));
    CHECK_THROWS_AS(homogeneous_map(Vector::Zero(3), 2.0, 1.0), NumericalError);
    CHECK_THROWS_AS(homogeneous_map(theta, 0.5, 1.0), ConfigError);
    CHECK_THROWS_AS(homogeneous_map(theta, 2.0, 0.0), ConfigError);
}

TEST_CASE("homogeneous reconstruction stays on the norm sphere") {
    const ProcessedSystem sys = fixtures::system(fixtures::gaussian(8, 20, 3), fixtures::gaussian_vector(8, 4));
    for (double p : {1.0, 1.5, 2.0}) {
        const double tau = 2.5;
        const SolverTrace trace = homogeneous_dip(sys, p, tau, 200, 1e-2, 5);
        CHECK(trace.checkpoints.size() == 200);
        CHECK(trace.method == "DIP-homogeneous");
        for (const auto& cp : trace.checkpoints) {
            const double norm_p = cp.volume.values.array().abs().pow(p).sum();
            CHECK(std::abs(norm_p - tau) <= 1e-10 * tau);
        }
    }
}

TEST_CASE("homogeneous reconstruction finds the constrained minima on a circle") {
    // 2D: ||Ac - y||^2 restricted to ||c||_2 = r has two local minima here; brute force over angle finds both.
    Matrix A(3, 2);
    A << 1.0, 0.3, 0.2, 2.0, -0.5, 0.7;
    Vector y(3);
    y << 1.0, -0.4, 0.8;
    const double tau = 0.64;  // radius 0.8
    const ProcessedSystem sys = fixtures::system(A, y);

    const int samples = 200000;
    auto point = [](int k) {
        const double phi = 2.0 * M_PI * k / samples;
        return Vector(0.8 * Vector{{std::cos(phi), std::sin(phi)}});
    };
    auto f = [&](int k) { return (A * point((k + samples) % samples) - y).squaredNorm(); };
    std::vector<int> minima;
    for (int k = 0; k < samples; ++k)
        if (f(k) < f(k - 1) && f(k) <= f(k + 1)) minima.push_back(k);
    REQUIRE(minima.size() == 2);
    const int global = f(minima[0]) < f(minima[1]) ? minima[0] : minima[1];

    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const Checkpoint last = homogeneous_dip(sys, 2.0, tau, 3000, 1e-2, seed).final_checkpoint();
        CHECK_FALSE(last.volume.nonnegative);
        double dist = std::numeric_limits<double>::infinity();
        for (int k : minima) dist = std::min(dist, (last.volume.values - point(k)).norm());
        CHECK(dist <= 1e-4);
        best = std::min(best, last.fidelity);
    }
    CHECK(best == doctest::Approx(f(global)).epsilon(1e-8));
}
