#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "fixtures.hpp"
#include "mpibench/solvers.hpp"

using namespace mpibench;

namespace {

using fixtures::interior;
using fixtures::tikhonov;

std::vector<Eigen::Index> top_k(const Vector& v, std::size_t k) {
    std::vector<Eigen::Index> idx(std::size_t(v.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] > v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

void check_traces_equal(const SolverTrace& a, const SolverTrace& b) {
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        CHECK(a.checkpoints[i].iteration == b.checkpoints[i].iteration);
        CHECK(a.checkpoints[i].volume.values == b.checkpoints[i].volume.values);
        CHECK(a.checkpoints[i].fidelity == b.checkpoints[i].fidelity);
        CHECK(a.checkpoints[i].objective == b.checkpoints[i].objective);
    }
}

}  // namespace

TEST_CASE("checkpoint schedules") {
    const auto s = CheckpointSchedule::standard();
    CHECK(s.indices.front() == 1);
    CHECK(s.indices.back() == 20000);
    CHECK(s.indices.size() == 10 + 10 + 4 + 10 + 14 + 15 + 6 + 15);
    CHECK(s.contains(12));
    CHECK_FALSE(s.contains(11));
    CHECK(s.contains(175));
    CHECK(s.contains(2500));
    CHECK_FALSE(s.contains(5500));
    const auto k = CheckpointSchedule::standard(500);
    CHECK(k.indices.back() == 500);
    CHECK(k.indices == s.truncated(500).indices);
    CHECK(CheckpointSchedule::every(2, 7).indices == std::vector<std::size_t>{2, 4, 6, 7});
    CHECK_THROWS_AS((CheckpointSchedule{{3, 3}}.validate()), ConfigError);
    CHECK_THROWS_AS((CheckpointSchedule{{0, 2}}.validate()), ConfigError);
}

TEST_CASE("kaczmarz: single-row projection") {
    Matrix A(1, 2);
    A << 1, 0;
    Vector y(1);
    y << 2;
    const auto t = kaczmarz_l2(fixtures::system(A, y), 0.0, 1, CheckpointSchedule::single(1));
    REQUIRE(t.checkpoints.size() == 1);
    CHECK(t.checkpoints[0].volume.values == (Vector(2) << 2, 0).finished());
}

TEST_CASE("kaczmarz: consistent well-conditioned system") {
    const Matrix A = Matrix::Identity(5, 5) + 0.2 * fixtures::gaussian(5, 5, 1);
    const Vector c = fixtures::uniform_vector(5, 0.5, 2.0, 2);
    const auto t = kaczmarz_l2(fixtures::system(A, A * c), 0.0, 500, CheckpointSchedule::single(500));
    CHECK(fixtures::rel_err(t.final_checkpoint().volume.values, c) <= 1e-6);
}

TEST_CASE("kaczmarz: unconstrained limit is the Tikhonov solution") {
    const Matrix A = fixtures::gaussian(20, 30, 3);
    const Vector y = fixtures::gaussian_vector(20, 4);
    KaczmarzParams p;
    p.rho = 0.25;
    p.sweeps = 500;
    p.nonnegative = false;
    const auto t = kaczmarz(fixtures::system(A, y), p, CheckpointSchedule::single(500));
    CHECK(fixtures::rel_err(t.final_checkpoint().volume.values, tikhonov(A, y, 0.25)) <= 1e-6);
}

TEST_CASE("kaczmarz: augmented residual never grows across sweeps") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Matrix A = fixtures::gaussian(15, 25, seed);
        const Vector y = fixtures::gaussian_vector(15, seed + 20);
        KaczmarzParams p;
        p.rho = 0.1;
        p.sweeps = 60;
        p.nonnegative = false;
        p.track_residual = true;
        const auto t = kaczmarz(fixtures::system(A, y), p, CheckpointSchedule::single(60));
        REQUIRE(t.residual_history.size() == 60);
        for (std::size_t s = 1; s < t.residual_history.size(); ++s)
            CHECK(t.residual_history[s] <= t.residual_history[s - 1] + 1e-12);
    }
}

TEST_CASE("kaczmarz: common scaling of (A, y) leaves iterates unchanged when rho = 0") {
    const Matrix A = fixtures::gaussian(12, 20, 7);
    const Vector y = fixtures::gaussian_vector(12, 8);
    const auto sched = CheckpointSchedule::standard(100);
    const auto a = kaczmarz_l2(fixtures::system(A, y), 0.0, 100, sched);
    const auto b = kaczmarz_l2(fixtures::system(3.5 * A, 3.5 * y), 0.0, 100, sched);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        const Vector& va = a.checkpoints[i].volume.values;
        const Vector& vb = b.checkpoints[i].volume.values;
        CHECK((va - vb).norm() <= 1e-12 * std::max(1.0, va.norm()));
    }
    // With rho > 0 the invariance needs rho scaled by the square of the factor.
    const auto c = kaczmarz_l2(fixtures::system(A, y), 0.2, 100, sched);
    const auto d = kaczmarz_l2(fixtures::system(3.5 * A, 3.5 * y), 0.2 * 3.5 * 3.5, 100, sched);
    for (std::size_t i = 0; i < c.checkpoints.size(); ++i) {
        const Vector& vc = c.checkpoints[i].volume.values;
        CHECK((vc - d.checkpoints[i].volume.values).norm() <= 1e-12 * std::max(1.0, vc.norm()));
    }
}

TEST_CASE("kaczmarz: traces are nonnegative, deterministic and follow the schedule") {
    const Matrix A = fixtures::gaussian(10, 14, 9);
    const Vector y = fixtures::gaussian_vector(10, 10);
    const auto sys = fixtures::system(A, y);
    const auto sched = CheckpointSchedule::standard(500);
    const auto a = kaczmarz_l1l2(sys, 0.5, 0.01, 500, sched);
    const auto b = kaczmarz_l1l2(sys, 0.5, 0.01, 500, sched);
    check_traces_equal(a, b);
    std::vector<std::size_t> its;
    for (const auto& cp : a.checkpoints) {
        its.push_back(cp.iteration);
        CHECK(cp.volume.nonnegative);
        CHECK(cp.volume.values.minCoeff() >= 0.0);
    }
    CHECK(its == sched.indices);
    CHECK(its.back() == 500);
}

TEST_CASE("kaczmarz_l1l2 reductions") {
    const Matrix A = fixtures::gaussian(10, 14, 11);
    const Vector y = fixtures::gaussian_vector(10, 12);
    const auto sys = fixtures::system(A, y);
    const auto sched = CheckpointSchedule::standard(50);
    check_traces_equal(kaczmarz_l1l2(sys, 0.3, 0.0, 50, sched), kaczmarz_l2(sys, 0.3, 50, sched));

    // Threshold above any attainable magnitude: every checkpoint is zero.
    const double mean_norm2 = A.rowwise().squaredNorm().mean();
    const Vector reach = tikhonov(A, y, 0.3).cwiseAbs() + A.transpose() * y.cwiseAbs();
    const double huge = 1e3 * reach.maxCoeff() * (mean_norm2 + 0.3);
    for (const auto& cp : kaczmarz_l1l2(sys, 0.3, huge, 50, sched).checkpoints)
        CHECK(cp.volume.values.cwiseAbs().maxCoeff() == 0.0);

    check_traces_equal(kaczmarz_l1(sys, 0.2, 50, sched), kaczmarz_l1l2(sys, 0.0, 0.2, 50, sched));
}

TEST_CASE("kaczmarz_l1l2 recovers the support of a sparse phantom") {
    const Matrix A = fixtures::with_spectrum(40, 60, fixtures::power_spectrum(40, 0.5), 21);
    Vector truth = Vector::Zero(60);
    truth[7] = 1.0;
    truth[23] = 0.8;
    truth[51] = 0.6;
    const Vector y = A * truth + 0.01 * fixtures::gaussian_vector(40, 22);
    const std::vector<Eigen::Index> support{7, 23, 51};

    // Oracle: projected ISTA on 1/2||Ac - y||^2 + lambda ||c||_1, c >= 0.
    const double lambda = 0.01;
    const double L = exact_svd(A).S[0] * exact_svd(A).S[0];
    Vector c = Vector::Zero(60);
    for (int it = 0; it < 5000; ++it)
        c = project_nonneg(soft_shrink(c - A.transpose() * (A * c - y) / L, lambda / L));
    REQUIRE(top_k(c, 3) == support);

    const auto trace = kaczmarz_l1l2(fixtures::system(A, y), 1e-3, 3e-3, 500, CheckpointSchedule::standard(500));
    bool recovered = false;
    for (const auto& cp : trace.checkpoints) recovered = recovered || top_k(cp.volume.values, 3) == support;
    CHECK(recovered);
}

TEST_CASE("kaczmarz: zero rows are skipped and near-zero inconsistent rows raise the divergence flag") {
    Matrix A = Matrix::Zero(4, 3);
    A.topRows(3) = Matrix::Identity(3, 3);
    Vector y(4);
    y << 1, 1, 1, 5;
    const auto skipped = kaczmarz_l1(fixtures::system(A, y), 0.0, 3, CheckpointSchedule::single(3));
    CHECK(skipped.skipped_rows == 3);
    CHECK_FALSE(skipped.diverged);

    A(3, 0) = 1e-7;
    const Volume x0(GridSpec{{3, 1, 1}, {3, 1, 1}, {0, 0, 0}}.dims, Vector::Ones(3));
    auto sys = fixtures::system(A, y);
    const auto t = kaczmarz_l1(sys, 0.0, 3, CheckpointSchedule::single(3), x0);
    CHECK(t.diverged);
    CHECK_FALSE(t.events.empty());

    const auto stable = kaczmarz_l1(fixtures::system(Matrix::Identity(3, 3), Vector::Ones(3)), 0.0, 3,
                                    CheckpointSchedule::single(3), x0);
    CHECK_FALSE(stable.diverged);
}

TEST_CASE("select_rows_by_norm") {
    Matrix A(3, 2);
    A << 3, 0, 1, 0, 0, 2;
    Vector y(3);
    y << 10, 20, 30;
    const auto sys = fixtures::system(A, y);
    const auto kept = select_rows_by_norm(sys, 2);
    CHECK(kept.A == (Matrix(2, 2) << 3, 0, 0, 2).finished());
    CHECK(kept.y == (Vector(2) << 10, 30).finished());
    CHECK(select_rows_by_norm(sys, 3).A == A);
    CHECK_THROWS_AS(select_rows_by_norm(sys, 0), ConfigError);
    CHECK_THROWS_AS(select_rows_by_norm(sys, 4), ConfigError);

    // Ties keep the lower index.
    Matrix T(3, 1);
    T << 1, 1, 1;
    CHECK(select_rows_by_norm(fixtures::system(T, Vector::LinSpaced(3, 0, 2)), 2).y == (Vector(2) << 0, 1).finished());

    const auto big = fixtures::system(fixtures::gaussian(2000, 4, 5), fixtures::gaussian_vector(2000, 6));
    for (Eigen::Index k : {32, 64, 128, 256, 512, 1024}) CHECK(select_rows_by_norm(big, k).rows() == k);
}

TEST_CASE("var_solve matches the closed form on an interior fixture") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto f = interior(seed);
        VarParams p;
        p.penalty = {PenaltyKind::l2, 0.1};
        const auto t = var_solve(fixtures::system(f.A, f.y), p, CheckpointSchedule::single(500));
        const Vector ref = tikhonov(f.A, f.y, 0.1);
        REQUIRE(ref.minCoeff() > 0.0);
        CHECK(fixtures::rel_err(t.final_checkpoint().volume.values, ref) <= 1e-3);
    }
}

TEST_CASE("var_solve fits consistent data and descends on smooth problems") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto f = interior(seed, 0.0);
        VarParams p;
        p.penalty = {PenaltyKind::l2, 0.0};
        const auto t = var_solve(fixtures::system(f.A, f.y), p, CheckpointSchedule::every(1, 500));
        CHECK(t.final_checkpoint().fidelity <= 1e-6);
        for (std::size_t i = 50; i < t.checkpoints.size(); ++i)
            CHECK(t.checkpoints[i].objective <= t.checkpoints[i - 50].objective + 1e-9);
    }
}

TEST_CASE("var_solve penalty reductions, determinism and nonnegativity") {
    const Matrix A = fixtures::gaussian(12, 18, 30);
    const Vector y = fixtures::gaussian_vector(12, 31);
    const auto sys = fixtures::system(A, y);
    const auto sched = CheckpointSchedule::standard(200);
    auto run = [&](PenaltyKind kind, double lambda, double rho, int p = 2) {
        VarParams v;
        v.fidelity_p = p;
        v.penalty = {kind, lambda, rho};
        v.iterations = 200;
        return var_solve(sys, v, sched);
    };
    check_traces_equal(run(PenaltyKind::l1_plus_l2, 0.0, 0.3), run(PenaltyKind::l2, 0.3, 0.0));
    check_traces_equal(run(PenaltyKind::l1_plus_l2, 0.3, 0.0), run(PenaltyKind::l1, 0.3, 0.0));
    check_traces_equal(run(PenaltyKind::tv, 0.1, 0.0, 1), run(PenaltyKind::tv, 0.1, 0.0, 1));
    for (const auto& cp : run(PenaltyKind::l1, 0.05, 0.0, 1).checkpoints) CHECK(cp.volume.values.minCoeff() >= 0.0);
}

TEST_CASE("var_solve aborts on a non-finite objective") {
    Vector y = Vector::Ones(3);
    y[1] = std::numeric_limits<double>::quiet_NaN();
    VarParams p;
    try {
        var_solve(fixtures::system(Matrix::Identity(3, 3), y), p, CheckpointSchedule::single(10));
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(e.iteration() == 1);
    }
    p.lr = 0.0;
    CHECK_THROWS_AS(var_solve(fixtures::system(Matrix::Identity(3, 3), Vector::Ones(3)), p,
                              CheckpointSchedule::single(1)),
                    ConfigError);
}

TEST_CASE("tv_penalty") {
    Volume flat({4, 3, 2});
    flat.values.setConstant(7.0);
    const auto f = tv_penalty(flat, 1e-2);
    CHECK(f.value == 0.0);
    CHECK(f.gradient.values.cwiseAbs().maxCoeff() == 0.0);

    // Step of height h between x = 1 and x = 2 crosses ny*nz = 6 faces.
    Volume edge({4, 3, 2});
    const double h = 3.0;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 2; i < 4; ++i) edge.at(i, j, k) = h;
    CHECK(tv_penalty(edge, 1e-9).value == doctest::Approx(6.0 * h).epsilon(1e-8));

    Volume r({5, 5, 5}, fixtures::uniform_vector(125, 0.0, 1.0, 3));
    const auto g = tv_penalty(r, 1e-2);
    const double step = 1e-6;
    for (Eigen::Index i = 0; i < 125; i += 7) {
        Volume p = r, m = r;
        p.values[i] += step;
        m.values[i] -= step;
        const double fd = (tv_penalty(p, 1e-2).value - tv_penalty(m, 1e-2).value) / (2 * step);
        CHECK(std::abs(fd - g.gradient.values[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
    CHECK_THROWS_AS(tv_penalty(r, 0.0), ConfigError);
}

TEST_CASE("data_fidelity and trace serialization") {
    const Matrix A = Matrix::Identity(2, 2);
    const Vector y = (Vector(2) << 1, -2).finished();
    const auto sys = fixtures::system(A, y);
    CHECK(data_fidelity(sys, Vector::Zero(2), 1) == 3.0);
    CHECK(data_fidelity(sys, Vector::Zero(2), 2) == 2.5);

    const auto t = kaczmarz_l2(fixtures::system(fixtures::gaussian(6, 8, 1), fixtures::gaussian_vector(6, 2)), 0.1, 20,
                               CheckpointSchedule::standard(20));
    const auto dir = std::filesystem::temp_directory_path() / "mpibench_test_trace";
    std::filesystem::remove_all(dir);
    save_trace(t, dir.string());
    CHECK(std::filesystem::exists(dir / "summary.csv"));
    const auto back = load_trace(dir.string());
    CHECK(back.method == t.method);
    check_traces_equal(back, t);
    const std::string csv = trace_summary_csv(t);
    CHECK(csv.rfind("iteration,fidelity,objective\n", 0) == 0);
    std::filesystem::remove_all(dir);
}
