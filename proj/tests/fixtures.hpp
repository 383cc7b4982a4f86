#pragma once

// Small seeded systems shared by the unit and acceptance tests.

#include <cmath>
#include <random>

#include "mpibench/linalg.hpp"
#include "mpibench/preprocess.hpp"
#include "mpibench/simdata.hpp"

namespace fixtures {

using mpibench::Matrix;
using mpibench::Vector;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix A(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) A(i, j) = g(rng);
    return A;
}

inline Vector gaussian_vector(Eigen::Index n, std::uint64_t seed) {
    return Vector(gaussian(n, 1, seed).col(0));
}

inline Vector uniform_vector(Eigen::Index n, double lo, double hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

/// Random orthonormal factors around a prescribed spectrum.
inline Matrix with_spectrum(Eigen::Index rows, Eigen::Index cols, const Vector& sigma, std::uint64_t seed) {
    const Eigen::Index r = sigma.size();
    const Matrix U = mpibench::orthonormalize(gaussian(rows, r, seed));
    const Matrix V = mpibench::orthonormalize(gaussian(cols, r, seed + 1));
    return U * sigma.asDiagonal() * V.transpose();
}

inline Vector power_spectrum(Eigen::Index r, double beta) {
    Vector s(r);
    for (Eigen::Index k = 0; k < r; ++k) s[k] = std::pow(double(k + 1), -beta);
    return s;
}

/// Grid whose voxel count equals cols, used to wrap bare matrices.
inline mpibench::GridSpec line_grid(std::size_t cols) {
    mpibench::GridSpec g;
    g.dims = {cols, 1, 1};
    g.fov = {double(cols), 1.0, 1.0};
    g.origin = {0.0, 0.0, 0.0};
    return g;
}

inline mpibench::GridSpec cube_grid(std::size_t n) {
    mpibench::GridSpec g;
    g.dims = {n, n, n};
    g.fov = {double(n), double(n), double(n)};
    g.origin = {-0.5 * double(n), -0.5 * double(n), -0.5 * double(n)};
    return g;
}

inline mpibench::ProcessedSystem system(Matrix A, Vector y) {
    const auto cols = std::size_t(A.cols());
    return mpibench::make_system(std::move(A), std::move(y), line_grid(cols));
}

/// (A^T A + rho I)^-1 A^T y by a dense factorization.
inline Vector tikhonov(const Matrix& A, const Vector& y, double rho) {
    const Eigen::MatrixXd G = A.transpose() * A + rho * Eigen::MatrixXd::Identity(A.cols(), A.cols());
    return G.ldlt().solve(Eigen::VectorXd(A.transpose() * y));
}

/// Strictly-interior least-squares fixture: orthonormal columns with mild scaling and a small
/// positive solution, so nonnegativity stays inactive and Adam-type steps of 1e-2 cover the
/// distance from zero within a few hundred iterations.
struct InteriorFixture {
    Matrix A;
    Vector y;
    Vector c_true;
};

inline InteriorFixture interior(std::uint64_t seed, double noise = 1e-3) {
    InteriorFixture f;
    f.A = mpibench::orthonormalize(gaussian(30, 10, seed)) * Vector::LinSpaced(10, 1.0, 1.5).asDiagonal();
    f.c_true = uniform_vector(10, 0.05, 0.1, seed + 50);
    f.y = f.A * f.c_true + noise * gaussian_vector(30, seed + 9);
    return f;
}

inline double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

}  // namespace fixtures
