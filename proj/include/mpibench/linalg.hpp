#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "mpibench/error.hpp"

namespace mpibench {

/// Dense row-major matrix. Rows are contiguous so row-action sweeps stream memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Dims3 {
    std::size_t nx = 0, ny = 0, nz = 0;

    std::size_t size() const noexcept { return nx * ny * nz; }
    bool operator==(const Dims3&) const = default;
};

std::string to_string(const Dims3& d);

/// 3D grid of values, x-fastest ordering.
struct Volume {
    Dims3 dims;
    Vector values;
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0};  // mm
    bool nonnegative = false;

    Volume() = default;
    Volume(Dims3 d, std::array<double, 3> voxel = {1.0, 1.0, 1.0});
    Volume(Dims3 d, Vector v, std::array<double, 3> voxel = {1.0, 1.0, 1.0});

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return i + dims.nx * (j + dims.ny * k);
    }
    double& at(std::size_t i, std::size_t j, std::size_t k) { return values[static_cast<Eigen::Index>(index(i, j, k))]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return values[static_cast<Eigen::Index>(index(i, j, k))];
    }
    std::size_t size() const noexcept { return dims.size(); }

    /// Sets the nonnegative flag after checking every value.
    void mark_nonnegative();
};

struct SvdFactors {
    Matrix U;  // M x K
    Vector S;  // K, nonincreasing
    Matrix V;  // N x K

    Eigen::Index rank() const noexcept { return S.size(); }
    Matrix reconstruct() const;
};

/// A*x with an explicit shape check.
Vector matvec(const Matrix& A, const Vector& x);

/// Thin SVD by one-sided Jacobi. Intended as an oracle; min(rows, cols) <= 512.
SvdFactors exact_svd(const Matrix& A);

struct RsvdOptions {
    Eigen::Index oversample = 10;
    int power_iters = 2;
    std::uint64_t seed = 0;
};

/// Randomized truncated SVD: Gaussian range sketch, power iterations with QR
/// re-orthonormalization, exact SVD of the projected matrix.
SvdFactors rsvd(const Matrix& A, Eigen::Index K, const RsvdOptions& opts = {});

Vector soft_shrink(const Vector& x, double threshold);
Vector project_nonneg(const Vector& x);

/// Matrix with orthonormal columns spanning the columns of Y.
Matrix orthonormalize(const Matrix& Y);

/// True when every entry is finite.
bool all_finite(const Matrix& A);
bool all_finite(const Vector& v);

}  // namespace mpibench
