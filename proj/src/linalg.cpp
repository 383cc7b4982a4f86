#include "mpibench/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace mpibench {

std::string to_string(const Dims3& d) {
    std::ostringstream os;
    os << d.nx << "x" << d.ny << "x" << d.nz;
    return os.str();
}

Volume::Volume(Dims3 d, std::array<double, 3> voxel)
    : dims(d), values(Vector::Zero(static_cast<Eigen::Index>(d.size()))), voxel_size(voxel) {}

Volume::Volume(Dims3 d, Vector v, std::array<double, 3> voxel)
    : dims(d), values(std::move(v)), voxel_size(voxel) {
    if (static_cast<std::size_t>(values.size()) != dims.size()) {
        throw DimensionError("volume " + to_string(dims) + " needs " + std::to_string(dims.size()) +
                             " values, got " + std::to_string(values.size()));
    }
}

void Volume::mark_nonnegative() {
    if (values.size() > 0 && values.minCoeff() < 0.0) {
        throw Error("volume has negative entries and cannot be flagged nonnegative");
    }
    nonnegative = true;
}

Matrix SvdFactors::reconstruct() const { return U * S.asDiagonal() * V.transpose(); }

Vector matvec(const Matrix& A, const Vector& x) {
    if (A.cols() != x.size()) {
        std::ostringstream os;
        os << "matvec: matrix is " << A.rows() << "x" << A.cols() << " but vector has length " << x.size();
        throw DimensionError(os.str());
    }
    return A * x;
}

bool all_finite(const Matrix& A) { return A.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

Matrix orthonormalize(const Matrix& Y) {
    const Eigen::Index m = Y.rows();
    const Eigen::Index n = std::min(Y.rows(), Y.cols());
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
    return Q;
}

namespace {

// Fills columns of U whose singular value is negligible with unit vectors
// orthogonal to the already accepted columns (modified Gram-Schmidt, twice).
void complete_basis(Eigen::MatrixXd& U, const std::vector<bool>& valid) {
    const Eigen::Index m = U.rows();
    Eigen::Index next_canonical = 0;
    for (Eigen::Index j = 0; j < U.cols(); ++j) {
        if (valid[static_cast<std::size_t>(j)]) continue;
        bool placed = false;
        while (!placed && next_canonical < m) {
            Eigen::VectorXd e = Eigen::VectorXd::Unit(m, next_canonical++);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index k = 0; k < U.cols(); ++k) {
                    if (k == j || (!valid[static_cast<std::size_t>(k)] && k > j)) continue;
                    e -= U.col(k).dot(e) * U.col(k);
                }
            }
            const double nrm = e.norm();
            if (nrm > 1e-8) {
                U.col(j) = e / nrm;
                placed = true;
            }
        }
    }
}

struct JacobiResult {
    Eigen::MatrixXd U;
    Eigen::VectorXd S;
    Eigen::MatrixXd V;
};

// One-sided Jacobi on a matrix with rows >= cols.
JacobiResult jacobi_tall(Eigen::MatrixXd G) {
    constexpr double tol = 1e-12;
    constexpr int max_sweeps = 100;
    const Eigen::Index n = G.cols();
    Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n);

    int sweep = 0;
    for (;; ++sweep) {
        if (sweep == max_sweeps) {
            throw ConvergenceError("exact_svd: one-sided Jacobi did not converge in " +
                                       std::to_string(max_sweeps) + " sweeps",
                                   static_cast<std::size_t>(max_sweeps));
        }
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = G.col(p).squaredNorm();
                const double beta = G.col(q).squaredNorm();
                const double gamma = G.col(p).dot(G.col(q));
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < G.rows(); ++i) {
                    const double gp = G(i, p), gq = G(i, q);
                    G(i, p) = c * gp - s * gq;
                    G(i, q) = s * gp + c * gq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double vp = V(i, p), vq = V(i, q);
                    V(i, p) = c * vp - s * vq;
                    V(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    Eigen::VectorXd S(n);
    for (Eigen::Index j = 0; j < n; ++j) S[j] = G.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return S[a] > S[b]; });

    JacobiResult out;
    out.U.resize(G.rows(), n);
    out.S.resize(n);
    out.V.resize(n, n);
    const double smax = n > 0 ? S[order[0]] : 0.0;
    const double cutoff = smax * 1e-13 * static_cast<double>(std::max<Eigen::Index>(n, 1));
    std::vector<bool> valid(static_cast<std::size_t>(n), false);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index j = order[static_cast<std::size_t>(k)];
        out.S[k] = S[j];
        out.V.col(k) = V.col(j);
        if (S[j] > cutoff && S[j] > 0.0) {
            out.U.col(k) = G.col(j) / S[j];
            valid[static_cast<std::size_t>(k)] = true;
        } else {
            out.U.col(k).setZero();
        }
    }
    complete_basis(out.U, valid);
    return out;
}

JacobiResult svd_tall(const Eigen::MatrixXd& A) {
    // rows >= cols; reduce to the square triangular factor first.
    if (A.rows() == A.cols()) return jacobi_tall(A);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    const Eigen::Index n = A.cols();
    Eigen::MatrixXd R = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    JacobiResult small = jacobi_tall(R);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), n);
    small.U = Q * small.U;
    return small;
}

}  // namespace

SvdFactors exact_svd(const Matrix& A) {
    if (!A.allFinite()) throw Error("exact_svd: matrix has non-finite entries");
    SvdFactors out;
    if (A.rows() == 0 || A.cols() == 0) {
        out.U.resize(A.rows(), 0);
        out.S.resize(0);
        out.V.resize(A.cols(), 0);
        return out;
    }
    if (A.rows() >= A.cols()) {
        JacobiResult r = svd_tall(Eigen::MatrixXd(A));
        out.U = r.U;
        out.S = r.S;
        out.V = r.V;
    } else {
        JacobiResult r = svd_tall(Eigen::MatrixXd(A.transpose()));
        out.U = r.V;
        out.S = r.S;
        out.V = r.U;
    }
    return out;
}

SvdFactors rsvd(const Matrix& A, Eigen::Index K, const RsvdOptions& opts) {
    const Eigen::Index min_dim = std::min(A.rows(), A.cols());
    if (K < 1 || K > min_dim) {
        throw ConfigError("rsvd: rank " + std::to_string(K) + " outside [1, " + std::to_string(min_dim) + "]");
    }
    if (opts.oversample < 0 || opts.power_iters < 0) throw ConfigError("rsvd: negative oversample or power_iters");
    const Eigen::Index l = std::min(K + opts.oversample, min_dim);

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix omega(A.cols(), l);
    for (Eigen::Index j = 0; j < l; ++j)
        for (Eigen::Index i = 0; i < A.cols(); ++i) omega(i, j) = gauss(rng);

    Matrix Q = orthonormalize(A * omega);
    for (int it = 0; it < opts.power_iters; ++it) {
        Matrix Z = orthonormalize(A.transpose() * Q);
        Q = orthonormalize(A * Z);
    }
    Matrix B = Q.transpose() * A;
    SvdFactors small = exact_svd(B);

    SvdFactors out;
    out.U = (Q * small.U).leftCols(K);
    out.S = small.S.head(K);
    out.V = small.V.leftCols(K);
    return out;
}

Vector soft_shrink(const Vector& x, double threshold) {
    if (!(threshold >= 0.0)) throw ConfigError("soft_shrink: threshold must be >= 0, got " + std::to_string(threshold));
    Vector out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (v > threshold)
            out[i] = v - threshold;
        else if (v < -threshold)
            out[i] = v + threshold;
        else
            out[i] = 0.0;
    }
    return out;
}

Vector project_nonneg(const Vector& x) { return x.cwiseMax(0.0); }

}  // namespace mpibench
