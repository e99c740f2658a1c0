#include "dkf/numkit.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace dkf {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Vector vec(const Matrix& m) { return vec_view(m); }

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    require_dims(v.size() == rows * cols, "unvec: length != rows*cols");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix solve(const Matrix& a, const Matrix& b, double jitter) {
    require_dims(a.rows() == a.cols(), "solve: matrix not square");
    require_dims(a.rows() == b.rows(), "solve: rhs rows mismatch");
    const auto n = a.rows();
    if (n == 0) return Matrix(0, b.cols());
    Matrix work = a;
    if (jitter > 0.0) work.diagonal().array() += jitter * a.trace() / static_cast<double>(n);
    Eigen::PartialPivLU<Matrix> lu(work);
    const auto& u = lu.matrixLU();
    const double umax = u.diagonal().cwiseAbs().maxCoeff();
    const double umin = u.diagonal().cwiseAbs().minCoeff();
    const double tiny = std::numeric_limits<double>::epsilon() * static_cast<double>(n) *
                        std::max(work.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if (!(umax > 0.0) || umin <= tiny) throw SingularMatrix("solve: pivot below threshold");
    return lu.solve(b);
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix inv_sqrt_spd(const Matrix& s, double floor_rel) {
    require_dims(s.rows() == s.cols(), "inv_sqrt_spd: not square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
    if (es.info() != Eigen::Success) throw NotPd("inv_sqrt_spd: eigen-decomposition failed");
    Vector lam = es.eigenvalues();
    const double lmax = lam.maxCoeff();
    if (!(lmax > 0.0) || !std::isfinite(lmax)) throw NotPd("inv_sqrt_spd: no positive eigenvalue");
    const double floor = floor_rel * lmax;
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = 1.0 / std::sqrt(std::max(lam(i), floor));
    const Matrix& u = es.eigenvectors();
    return u * lam.asDiagonal() * u.transpose();
}

std::uint64_t Rng::mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    // 1 - u keeps the log argument in (0, 1]
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, const std::string& key) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return mix(seed ^ mix(h));
}

Rng Rng::derive(const std::string& key) const { return Rng(derive_seed(seed_, key)); }

Vector normal_sample(Rng& rng, const Vector& mean, const Matrix& cov) {
    require_dims(cov.rows() == mean.size() && cov.cols() == mean.size(), "normal_sample: cov shape");
    const auto n = mean.size();
    Vector xi(n);
    for (Eigen::Index i = 0; i < n; ++i) xi(i) = rng.normal();
    if (n == 0 || cov.isZero(0.0)) return mean;

    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return mean + llt.matrixL() * xi;

    // semidefinite: eigen factor with small negative eigenvalues clamped
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(cov));
    Vector lam = es.eigenvalues();
    const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    if (lam.minCoeff() < -1e-10 * scale) throw NotPsd("normal_sample: covariance not PSD");
    lam = lam.cwiseMax(0.0).cwiseSqrt();
    return mean + es.eigenvectors() * (lam.asDiagonal() * xi);
}

}  // namespace dkf
