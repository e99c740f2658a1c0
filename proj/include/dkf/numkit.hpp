#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dkf {

// Column-major everywhere, so vec() of a matrix is a view over its storage.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct SingularMatrix : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotPsd : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotPd : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Matrix kron(const Matrix& a, const Matrix& b);

Vector vec(const Matrix& m);
inline Eigen::Map<const Vector> vec_view(const Matrix& m) {
    return {m.data(), m.size()};
}
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

// LU with partial pivoting. jitter > 0 adds jitter * trace(a)/n to the diagonal first.
Matrix solve(const Matrix& a, const Matrix& b, double jitter = 0.0);

Matrix symmetrize(const Matrix& m);

// Symmetric inverse square root via eigen-decomposition; eigenvalues below
// floor_rel * lambda_max are clamped to that floor. Throws NotPd if lambda_max <= 0.
Matrix inv_sqrt_spd(const Matrix& s, double floor_rel = 1e-14);

bool all_finite(const Matrix& m);
void require_dims(bool ok, const std::string& what);

// SplitMix64 in counter mode: draw i is mix(seed + (i+1) * 0x9E3779B97F4A7C15).
// State is only (seed, counter), so streams are reproducible on every platform.
class Rng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr const char* kAlgorithm = "splitmix64-ctr";

    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();
    // uniform in [0, 1) with 53 random bits
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Box-Muller, one draw per call (the sine branch is discarded).
    double normal();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    // Independent child stream keyed by a label (FNV-1a of the label mixed with the seed).
    Rng derive(const std::string& key) const;
    static std::uint64_t derive_seed(std::uint64_t seed, const std::string& key);
    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

Vector normal_sample(Rng& rng, const Vector& mean, const Matrix& cov);

}  // namespace dkf
