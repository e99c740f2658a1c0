#pragma once

#include "dkf/adjoint.hpp"
#include "dkf/kalman.hpp"
#include "dkf/numkit.hpp"

#include <functional>

namespace dkf::test {

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.uniform(-1.0, 1.0);
    return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
    return random_matrix(rng, n, 1, scale).col(0);
}

inline Matrix random_spd(Rng& rng, Eigen::Index n, double scale = 1.0, double floor = 0.1) {
    Matrix a = random_matrix(rng, n, n);
    return scale * (a * a.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n));
}

struct Instance {
    ModelSequence model;
    ObservationSeq obs;
};

// small well-conditioned filter problem with observations from a perturbed copy of the model
inline Instance random_instance(Rng& rng, Eigen::Index nx, Eigen::Index nz, std::size_t nt) {
    Instance in;
    in.model.initial = {random_vector(rng, nx), random_spd(rng, nx, 0.5)};
    for (std::size_t k = 0; k < nt; ++k) {
        StepModel s;
        s.F = Matrix::Identity(nx, nx) + random_matrix(rng, nx, nx, 0.3);
        s.B = random_matrix(rng, nx, 1, 0.5);
        s.u = random_vector(rng, 1);
        s.f = random_vector(rng, nx, 0.2);
        s.H = random_matrix(rng, nz, nx);
        s.H.diagonal().array() += 1.0;
        s.Q = random_spd(rng, nx, 0.1);
        s.R = random_spd(rng, nz, 0.2);
        in.model.steps.push_back(s);
    }
    Vector x = in.model.initial.x;
    for (std::size_t k = 0; k < nt; ++k) {
        const auto& s = in.model.steps[k];
        x = (s.F + random_matrix(rng, nx, nx, 0.1)) * x + s.B * s.u + s.f;
        in.obs.push_back(s.H * x + random_vector(rng, nz, 0.3));
    }
    return in;
}

// central differences of a scalar function of a vector
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-6) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector a = x, b = x;
        a(i) += h;
        b(i) -= h;
        g(i) = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

inline double rel_error(const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// dense stacked Jacobian of the residual w.r.t. all y_k, built from the explicit blocks
inline Matrix dense_jacobian(const FilterTrace& tr, const ModelSequence& m, GainTreatment treatment) {
    const auto n = m.nx();
    const auto blk = n + n * n;
    const auto nt = static_cast<Eigen::Index>(m.nt());
    Matrix J = Matrix::Identity(nt * blk, nt * blk);
    for (Eigen::Index k = 1; k < nt; ++k) {
        const auto& s = m.steps[static_cast<std::size_t>(k)];
        const auto& t = tr.steps[static_cast<std::size_t>(k)];
        Matrix A = Matrix::Zero(blk, blk);
        A.topLeftCorner(n, n) = block_xx_prev(s, t.K);
        if (treatment == GainTreatment::coupled) {
            A.topRightCorner(n, n * n) = block_xP_prev(s, t);
            A.bottomRightCorner(n * n, n * n) = block_PP_prev(s, t);
        } else {
            A.bottomRightCorner(n * n, n * n) = block_PP_prev_frozen(s, t.K);
        }
        J.block(k * blk, (k - 1) * blk, blk, blk) = A;
    }
    return J;
}

}  // namespace dkf::test
