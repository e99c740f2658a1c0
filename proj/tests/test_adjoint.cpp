#include "doctest.h"
#include "support.hpp"

#include "dkf/adjoint.hpp"
#include "dkf/benchmarks.hpp"
#include "dkf/inversion.hpp"

#include <cmath>
#include <sstream>

using namespace dkf;

namespace {

std::vector<Vector> random_rhs(Rng& rng, std::size_t nt, Eigen::Index blk) {
    std::vector<Vector> g;
    for (std::size_t k = 0; k < nt; ++k) g.push_back(test::random_vector(rng, blk));
    return g;
}

// central FD of r_k w.r.t. entries of y_{k-1}
Matrix fd_prev(const StepModel& s, const Vector& z, const Vector& x, const Matrix& P, const StepTrace& t, bool wrt_P,
               double h = 1e-6) {
    const auto n = s.nx();
    Matrix out(n + n * n, wrt_P ? n * n : n);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        Vector xa = x, xb = x;
        Matrix Pa = P, Pb = P;
        if (wrt_P) {
            Pa.data()[j] += h;
            Pb.data()[j] -= h;
        } else {
            xa(j) += h;
            xb(j) -= h;
        }
        out.col(j) = (step_residual(s, z, xa, Pa, t.x_post, t.P_post) - step_residual(s, z, xb, Pb, t.x_post, t.P_post)) /
                     (2 * h);
    }
    return out;
}

}  // namespace

TEST_CASE("block_xx_prev limits") {
    Rng rng(1);
    auto in = test::random_instance(rng, 3, 3, 1);
    const auto& s = in.model.steps[0];
    CHECK(block_xx_prev(s, Matrix::Zero(3, 3)) == -s.F);
    StepModel t = s;
    t.H = Matrix::Identity(3, 3);
    CHECK(block_xx_prev(t, Matrix::Identity(3, 3)).isZero(0.0));
    CHECK_THROWS_AS(block_xx_prev(s, Matrix::Zero(2, 3)), DimensionMismatch);
}

TEST_CASE("analytic blocks match central differences on random instances") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        const auto nx = 1 + static_cast<Eigen::Index>(seed % 3);
        auto in = test::random_instance(rng, nx, 1 + static_cast<Eigen::Index>(seed % 2), 3);
        auto tr = run_filter(in.model, in.obs);
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& s = in.model.steps[k];
            const auto& t = tr.steps[k];
            Matrix dx = fd_prev(s, in.obs[k], tr.x_prev(k), tr.P_prev(k), t, false);
            Matrix dP = fd_prev(s, in.obs[k], tr.x_prev(k), tr.P_prev(k), t, true);
            CHECK((block_xx_prev(s, t.K) - dx.topRows(nx)).cwiseAbs().maxCoeff() < 1e-6);
            CHECK(dx.bottomRows(nx * nx).cwiseAbs().maxCoeff() < 1e-9);  // (P,x) block is zero
            CHECK((block_xP_prev(s, t) - dP.topRows(nx)).norm() < 1e-5);
            CHECK((block_PP_prev(s, t) - dP.bottomRows(nx * nx)).norm() < 1e-5);
        }
    }
}

TEST_CASE("block_xP_prev vanishes with zero innovation") {
    Rng rng(2);
    auto in = test::random_instance(rng, 2, 1, 1);
    auto tr = run_filter(in.model, in.obs);
    auto t = tr.steps[0];
    t.innovation.setZero();
    CHECK(block_xP_prev(in.model.steps[0], t).isZero(0.0));
}

TEST_CASE("scalar closed forms") {
    StepModel s;
    s.F = Matrix::Constant(1, 1, 0.9);
    s.B = Matrix::Zero(1, 1);
    s.u = Vector::Zero(1);
    s.f = Vector::Zero(1);
    s.H = Matrix::Constant(1, 1, 1.3);
    s.Q = Matrix::Constant(1, 1, 0.2);
    s.R = Matrix::Constant(1, 1, 0.5);
    GaussianState prev{Vector::Constant(1, 0.4), Matrix::Constant(1, 1, 0.7)};
    auto t = filter_step(prev, s, Vector::Constant(1, 1.1));
    const double F = 0.9, H = 1.3, S = t.S(0, 0), K = t.K(0, 0), nu = t.innovation(0), Pp = t.P_pred(0, 0);
    CHECK(block_xP_prev(s, t)(0, 0) == doctest::Approx(-nu / S * H * (1 - K * H) * F * F).epsilon(1e-12));
    CHECK(block_PP_prev(s, t)(0, 0) == doctest::Approx((Pp * H / S * H - 1) * F * (1 - K * H) * F).epsilon(1e-12));
}

TEST_CASE("PP block in the no-update limit") {
    Rng rng(3);
    auto in = test::random_instance(rng, 2, 1, 1);
    in.model.steps[0].R = Matrix::Constant(1, 1, 1e14);
    auto tr = run_filter(in.model, in.obs);
    const Matrix& F = in.model.steps[0].F;
    CHECK((block_PP_prev(in.model.steps[0], tr.steps[0]) + kron(F, F)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("solve_adjoint: single step and homogeneous system") {
    Rng rng(4);
    auto in = test::random_instance(rng, 2, 1, 1);
    auto tr = run_filter(in.model, in.obs);
    auto g = random_rhs(rng, 1, 6);
    CHECK(solve_adjoint(tr, in.model, g).psi[0] == g[0]);

    auto in3 = test::random_instance(rng, 2, 1, 4);
    auto tr3 = run_filter(in3.model, in3.obs);
    std::vector<Vector> zero(4, Vector::Zero(6));
    for (const auto& p : solve_adjoint(tr3, in3.model, zero).psi) CHECK(p.isZero(0.0));
}

TEST_CASE("backward recursion equals the dense stacked solve") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(200 + seed);
        const auto nx = 1 + static_cast<Eigen::Index>(seed % 3);
        const auto nt = 1 + static_cast<std::size_t>(seed % 5);
        auto in = test::random_instance(rng, nx, 1, nt);
        auto tr = run_filter(in.model, in.obs);
        const auto blk = nx + nx * nx;
        auto g = random_rhs(rng, nt, blk);
        Vector gs(static_cast<Eigen::Index>(nt) * blk);
        for (std::size_t k = 0; k < nt; ++k) gs.segment(static_cast<Eigen::Index>(k) * blk, blk) = g[k];
        for (auto treatment : {GainTreatment::coupled, GainTreatment::frozen}) {
            Vector dense = test::dense_jacobian(tr, in.model, treatment).transpose().fullPivLu().solve(gs);
            auto sol = solve_adjoint(tr, in.model, g, treatment);
            for (std::size_t k = 0; k < nt; ++k) {
                Vector ref = dense.segment(static_cast<Eigen::Index>(k) * blk, blk);
                CHECK((sol.psi[k] - ref).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, ref.norm()));
            }
        }
    }
}

TEST_CASE("gradient is stationary at an exact fit") {
    RocketConfig cfg;
    cfg.sigma = 0.0;
    cfg.p0 = 0.0;
    auto run = rocket_truth(cfg);
    DesignVars d = TiedTransition{rocket_true_F(cfg.dt)};
    auto model = build_model(d, rocket_model(cfg, Matrix::Identity(2, 2)));
    auto tr = run_filter(model, run.noisy);
    CHECK(loss(tr, model, run.noisy, LossMode::plain) < 1e-20);
    auto slots = gradient(tr, model, run.noisy, d, {});
    REQUIRE(slots.size() == 4);
    double n2 = 0;
    for (const auto& s : slots) n2 += s.value * s.value;
    CHECK(std::sqrt(n2) < 1e-8);
    CHECK(slots[2].id == "F(0,1)");
}

namespace {

double pipeline_loss(const DesignVars& d, const ModelSequence& base, const ObservationSeq& obs, LossMode mode,
                     const std::vector<Matrix>* w, const GainSchedule* gains = nullptr) {
    auto m = build_model(d, base);
    return loss(run_filter(m, obs, gains), m, obs, mode, w);
}

}  // namespace

TEST_CASE("tied and per-step gradients match end-to-end differences") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(300 + seed);
        const auto nx = 1 + static_cast<Eigen::Index>(seed % 3);
        auto in = test::random_instance(rng, nx, 1, 6);
        std::vector<DesignVars> designs{TiedTransition{in.model.steps[0].F}, PerStepTransition{{}}};
        for (const auto& s : in.model.steps) std::get<PerStepTransition>(designs[1]).F.push_back(s.F);
        for (auto& d : designs) {
            for (auto mode : {LossMode::plain, LossMode::whitened}) {
                auto model = build_model(d, in.model);
                auto tr = run_filter(model, in.obs);
                auto w = whitening_weights(tr);
                Vector g = gradient_flat(tr, model, in.obs, d, {mode, GainTreatment::coupled, &w});
                auto f = [&](const Vector& th) {
                    DesignVars e = d;
                    set_flat(e, th);
                    return pipeline_loss(e, in.model, in.obs, mode, &w);
                };
                CHECK(test::rel_error(g, test::fd_gradient(f, to_flat(d))) < 1e-6);
            }
        }
    }
}

TEST_CASE("frozen-gain gradient matches differences of the frozen pipeline") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(400 + seed);
        auto in = test::random_instance(rng, 2, 1, 6);
        DesignVars d = TiedTransition{in.model.steps[0].F};
        auto model = build_model(d, in.model);
        auto tr = run_filter(model, in.obs);
        auto gains = gains_of(tr);
        auto w = whitening_weights(tr);
        for (auto mode : {LossMode::plain, LossMode::whitened}) {
            auto ftr = run_filter(model, in.obs, &gains);
            Vector g = gradient_flat(ftr, model, in.obs, d, {mode, GainTreatment::frozen, &w});
            auto f = [&](const Vector& th) {
                DesignVars e = d;
                set_flat(e, th);
                return pipeline_loss(e, in.model, in.obs, mode, &w, &gains);
            };
            CHECK(test::rel_error(g, test::fd_gradient(f, to_flat(d))) < 1e-6);
        }
    }
}

TEST_CASE("table gradient directional derivative") {
    for (auto form : {DiffusionForm::pointwise, DiffusionForm::face}) {
        Rng rng(500);
        DiffusivityTable t;
        t.geometry = {4, 2.0, 0.01};
        t.form = form;
        t.grid = uniform_grid(0.0, 1.0, 5);
        t.values = Vector::Constant(5, 0.2) + test::random_vector(rng, 5, 0.05);
        ModelSequence base;
        base.initial = {test::random_vector(rng, 4, 0.5).array() + 0.5, 0.01 * Matrix::Identity(4, 4)};
        StepModel s;
        s.B = Matrix::Zero(4, 0);
        s.u = Vector::Zero(0);
        s.f = Vector::Zero(4);
        s.H = Matrix::Identity(4, 4).topRows(2);
        s.Q = 1e-4 * Matrix::Identity(4, 4);
        s.R = 1e-3 * Matrix::Identity(2, 2);
        ObservationSeq obs;
        for (int k = 0; k < 5; ++k) {
            base.steps.push_back(s);
            t.linearization.push_back(test::random_vector(rng, 4, 0.5).array() + 0.5);
            obs.push_back(test::random_vector(rng, 2, 0.5).array() + 0.5);
        }
        DesignVars d = t;
        auto model = build_model(d, base);
        auto tr = run_filter(model, obs);
        auto w = whitening_weights(tr);
        Vector g = gradient_flat(tr, model, obs, d, {LossMode::whitened, GainTreatment::coupled, &w});
        Vector dir = test::random_vector(rng, 5);
        const double h = 1e-6;
        DesignVars a = d, b = d;
        set_flat(a, to_flat(d) + h * dir);
        set_flat(b, to_flat(d) - h * dir);
        const double fd = (pipeline_loss(a, base, obs, LossMode::whitened, &w) -
                           pipeline_loss(b, base, obs, LossMode::whitened, &w)) /
                          (2 * h);
        CHECK(std::abs(g.dot(dir) - fd) / std::abs(fd) < 1e-5);
    }
}

TEST_CASE("verify_blocks near-linear regime") {
    ModelSequence m;
    m.initial = {Vector::Ones(2), Matrix::Identity(2, 2)};
    StepModel s;
    s.F = Matrix::Identity(2, 2);
    s.B = Matrix::Zero(2, 1);
    s.u = Vector::Zero(1);
    s.f = Vector::Zero(2);
    s.H = Matrix::Identity(2, 2);
    s.Q = Matrix::Zero(2, 2);
    s.R = 1e12 * Matrix::Identity(2, 2);
    m.steps.assign(3, s);
    ObservationSeq obs(3, Vector::Constant(2, 0.5));
    // residual is affine to ~1e-12 here, so a coarse step avoids roundoff without truncation error
    auto rep = verify_blocks(m, obs, std::ldexp(1.0, -8));
    CHECK(rep.rows.size() == 15);
    for (const auto& b : block_names()) CHECK_MESSAGE(rep.max_error(b) < 1e-12, b);
}

TEST_CASE("verify_blocks csv") {
    RocketConfig cfg;
    cfg.nt = 1;
    auto run = rocket_truth(cfg);
    auto rep = verify_blocks(rocket_model(cfg, rocket_true_F(cfg.dt)), run.noisy, 1e-6);
    REQUIRE(rep.rows.size() == 5);
    std::ostringstream os;
    write_verification_csv(os, rep);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    CHECK(line == "k,block_name,frob_analytic_vs_fd1,frob_fd1_vs_fd2");
}
