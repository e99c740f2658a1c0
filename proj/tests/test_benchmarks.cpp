#include "doctest.h"
#include "support.hpp"

#include "dkf/benchmarks.hpp"

#include <sstream>

using namespace dkf;

TEST_CASE("rocket free drift") {
    RocketConfig cfg;
    cfg.thrust_accel = 0.0;
    cfg.g = 0.0;
    cfg.sigma = 0.0;
    cfg.x0 = (Vector(2) << 0.0, 1.0).finished();
    auto run = rocket_truth(cfg);
    REQUIRE(run.states.size() == 101);
    for (std::size_t k = 0; k < run.states.size(); ++k) {
        CHECK(run.states[k](0) == doctest::Approx(0.1 * static_cast<double>(k)).epsilon(1e-12));
        CHECK(run.states[k](1) == 1.0);
    }
}

TEST_CASE("rocket under gravity only") {
    RocketConfig cfg;
    cfg.thrust_accel = 0.0;
    cfg.sigma = 0.0;
    auto run = rocket_truth(cfg);
    for (std::size_t k = 1; k < run.states.size(); ++k)
        CHECK(run.states[k](1) - run.states[k - 1](1) == doctest::Approx(-9.81 * 0.1).epsilon(1e-12));
}

TEST_CASE("rocket truth replays its own recursion") {
    RocketConfig cfg;
    cfg.sigma = 0.0;
    auto run = rocket_truth(cfg);
    auto m = rocket_model(cfg, rocket_true_F(cfg.dt));
    for (std::size_t k = 0; k < m.nt(); ++k) {
        const auto& s = m.steps[k];
        CHECK((s.F * run.states[k] + s.B * s.u + s.f - run.states[k + 1]).cwiseAbs().maxCoeff() <= 1e-14);
        CHECK(s.u(0) == (static_cast<double>(k) * 0.1 < 4.0 ? 1.0 : 0.0));
    }
}

TEST_CASE("rocket noise is reproducible and recorded") {
    for (double sigma : {0.005, 0.025, 0.125}) {
        RocketConfig cfg;
        cfg.sigma = sigma;
        auto a = rocket_truth(cfg), b = rocket_truth(cfg);
        for (std::size_t k = 0; k < a.noisy.size(); ++k) {
            REQUIRE(a.noisy[k] == b.noisy[k]);
            REQUIRE(a.noisy[k] == a.clean[k] + a.noise[k]);
        }
        cfg.seed = 1;
        CHECK(rocket_truth(cfg).noisy[0] != a.noisy[0]);
    }
}

TEST_CASE("stripe initial condition") {
    AllenCahnConfig cfg;
    cfg.amplitude = 0.0;
    Rng rng(0);
    Vector v = ac_initial(cfg, rng);
    for (Eigen::Index i = 0; i < 16; ++i) CHECK(v(i) == (i % 2 == 0 ? 1.0 : 0.0));

    cfg.amplitude = 0.5;
    for (int t = 0; t < 50; ++t) {
        Vector w = ac_initial(cfg, rng);
        CHECK(w.minCoeff() >= 0.0);
        CHECK(w.maxCoeff() <= 1.0);
    }
}

TEST_CASE("default initial condition golden fixture") {
    const double golden[16] = {0.85579967990252226, 0.0443486759318521, 1, 0.091996323841832414,
                               0.89226761079515149, 0,                  0.97421327876997932, 0.15471482281794688,
                               1,                   0,                  0.82185667284962594, 0,
                               1,                   0.17445112479743885, 1,                  0};
    AllenCahnConfig cfg;
    auto run = ac_truth(cfg);
    for (Eigen::Index i = 0; i < 16; ++i) CHECK(run.states[0](i) == golden[i]);
    CHECK(ac_phase(cfg) == 4.7649843505923499);
}

TEST_CASE("Allen-Cahn fixed points") {
    AllenCahnConfig cfg;
    CHECK(ac_step_truth(Vector::Zero(16), cfg) == Vector::Zero(16));
    CHECK((ac_step_truth(Vector::Ones(16), cfg) - Vector::Ones(16)).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

Vector stepper(const Vector& v, double dt, int steps) {
    PdeGeometry g{16, 5.0, dt};
    Vector x = v;
    for (int i = 0; i < steps; ++i) x = ac_step_truth(x, g, true_diffusivity);
    return x;
}

}  // namespace

TEST_CASE("explicit Euler convergence orders") {
    AllenCahnConfig cfg;
    const Vector v0 = ac_truth(cfg).states[0];
    // one step against two half steps: local error O(dt^2)
    auto local = [&](double dt) { return (stepper(v0, dt, 1) - stepper(v0, dt / 2, 2)).norm(); };
    const double r1 = local(0.01) / local(0.005);
    CHECK(r1 > 3.5);
    CHECK(r1 < 4.5);
    // fixed horizon against a fine reference: global error O(dt)
    const Vector ref = stepper(v0, 0.3 / 4800, 4800);
    auto global = [&](int n) { return (stepper(v0, 0.3 / n, n) - ref).norm(); };
    const double r2 = global(30) / global(60);
    CHECK(r2 > 1.8);
    CHECK(r2 < 2.2);
}

TEST_CASE("truth operators") {
    AllenCahnConfig cfg;
    const PdeGeometry& g = cfg.geometry;
    auto zero = linearized_operator(g, Vector::Zero(16), Vector::Zero(16), DiffusionForm::pointwise);
    CHECK((zero.F - (1.0 + g.dt) * Matrix::Identity(16, 16)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(laplacian_d2(16).rowwise().sum().cwiseAbs().maxCoeff() == 0.0);

    for (double c : {0.0, 0.3, 0.7, 1.0}) {
        Vector v = Vector::Constant(16, c);
        auto op = linearized_operator(g, v.unaryExpr(&true_diffusivity), v, DiffusionForm::pointwise);
        const double dc = true_diffusivity(c);
        Vector ref = ac_step_truth(v, g, [dc](double) { return dc; });
        CHECK((op.F * v + op.bias - ref).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((op.F * v + op.bias - ac_step_truth(v, cfg)).cwiseAbs().maxCoeff() < 1e-12);
    }

    auto run = ac_truth(cfg);
    auto ops = ac_truth_operators(run, cfg);
    REQUIRE(ops.size() == 30);
    for (std::size_t k = 0; k < ops.size(); ++k) CHECK(ops[k].F == run.F_true[k]);
}

TEST_CASE("Allen-Cahn truth stays finite and reproducible") {
    for (double sigma : {0.0025, 0.005, 0.01}) {
        AllenCahnConfig cfg;
        cfg.sigma = sigma;
        auto a = ac_truth(cfg), b = ac_truth(cfg);
        for (std::size_t k = 0; k < a.states.size(); ++k) {
            REQUIRE(all_finite(a.states[k]));
            CHECK(a.states[k].cwiseAbs().maxCoeff() < 10.0);
            REQUIRE(a.states[k] == b.states[k]);
        }
        for (std::size_t k = 0; k < a.noisy.size(); ++k) REQUIRE(a.noisy[k] == b.noisy[k]);
        CHECK(a.noisy[0].size() == 8);
    }
}

TEST_CASE("rel_frob_error") {
    Rng rng(1);
    Matrix F = test::random_matrix(rng, 3, 3);
    CHECK(rel_frob_error(F, F) == 0.0);
    CHECK(rel_frob_error(2 * F, F) == doctest::Approx(1.0));
    CHECK_THROWS_AS(rel_frob_error(F, Matrix::Zero(2, 2)), DimensionMismatch);
}

TEST_CASE("baseline diffusivity operator error is near a quarter") {
    AllenCahnConfig cfg;
    auto run = ac_truth(cfg);
    for (std::size_t k = 0; k < run.F_true.size(); ++k) {
        const Vector& v = run.states[k];
        auto op = linearized_operator(cfg.geometry, Vector::Ones(16), v, DiffusionForm::pointwise);
        const double e = rel_frob_error(op.F, run.F_true[k]);
        CHECK(e > 0.15);
        CHECK(e < 0.35);
    }
}

TEST_CASE("state metrics") {
    RocketConfig cfg;
    cfg.sigma = 0.0;
    cfg.p0 = 0.0;
    auto run = rocket_truth(cfg);
    auto tr = run_filter(rocket_model(cfg, rocket_true_F(cfg.dt)), run.noisy);
    std::vector<Matrix> F(100, rocket_true_F(cfg.dt));
    auto m = state_metrics(tr, run, &tr, &F);
    CHECK(m.rmse_total < 1e-12);
    CHECK(m.mean_abs_dP == 0.0);
    for (double e : m.relfrob) CHECK(e == 0.0);

    std::ostringstream os;
    write_metrics_csv(os, m);
    CHECK(os.str().rfind("# dkf-csv v1 state_metrics\nk,rmse_x,relfrob_F,maxabs_dP\n", 0) == 0);
}

TEST_CASE("online filter with a fixed generator matches run_filter") {
    AllenCahnConfig cfg;
    auto run = ac_truth(cfg);
    auto base = ac_base_model(cfg, run.states[0]);
    auto ops = ac_truth_operators(run, cfg);
    auto gen = [&](const Vector&, std::size_t k) { return ops[k]; };
    auto online = run_online_filter(base, run.noisy, gen);
    ModelSequence m = base;
    for (std::size_t k = 0; k < m.nt(); ++k) {
        m.steps[k].F = ops[k].F;
        m.steps[k].f = ops[k].bias;
    }
    auto tr = run_filter(m, run.noisy);
    for (std::size_t k = 0; k < m.nt(); ++k) CHECK((online.trace.steps[k].x_post - tr.steps[k].x_post).norm() == 0.0);
}
