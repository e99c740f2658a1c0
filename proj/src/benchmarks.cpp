#include "dkf/benchmarks.hpp"

#include "dkf/csv.hpp"

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <limits>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace dkf {

void RocketConfig::validate() const {
    if (!(dt > 0.0) || nt < 1 || !(sigma >= 0.0) || x0.size() != 2 || !(p0 >= 0.0) || !(q >= 0.0))
        throw std::invalid_argument("RocketConfig: invalid settings");
}

Matrix rocket_true_F(double dt) { return (Matrix(2, 2) << 1.0, dt, 0.0, 1.0).finished(); }

Matrix rocket_table_initial_F() {
    return (Matrix(2, 2) << 0.957691, 0.088596, -0.072960, 0.967528).finished();
}

namespace {

StepModel rocket_step(const RocketConfig& cfg, int k) {
    StepModel s;
    s.F = rocket_true_F(cfg.dt);
    s.B = (Matrix(2, 1) << 0.0, cfg.dt * cfg.thrust_accel).finished();
    s.f = (Vector(2) << 0.0, -cfg.g * cfg.dt).finished();
    s.u = Vector::Constant(1, static_cast<double>(k) * cfg.dt < cfg.burn_time() ? 1.0 : 0.0);
    s.H = (Matrix(1, 2) << 1.0, 0.0).finished();
    s.Q = cfg.q * Matrix::Identity(2, 2);
    s.R = Matrix::Constant(1, 1, cfg.sigma * cfg.sigma + cfg.r_floor);
    return s;
}

std::string sigma_key(double sigma) { return csv::fmt(sigma); }

}  // namespace

TruthRun rocket_truth(const RocketConfig& cfg) {
    cfg.validate();
    TruthRun run;
    Rng rng = Rng(cfg.seed).derive("rocket/noise/" + sigma_key(cfg.sigma));
    Vector x = cfg.x0;
    run.states.push_back(x);
    for (int k = 0; k < cfg.nt; ++k) {
        const auto s = rocket_step(cfg, k);
        x = s.F * x + s.B * s.u + s.f;
        run.states.push_back(x);
        Vector zc = s.H * x;
        Vector w(1);
        w(0) = cfg.sigma * rng.normal();
        run.clean.push_back(zc);
        run.noise.push_back(w);
        run.noisy.push_back(zc + w);
        run.F_true.push_back(s.F);
        run.b_true.push_back(s.B * s.u + s.f);
    }
    return run;
}

ModelSequence rocket_model(const RocketConfig& cfg, const Matrix& F) {
    cfg.validate();
    ModelSequence m;
    m.initial = {cfg.x0, cfg.p0 * Matrix::Identity(2, 2)};
    for (int k = 0; k < cfg.nt; ++k) {
        auto s = rocket_step(cfg, k);
        s.F = F;
        m.steps.push_back(std::move(s));
    }
    return m;
}

void AllenCahnConfig::validate() const {
    if (geometry.n < 3 || !(geometry.length > 0.0) || !(geometry.dt > 0.0) || nt < 1 || observe_every < 1 ||
        !(sigma >= 0.0) || m_stripes < 0)
        throw std::invalid_argument("AllenCahnConfig: invalid settings");
}

std::vector<Eigen::Index> AllenCahnConfig::observed_sites() const {
    std::vector<Eigen::Index> s;
    for (Eigen::Index i = 0; i < geometry.n; i += observe_every) s.push_back(i);
    return s;
}

Matrix AllenCahnConfig::observation_matrix() const {
    const auto sites = observed_sites();
    Matrix H = Matrix::Zero(static_cast<Eigen::Index>(sites.size()), geometry.n);
    for (std::size_t r = 0; r < sites.size(); ++r) H(static_cast<Eigen::Index>(r), sites[r]) = 1.0;
    return H;
}

Vector ac_initial(const AllenCahnConfig& cfg, Rng& rng) {
    cfg.validate();
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vector x = cfg.geometry.nodes();
    const double l = cfg.geometry.length;
    Vector v(cfg.geometry.n);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double s = std::sin(2.0 * std::numbers::pi * cfg.m_stripes * x(i) / l);
        const double b = 0.5 * (1.0 + static_cast<double>((s > 0.0) - (s < 0.0)));
        v(i) = std::clamp(b + cfg.amplitude * std::sin(2.0 * std::numbers::pi * cfg.k_wave * x(i) / l + phi), 0.0,
                          1.0);
    }
    return v;
}

double ac_phase(const AllenCahnConfig& cfg) {
    Rng rng = Rng(cfg.seed).derive("ac/phase");
    return rng.uniform(0.0, 2.0 * std::numbers::pi);
}

Vector ac_step_truth(const Vector& v, const PdeGeometry& g, const Diffusivity& d) {
    require_dims(v.size() == g.n, "ac_step_truth: state length");
    const auto n = g.n;
    const double dx = g.dx();
    Vector flux(n);  // J_{i+1/2}
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = (i + 1) % n;
        flux(i) = 0.5 * (d(v(i)) + d(v(j))) * (v(j) - v(i)) / dx;
    }
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double div = (flux(i) - flux((i + n - 1) % n)) / dx;
        out(i) = v(i) + g.dt * (div - v(i) * v(i) * v(i) + v(i));
    }
    return out;
}

Vector ac_step_truth(const Vector& v, const AllenCahnConfig& cfg) {
    return ac_step_truth(v, cfg.geometry, true_diffusivity);
}

TruthRun ac_truth(const AllenCahnConfig& cfg) {
    cfg.validate();
    TruthRun run;
    Rng phase = Rng(cfg.seed).derive("ac/phase");
    Rng noise = Rng(cfg.seed).derive("ac/noise/" + sigma_key(cfg.sigma));
    const Matrix H = cfg.observation_matrix();
    Vector v = ac_initial(cfg, phase);
    run.states.push_back(v);
    for (int k = 0; k < cfg.nt; ++k) {
        auto op = linearized_operator(cfg.geometry, v.unaryExpr(&true_diffusivity), v, DiffusionForm::pointwise);
        run.F_true.push_back(std::move(op.F));
        run.b_true.push_back(std::move(op.bias));
        v = ac_step_truth(v, cfg);
        run.states.push_back(v);
        Vector zc = H * v;
        Vector w(zc.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = cfg.sigma * noise.normal();
        run.clean.push_back(zc);
        run.noise.push_back(w);
        run.noisy.push_back(zc + w);
    }
    return run;
}

std::vector<LinearizedStep> ac_truth_operators(const TruthRun& run, const AllenCahnConfig& cfg) {
    std::vector<LinearizedStep> ops;
    for (std::size_t k = 0; k + 1 < run.states.size(); ++k) {
        const Vector& v = run.states[k];
        ops.push_back(
            linearized_operator(cfg.geometry, v.unaryExpr(&true_diffusivity), v, DiffusionForm::pointwise));
    }
    return ops;
}

ModelSequence ac_base_model(const AllenCahnConfig& cfg, const Vector& v0) {
    cfg.validate();
    const auto n = cfg.geometry.n;
    ModelSequence m;
    m.initial = {v0, cfg.p0 * Matrix::Identity(n, n)};
    StepModel s;
    s.F = Matrix::Identity(n, n);
    s.B = Matrix::Zero(n, 0);
    s.u = Vector::Zero(0);
    s.f = Vector::Zero(n);
    s.H = cfg.observation_matrix();
    s.Q = cfg.q * Matrix::Identity(n, n);
    s.R = (cfg.sigma * cfg.sigma + cfg.r_floor) * Matrix::Identity(s.H.rows(), s.H.rows());
    m.steps.assign(static_cast<std::size_t>(cfg.nt), s);
    return m;
}

OnlineRun run_online_filter(const ModelSequence& base, const ObservationSeq& obs, const OperatorGenerator& gen) {
    base.validate();
    require_dims(obs.size() == base.nt(), "run_online_filter: observation count");
    OnlineRun out;
    out.trace.initial = base.initial;
    GaussianState cur = base.initial;
    for (std::size_t k = 0; k < base.nt(); ++k) {
        StepModel s = base.steps[k];
        auto op = gen(cur.x, k);
        s.F = op.F;
        s.f = base.steps[k].f + op.bias;
        out.F.push_back(std::move(op.F));
        out.trace.steps.push_back(filter_step(cur, s, obs[k]));
        cur = {out.trace.steps.back().x_post, out.trace.steps.back().P_post};
    }
    return out;
}

double rel_frob_error(const Matrix& F_hat, const Matrix& F_true) {
    require_dims(F_hat.rows() == F_true.rows() && F_hat.cols() == F_true.cols(), "rel_frob_error: shapes");
    return (F_hat - F_true).norm() / F_true.norm();
}

StateMetrics state_metrics(const FilterTrace& est, const TruthRun& run, const FilterTrace* ref,
                           const std::vector<Matrix>* F_est) {
    require_dims(est.steps.size() + 1 == run.states.size(), "state_metrics: lengths");
    StateMetrics m;
    double sq = 0.0, count = 0.0, dp = 0.0, dpc = 0.0;
    for (std::size_t k = 0; k < est.steps.size(); ++k) {
        const Vector e = est.steps[k].x_post - run.states[k + 1];
        m.rmse.push_back(std::sqrt(e.squaredNorm() / static_cast<double>(e.size())));
        sq += e.squaredNorm();
        count += static_cast<double>(e.size());
        if (F_est) m.relfrob.push_back(rel_frob_error((*F_est)[k], run.F_true[k]));
        if (ref) {
            Vector d = (est.steps[k].P_post.diagonal() - ref->steps[k].P_post.diagonal()).cwiseAbs();
            m.maxabs_dP.push_back(d.maxCoeff());
            dp += d.sum();
            dpc += static_cast<double>(d.size());
            m.abs_dP.push_back(std::move(d));
        }
    }
    m.rmse_total = std::sqrt(sq / count);
    m.mean_abs_dP = dpc > 0 ? dp / dpc : 0.0;
    return m;
}

void write_truth_states(std::ostream& os, const TruthRun& run) {
    std::vector<std::string> cols{"k"};
    csv::indexed(cols, "x", run.states.front().size());
    csv::header(os, "truth_states", cols);
    for (std::size_t k = 0; k < run.states.size(); ++k) {
        std::vector<double> r{static_cast<double>(k)};
        csv::append(r, run.states[k]);
        csv::row(os, r);
    }
}

void write_observations(std::ostream& os, const std::string& schema, const ObservationSeq& z) {
    std::vector<std::string> cols{"k"};
    csv::indexed(cols, "z", z.empty() ? 0 : z.front().size());
    csv::header(os, schema, cols);
    for (std::size_t k = 0; k < z.size(); ++k) {
        std::vector<double> r{static_cast<double>(k + 1)};
        csv::append(r, z[k]);
        csv::row(os, r);
    }
}

void write_truth_bundle(const std::string& dir, const TruthRun& run) {
    std::filesystem::create_directories(dir);
    std::ofstream s(dir + "/states.csv"), c(dir + "/obs_clean.csv"), n(dir + "/obs_noisy.csv");
    write_truth_states(s, run);
    write_observations(c, "obs_clean", run.clean);
    write_observations(n, "obs_noisy", run.noisy);
}

void write_metrics_csv(std::ostream& os, const StateMetrics& m) {
    csv::header(os, "state_metrics", {"k", "rmse_x", "relfrob_F", "maxabs_dP"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < m.rmse.size(); ++k)
        csv::row(os, {static_cast<double>(k + 1), m.rmse[k], m.relfrob.empty() ? nan : m.relfrob[k],
                      m.maxabs_dP.empty() ? nan : m.maxabs_dP[k]});
}

}  // namespace dkf
