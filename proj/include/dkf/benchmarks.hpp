#pragma once

#include "dkf/kalman.hpp"
#include "dkf/reaction_diffusion.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace dkf {

struct RocketConfig {
    double dt = 0.1;
    double thrust_accel = 30.0;  // F_T / m
    double burn_fraction = 0.4;  // thrust while k * dt < burn_fraction * n_t * dt
    double g = 9.81;
    int nt = 100;
    double sigma = 0.005;
    Vector x0 = (Vector(2) << 10.0, 0.0).finished();
    double p0 = 0.01;
    double q = 0.0;
    double r_floor = 1e-12;  // filter uses R = sigma^2 + r_floor
    std::uint64_t seed = 0;

    double burn_time() const { return burn_fraction * nt * dt; }
    void validate() const;
};

struct TruthRun {
    std::vector<Vector> states;  // x_0 .. x_nt
    ObservationSeq clean;        // per step 1..nt
    ObservationSeq noisy;
    std::vector<Vector> noise;
    std::vector<Matrix> F_true;  // per step operator
    std::vector<Vector> b_true;
};

Matrix rocket_true_F(double dt);
Matrix rocket_table_initial_F();
TruthRun rocket_truth(const RocketConfig& cfg);
// model with F placeholders set to F; filter R = sigma^2 + r_floor
ModelSequence rocket_model(const RocketConfig& cfg, const Matrix& F);

struct AllenCahnConfig {
    PdeGeometry geometry{16, 5.0, 0.01};
    int nt = 30;
    double amplitude = 0.18;
    int k_wave = 3;
    int m_stripes = 8;
    double sigma = 0.0025;
    int observe_every = 2;  // observe sites 0, e, 2e, ...
    double q = 1e-8;
    double p0 = 1e-6;
    double r_floor = 1e-14;
    DiffusionForm form = DiffusionForm::pointwise;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<Eigen::Index> observed_sites() const;
    Matrix observation_matrix() const;
};

// phase phi ~ U(0, 2 pi) drawn from rng
Vector ac_initial(const AllenCahnConfig& cfg, Rng& rng);
Vector ac_step_truth(const Vector& v, const AllenCahnConfig& cfg);
Vector ac_step_truth(const Vector& v, const PdeGeometry& g, const Diffusivity& d);
double ac_phase(const AllenCahnConfig& cfg);
TruthRun ac_truth(const AllenCahnConfig& cfg);
// pointwise operators at the truth states v_{k-1}, the comparison target for operator error
std::vector<LinearizedStep> ac_truth_operators(const TruthRun& run, const AllenCahnConfig& cfg);
// base model: F placeholders, B = 0, f = 0, x0 = v_0
ModelSequence ac_base_model(const AllenCahnConfig& cfg, const Vector& v0);

// Filter whose step-k operator is generated from the posterior entering that step.
using OperatorGenerator = std::function<LinearizedStep(const Vector& x_prev, std::size_t k)>;
struct OnlineRun {
    FilterTrace trace;
    std::vector<Matrix> F;
};
OnlineRun run_online_filter(const ModelSequence& base, const ObservationSeq& obs, const OperatorGenerator& gen);

double rel_frob_error(const Matrix& F_hat, const Matrix& F_true);

struct StateMetrics {
    std::vector<double> rmse;       // per step
    std::vector<double> relfrob;    // per step, empty if no operators supplied
    std::vector<double> maxabs_dP;  // per step, empty without a reference trace
    std::vector<Vector> abs_dP;     // |diag P - diag P_ref| per step
    double rmse_total = 0.0;
    double mean_abs_dP = 0.0;
};

StateMetrics state_metrics(const FilterTrace& est, const TruthRun& run, const FilterTrace* ref = nullptr,
                           const std::vector<Matrix>* F_est = nullptr);

void write_truth_states(std::ostream& os, const TruthRun& run);
void write_observations(std::ostream& os, const std::string& schema, const ObservationSeq& z);
void write_truth_bundle(const std::string& dir, const TruthRun& run);
void write_metrics_csv(std::ostream& os, const StateMetrics& m);

}  // namespace dkf
