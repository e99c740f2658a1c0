#pragma once

#include "dkf/adjoint.hpp"
#include "dkf/benchmarks.hpp"
#include "dkf/closure.hpp"
#include "dkf/inversion.hpp"
#include "dkf/report.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dkf {

struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Threshold breaches and other numerical failures that map to exit code 2.
struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- verify

// FD truncation on the (x,P) block grows like eps^2 / sigma^5, so the default
// noise level is the largest rocket one
inline RocketConfig verify_rocket_defaults() {
    RocketConfig c;
    c.sigma = 0.125;
    return c;
}

struct VerifyOptions {
    RocketConfig rocket = verify_rocket_defaults();
    double eps = 1e-6;
    double alert = 1e-4;
    double target_level = 1e-5;
};

struct VerifyOutcome {
    VerificationReport report;
    double max_error = 0.0;
    bool below_alert = false;
    bool below_target_level = false;
};

VerifyOutcome run_verify(const VerifyOptions& opts);

// ---- rocket

enum class RocketInit { table, perturbed };

struct RocketOptions {
    RocketConfig rocket;
    std::vector<double> sigmas{0.005, 0.025, 0.125};
    RocketInit init = RocketInit::table;
    double init_sigma = 0.05;  // entrywise std of the perturbed start
    std::string variant = "tied";
    ObjectiveOptions objective{LossMode::plain, GainTreatment::frozen, 0.0};
    LbfgsOptions lbfgs;
    int outer_rounds = 100;
};

struct RocketOutcome {
    double sigma = 0.0;
    TruthRun run;
    Matrix F_init;
    DesignVars design;
    InversionResult inversion;
    FilterTrace init_trace, opt_trace;
    double rmse_init = 0.0, rmse_opt = 0.0;
    Matrix F_opt;  // tied matrix, or the mean of the per-step matrices
};

// Table 1 optimized column for the three published noise levels
std::optional<Matrix> rocket_table_target(double sigma);
Matrix rocket_initial_F(const RocketOptions& opts);
RocketOutcome run_rocket_sigma(const RocketOptions& opts, double sigma);

// ---- Allen-Cahn

struct AllenCahnOptions {
    AllenCahnConfig ac;
    std::vector<double> sigmas{0.0025, 0.005, 0.01};
    Eigen::Index grid_points = 17;
    double grid_lo = 0.0, grid_hi = 1.0;
    double d_init = 1.0;
    DiffusionForm form = DiffusionForm::face;
    ObjectiveOptions objective{LossMode::whitened, GainTreatment::frozen, 1e-6};
    LbfgsOptions lbfgs;
    int outer_rounds = 100;
    // closure dataset preprocessing
    double ident_grad = 1e-10;  // the entry's gradient must have exceeded this at some iterate
    double ident_std = 5e-2;    // Gauss-Newton posterior std of the entry
    double prior_std = 1.0;
    std::vector<Eigen::Index> closure_sizes{1, 32, 32, 1};
    TrainConfig train;
    Eigen::Index eval_points = 1001;
};

struct Identifiability {
    Vector posterior_std;
    Vector max_abs_gradient;
    std::vector<bool> keep;
};

struct AllenCahnOutcome {
    double sigma = 0.0;
    TruthRun run;
    DiffusivityTable table;
    InversionResult inversion;
    Identifiability ident;
    Dataset dataset;
    TrainResult closure;
    OnlineRun baseline, inverted, dnn;
    FilterTrace reference;  // filter with the true operators
    StateMetrics m_baseline, m_inverted, m_dnn;
    double d_rmse_dnn = 0.0;    // over [0, 1]
    double d_rmse_table = 0.0;  // identified entries only
};

// Gauss-Newton posterior std of each table entry under the frozen pipeline of the final outer round
Identifiability table_identifiability(const DiffusivityTable& table, const InversionResult& inv,
                                      const ModelSequence& base, const ObservationSeq& obs,
                                      const AllenCahnOptions& opts);
Dataset closure_dataset(const DiffusivityTable& table, const Identifiability& ident, const std::string& provenance);
double diffusivity_rmse(const MlpModel& m, Eigen::Index points);
AllenCahnOutcome run_allen_cahn_sigma(const AllenCahnOptions& opts, double sigma);

// ---- closure from stored inversion output

enum class ClosureSource { inversion, truth };

struct ClosureOptions {
    ClosureSource source = ClosureSource::inversion;
    std::string input;  // closure_dataset.csv or a directory holding one
    Eigen::Index truth_samples = 101;
    std::vector<Eigen::Index> sizes{1, 32, 32, 1};
    TrainConfig train;
    std::uint64_t seed = 0;
    Eigen::Index eval_points = 1001;
};

struct ClosureOutcome {
    Dataset dataset;
    TrainResult result;
    double d_rmse = 0.0;
};

Dataset load_closure_dataset(const std::string& path);
ClosureOutcome run_closure(const ClosureOptions& opts);

// ---- bundles; each returns the process exit code

int cmd_verify(const VerifyOptions& opts, ReportBundle& out);
int cmd_rocket(const RocketOptions& opts, ReportBundle& out, int threads);
int cmd_allen_cahn(const AllenCahnOptions& opts, ReportBundle& out, int threads);
int cmd_closure(const ClosureOptions& opts, ReportBundle& out);

void write_closure_dataset(std::ostream& os, const Dataset& d);
void write_checkpoint_bundle(ReportBundle& out, const std::string& rel, const MlpModel& m);

}  // namespace dkf
