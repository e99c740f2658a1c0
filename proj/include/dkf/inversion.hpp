#pragma once

#include "dkf/adjoint.hpp"
#include "dkf/design.hpp"
#include "dkf/lbfgs.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dkf {

struct ObjectiveOptions {
    LossMode mode = LossMode::plain;
    GainTreatment treatment = GainTreatment::coupled;
    // table designs only: weight * sum_j (d_j - log d_j), infinite for d_j <= 0
    double barrier_weight = 0.0;
};

// Quantities held fixed while differentiating: the gain schedule (frozen
// treatment) and the whitening weights (whitened loss).
struct FrozenReference {
    GainSchedule gains;
    std::vector<Matrix> weights;
};

FrozenReference make_reference(const DesignVars& design, const ModelSequence& base, const ObservationSeq& obs);

struct ObjectiveValue {
    double value = 0.0;
    Vector gradient;
    Vector data_gradient;  // without the barrier term
};

ObjectiveValue objective(const DesignVars& design, const ModelSequence& base, const ObservationSeq& obs,
                         const ObjectiveOptions& opts, const FrozenReference& ref);

double barrier_value(const DesignVars& design, double weight, Vector* grad);

struct InversionOptions {
    ObjectiveOptions objective;
    LbfgsOptions lbfgs;
    int outer_rounds = 100;
    double outer_tol = 1e-10;  // on the design change, infinity norm
};

struct InversionResult {
    DesignVars design;
    std::vector<double> loss_history;
    std::vector<double> grad_history;
    int iterations = 0;
    int evaluations = 0;
    int outer_rounds = 0;
    Termination reason = Termination::max_iterations;
    bool outer_converged = false;
    // largest |data gradient| seen per design scalar; zero means never identified
    Vector max_abs_gradient;
};

// Single L-BFGS run against a fixed reference.
InversionResult minimize(const DesignVars& init, const ModelSequence& base, const ObservationSeq& obs,
                         const ObjectiveOptions& obj, const FrozenReference& ref, const LbfgsOptions& opts);

// Outer rounds: refresh the reference (and the table linearization) from a
// filter run with the current design, minimize, repeat until the design stops moving.
InversionResult invert(const DesignVars& init, const ModelSequence& base, const ObservationSeq& obs,
                       const InversionOptions& opts);

// lin[k] = state entering step k: x0, then the posteriors x_1 .. x_{n-1}
std::vector<Vector> lagged_states(const FilterTrace& trace);

void write_design_csv(std::ostream& os, const DesignVars& design);
void write_history_csv(std::ostream& os, const InversionResult& res);

}  // namespace dkf
