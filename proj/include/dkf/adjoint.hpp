#pragma once

#include "dkf/design.hpp"
#include "dkf/kalman.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dkf {

// coupled: K_k depends on P_{k-1} and the full (x, P) recursion is differentiated.
// frozen:  K_k is a fixed schedule, so x no longer depends on P.
enum class GainTreatment { coupled, frozen };

// y_k = [x_k; vec(P_k)]
Vector augment(const Vector& x, const Matrix& P);

// Sub-blocks of A_{k,k-1} = d r_k / d y_{k-1}. The (P,x) block is zero and
// A_{k,k} is the identity; neither is stored.
Matrix block_xx_prev(const StepModel& step, const Matrix& K);
Matrix block_xP_prev(const StepModel& step, const StepTrace& tk);
Matrix block_PP_prev(const StepModel& step, const StepTrace& tk);
// PP block when K is held fixed: -(L F) kron (L F)
Matrix block_PP_prev_frozen(const StepModel& step, const Matrix& K);

struct AdjointSolution {
    std::vector<Vector> psi;  // augmented length per step
};

// Backward recursion psi_n = g_n, psi_k = g_k - A_{k+1,k}^T psi_{k+1}.
AdjointSolution solve_adjoint(const FilterTrace& trace, const ModelSequence& model, const std::vector<Vector>& rhs,
                              GainTreatment treatment = GainTreatment::coupled);

// df/dy_k for the two losses. The whitened loss holds its weights fixed.
std::vector<Vector> loss_state_gradient(const FilterTrace& trace, const ModelSequence& model,
                                        const ObservationSeq& obs, LossMode mode,
                                        const std::vector<Matrix>* weights = nullptr);

// dL/dF_k = -d(psi_k^T r_k)/dF_k for every step.
std::vector<Matrix> transition_sensitivity(const FilterTrace& trace, const ModelSequence& model,
                                           const AdjointSolution& adj, GainTreatment treatment);

struct SensitivitySlot {
    Eigen::Index index;
    std::string id;
    double value;
};

struct GradientOptions {
    LossMode mode = LossMode::plain;
    GainTreatment treatment = GainTreatment::coupled;
    const std::vector<Matrix>* weights = nullptr;  // whitening weights; default from the trace
};

Vector gradient_flat(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs,
                     const DesignVars& design, const GradientOptions& opts);
std::vector<SensitivitySlot> gradient(const FilterTrace& trace, const ModelSequence& model,
                                      const ObservationSeq& obs, const DesignVars& design,
                                      const GradientOptions& opts);

struct BlockError {
    std::size_t k;  // 1-based step
    std::string block;
    double analytic_vs_fd1;
    double fd1_vs_fd2;
};

struct VerificationReport {
    double eps = 1e-6;
    std::vector<BlockError> rows;

    double max_error() const;
    double max_error(const std::string& block) const;
    // largest |entry| of the (P,x) block measured by FD; should be zero
    double max_px_fd = 0.0;
};

inline const std::vector<std::string>& block_names() {
    static const std::vector<std::string> names{"A_kk_xx", "A_kk_PP", "A_kk1_xx", "A_kk1_xP", "A_kk1_PP"};
    return names;
}

VerificationReport verify_blocks(const ModelSequence& model, const ObservationSeq& obs, double eps = 1e-6);
void write_verification_csv(std::ostream& os, const VerificationReport& rep);

}  // namespace dkf
