#pragma once

#include "dkf/numkit.hpp"

#include <iosfwd>
#include <vector>

namespace dkf {

struct GaussianState {
    Vector x;
    Matrix P;
};

struct StepModel {
    Matrix F, B, H;
    Vector f, u;
    Matrix Q, R;

    Eigen::Index nx() const { return F.rows(); }
    Eigen::Index nz() const { return H.rows(); }
    void validate() const;
};

struct ModelSequence {
    GaussianState initial;
    std::vector<StepModel> steps;

    std::size_t nt() const { return steps.size(); }
    Eigen::Index nx() const { return initial.x.size(); }
    void validate() const;
};

using ObservationSeq = std::vector<Vector>;

struct StepTrace {
    Vector x_pred;
    Matrix P_pred;
    Matrix K, S;
    Vector innovation;  // z - H x_pred
    Vector x_post;
    Matrix P_post;
};

struct FilterTrace {
    GaussianState initial;
    std::vector<StepTrace> steps;

    const Vector& x_prev(std::size_t k) const { return k == 0 ? initial.x : steps[k - 1].x_post; }
    const Matrix& P_prev(std::size_t k) const { return k == 0 ? initial.P : steps[k - 1].P_post; }
};

// A fixed gain schedule replaces K_k = P_pred H^T S^-1 when supplied.
using GainSchedule = std::vector<Matrix>;

enum class LossMode { plain, whitened };

struct Gain {
    Matrix K, S;
};

GaussianState predict(const GaussianState& state, const StepModel& step);
Gain gain(const Matrix& P_pred, const Matrix& H, const Matrix& R);
GaussianState update(const GaussianState& pred, const Vector& z, const Matrix& H, const Matrix& R);

StepTrace filter_step(const GaussianState& prev, const StepModel& step, const Vector& z,
                      const Matrix* frozen_gain = nullptr);
FilterTrace run_filter(const ModelSequence& model, const ObservationSeq& obs,
                       const GainSchedule* frozen_gains = nullptr);

// Residual of one step as a function of (y_{k-1}, y_k). The gain is rebuilt
// from P_prev unless frozen_gain is given. Returns [r_x; vec(R_P)].
Vector step_residual(const StepModel& step, const Vector& z, const Vector& x_prev, const Matrix& P_prev,
                     const Vector& x, const Matrix& P, const Matrix* frozen_gain = nullptr);
Vector residual(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs,
                const GainSchedule* frozen_gains = nullptr);

// Whitening weights S_k^{-1/2}, normally taken from a reference trace and then held fixed.
std::vector<Matrix> whitening_weights(const FilterTrace& trace);

double loss(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs, LossMode mode,
            const std::vector<Matrix>* weights = nullptr);

GainSchedule gains_of(const FilterTrace& trace);

void write_trace_csv(std::ostream& os, const FilterTrace& trace);

}  // namespace dkf
