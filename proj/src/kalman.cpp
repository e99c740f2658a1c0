#include "dkf/kalman.hpp"

#include "dkf/csv.hpp"

#include <ostream>

namespace dkf {

void StepModel::validate() const {
    const auto n = F.rows();
    require_dims(F.cols() == n, "StepModel: F not square");
    require_dims(B.rows() == n && B.cols() == u.size(), "StepModel: B shape");
    require_dims(f.size() == n, "StepModel: f length");
    require_dims(H.cols() == n, "StepModel: H columns");
    require_dims(Q.rows() == n && Q.cols() == n, "StepModel: Q shape");
    require_dims(R.rows() == H.rows() && R.cols() == H.rows(), "StepModel: R shape");
}

void ModelSequence::validate() const {
    require_dims(!steps.empty(), "ModelSequence: no steps");
    require_dims(initial.P.rows() == nx() && initial.P.cols() == nx(), "ModelSequence: P0 shape");
    for (const auto& s : steps) {
        s.validate();
        require_dims(s.nx() == nx() && s.nz() == steps.front().nz(), "ModelSequence: step dimensions differ");
    }
}

GaussianState predict(const GaussianState& state, const StepModel& step) {
    require_dims(state.x.size() == step.F.cols() && state.P.rows() == step.F.cols(), "predict: state size");
    return {step.F * state.x + step.B * step.u + step.f, step.F * state.P * step.F.transpose() + step.Q};
}

Gain gain(const Matrix& P_pred, const Matrix& H, const Matrix& R) {
    require_dims(H.cols() == P_pred.rows() && R.rows() == H.rows(), "gain: shapes");
    Matrix S = H * P_pred * H.transpose() + R;
    // K S = P H^T  <=>  S^T K^T = H P^T
    Matrix K = solve(S.transpose(), H * P_pred.transpose()).transpose();
    return {K, S};
}

namespace {

GaussianState apply_gain(const GaussianState& pred, const Vector& z, const Matrix& H, const Matrix& K) {
    const auto n = pred.x.size();
    Matrix L = Matrix::Identity(n, n) - K * H;
    return {pred.x + K * (z - H * pred.x), symmetrize(L * pred.P)};
}

}  // namespace

GaussianState update(const GaussianState& pred, const Vector& z, const Matrix& H, const Matrix& R) {
    require_dims(z.size() == H.rows(), "update: z length");
    return apply_gain(pred, z, H, gain(pred.P, H, R).K);
}

StepTrace filter_step(const GaussianState& prev, const StepModel& step, const Vector& z, const Matrix* frozen_gain) {
    require_dims(z.size() == step.nz(), "filter_step: z length");
    StepTrace t;
    GaussianState pred = predict(prev, step);
    auto g = gain(pred.P, step.H, step.R);
    t.S = std::move(g.S);
    t.K = frozen_gain ? *frozen_gain : std::move(g.K);
    require_dims(t.K.rows() == step.nx() && t.K.cols() == step.nz(), "filter_step: gain shape");
    t.innovation = z - step.H * pred.x;
    GaussianState post = apply_gain(pred, z, step.H, t.K);
    t.x_pred = std::move(pred.x);
    t.P_pred = std::move(pred.P);
    t.x_post = std::move(post.x);
    t.P_post = std::move(post.P);
    return t;
}

FilterTrace run_filter(const ModelSequence& model, const ObservationSeq& obs, const GainSchedule* frozen_gains) {
    model.validate();
    require_dims(obs.size() == model.nt(), "run_filter: observation count");
    if (frozen_gains) require_dims(frozen_gains->size() == model.nt(), "run_filter: gain schedule length");
    FilterTrace trace;
    trace.initial = model.initial;
    trace.steps.reserve(model.nt());
    GaussianState cur = model.initial;
    for (std::size_t k = 0; k < model.nt(); ++k) {
        trace.steps.push_back(
            filter_step(cur, model.steps[k], obs[k], frozen_gains ? &(*frozen_gains)[k] : nullptr));
        cur = {trace.steps.back().x_post, trace.steps.back().P_post};
    }
    return trace;
}

Vector step_residual(const StepModel& step, const Vector& z, const Vector& x_prev, const Matrix& P_prev,
                     const Vector& x, const Matrix& P, const Matrix* frozen_gain) {
    const auto n = step.nx();
    Vector xp = step.F * x_prev + step.B * step.u + step.f;
    Matrix Pp = step.F * P_prev * step.F.transpose() + step.Q;
    Matrix K = frozen_gain ? *frozen_gain : gain(Pp, step.H, step.R).K;
    Matrix L = Matrix::Identity(n, n) - K * step.H;
    Vector r(n + n * n);
    r.head(n) = x - L * xp - K * z;
    Matrix RP = P - L * Pp;
    r.tail(n * n) = vec_view(RP);
    return r;
}

Vector residual(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs,
                const GainSchedule* frozen_gains) {
    require_dims(trace.steps.size() == model.nt() && obs.size() == model.nt(), "residual: lengths");
    const auto n = model.nx();
    const auto blk = n + n * n;
    Vector r(blk * static_cast<Eigen::Index>(model.nt()));
    for (std::size_t k = 0; k < model.nt(); ++k) {
        const auto& s = trace.steps[k];
        r.segment(static_cast<Eigen::Index>(k) * blk, blk) =
            step_residual(model.steps[k], obs[k], trace.x_prev(k), trace.P_prev(k), s.x_post, s.P_post,
                          frozen_gains ? &(*frozen_gains)[k] : nullptr);
    }
    return r;
}

std::vector<Matrix> whitening_weights(const FilterTrace& trace) {
    std::vector<Matrix> w;
    w.reserve(trace.steps.size());
    for (const auto& s : trace.steps) w.push_back(inv_sqrt_spd(s.S));
    return w;
}

double loss(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs, LossMode mode,
            const std::vector<Matrix>* weights) {
    require_dims(trace.steps.size() == model.nt() && obs.size() == model.nt(), "loss: lengths");
    double total = 0.0;
    for (std::size_t k = 0; k < model.nt(); ++k) {
        Vector e = obs[k] - model.steps[k].H * trace.steps[k].x_post;
        if (mode == LossMode::plain) {
            total += e.squaredNorm();
        } else {
            Matrix W = weights ? (*weights)[k] : inv_sqrt_spd(trace.steps[k].S);
            total += (W * e).squaredNorm();
        }
    }
    if (mode == LossMode::whitened) total /= static_cast<double>(model.nt());
    return total;
}

GainSchedule gains_of(const FilterTrace& trace) {
    GainSchedule g;
    g.reserve(trace.steps.size());
    for (const auto& s : trace.steps) g.push_back(s.K);
    return g;
}

void write_trace_csv(std::ostream& os, const FilterTrace& trace) {
    const auto n = trace.initial.x.size();
    const auto nz = trace.steps.empty() ? 0 : trace.steps.front().innovation.size();
    std::vector<std::string> cols{"k"};
    csv::indexed(cols, "x_pred", n);
    csv::indexed(cols, "x_post", n);
    csv::indexed(cols, "diagP_pred", n);
    csv::indexed(cols, "diagP_post", n);
    csv::indexed(cols, "innov", nz);
    csv::header(os, "filter_trace", cols);
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const auto& s = trace.steps[k];
        std::vector<double> r{static_cast<double>(k + 1)};
        csv::append(r, s.x_pred);
        csv::append(r, s.x_post);
        csv::append(r, s.P_pred.diagonal());
        csv::append(r, s.P_post.diagonal());
        csv::append(r, s.innovation);
        csv::row(os, r);
    }
}

}  // namespace dkf
