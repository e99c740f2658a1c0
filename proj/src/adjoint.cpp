#include "dkf/adjoint.hpp"

#include "dkf/csv.hpp"

#include <algorithm>
#include <ostream>

namespace dkf {

namespace {

struct StepParts {
    Matrix L;   // I - K H
    Matrix LF;  // (I - K H) F
};

StepParts parts(const StepModel& s, const Matrix& K) {
    const auto n = s.nx();
    StepParts p;
    p.L = Matrix::Identity(n, n) - K * s.H;
    p.LF = p.L * s.F;
    return p;
}

// m = H^T S^-1 nu
Vector innovation_weight(const StepModel& s, const StepTrace& t) {
    return s.H.transpose() * solve(t.S, t.innovation);
}

// M^T = Pp^T H^T S^-T H - I
Matrix covariance_factor_t(const StepModel& s, const StepTrace& t) {
    const auto n = s.nx();
    Matrix SinvT_H = solve(t.S.transpose(), s.H);
    return t.P_pred.transpose() * s.H.transpose() * SinvT_H - Matrix::Identity(n, n);
}

}  // namespace

Vector augment(const Vector& x, const Matrix& P) {
    Vector y(x.size() + P.size());
    y.head(x.size()) = x;
    y.tail(P.size()) = vec_view(P);
    return y;
}

Matrix block_xx_prev(const StepModel& step, const Matrix& K) {
    require_dims(K.rows() == step.nx() && K.cols() == step.nz(), "block_xx_prev: K shape");
    return -parts(step, K).LF;
}

Matrix block_xP_prev(const StepModel& step, const StepTrace& tk) {
    const auto p = parts(step, tk.K);
    // -(nu^T kron I)(S^-T H kron L)(F kron F) = -(nu^T S^-T H F) kron (L F)
    Matrix row = innovation_weight(step, tk).transpose() * step.F;
    return -kron(row, p.LF);
}

Matrix block_PP_prev(const StepModel& step, const StepTrace& tk) {
    const auto p = parts(step, tk.K);
    return kron(covariance_factor_t(step, tk) * step.F, p.LF);
}

Matrix block_PP_prev_frozen(const StepModel& step, const Matrix& K) {
    const auto p = parts(step, K);
    return -kron(p.LF, p.LF);
}

AdjointSolution solve_adjoint(const FilterTrace& trace, const ModelSequence& model, const std::vector<Vector>& rhs,
                              GainTreatment treatment) {
    const auto nt = model.nt();
    const auto n = model.nx();
    require_dims(rhs.size() == nt && trace.steps.size() == nt, "solve_adjoint: lengths");
    AdjointSolution sol;
    sol.psi.resize(nt);
    for (std::size_t kk = nt; kk-- > 0;) {
        require_dims(rhs[kk].size() == n + n * n, "solve_adjoint: rhs length");
        Vector psi = rhs[kk];
        if (kk + 1 < nt) {
            const auto& s = model.steps[kk + 1];
            const auto& t = trace.steps[kk + 1];
            const auto p = parts(s, t.K);
            const Vector& next = sol.psi[kk + 1];
            const Vector px = next.head(n);
            const Matrix pP = unvec(next.tail(n * n), n, n);
            // (A kron B)^T vec(X) = vec(B^T X A)
            psi.head(n) += p.LF.transpose() * px;
            Matrix dP;
            if (treatment == GainTreatment::coupled) {
                Matrix row = innovation_weight(s, t).transpose() * s.F;
                dP = -(p.LF.transpose() * px) * row;
                dP += p.LF.transpose() * pP * (covariance_factor_t(s, t) * s.F);
            } else {
                dP = -p.LF.transpose() * pP * p.LF;
            }
            psi.tail(n * n) -= vec_view(dP);
        }
        sol.psi[kk] = std::move(psi);
    }
    return sol;
}

std::vector<Vector> loss_state_gradient(const FilterTrace& trace, const ModelSequence& model,
                                        const ObservationSeq& obs, LossMode mode, const std::vector<Matrix>* weights) {
    const auto nt = model.nt();
    const auto n = model.nx();
    std::vector<Vector> g(nt);
    for (std::size_t k = 0; k < nt; ++k) {
        const auto& H = model.steps[k].H;
        Vector e = H * trace.steps[k].x_post - obs[k];
        g[k] = Vector::Zero(n + n * n);
        if (mode == LossMode::plain) {
            g[k].head(n) = 2.0 * H.transpose() * e;
        } else {
            Matrix W = weights ? (*weights)[k] : inv_sqrt_spd(trace.steps[k].S);
            g[k].head(n) = (2.0 / static_cast<double>(nt)) * H.transpose() * (W.transpose() * (W * e));
        }
    }
    return g;
}

std::vector<Matrix> transition_sensitivity(const FilterTrace& trace, const ModelSequence& model,
                                           const AdjointSolution& adj, GainTreatment treatment) {
    const auto nt = model.nt();
    const auto n = model.nx();
    std::vector<Matrix> out(nt);
    for (std::size_t k = 0; k < nt; ++k) {
        const auto& s = model.steps[k];
        const auto& t = trace.steps[k];
        const auto p = parts(s, t.K);
        const Vector& x = trace.x_prev(k);
        const Matrix& P = trace.P_prev(k);
        const Vector px = adj.psi[k].head(n);
        const Matrix pP = unvec(adj.psi[k].tail(n * n), n, n);

        // T = d(psi^T r_k)/dF
        Vector a = p.L.transpose() * px;
        Matrix T = -a * x.transpose();
        Matrix C;
        if (treatment == GainTreatment::coupled) {
            Vector m = innovation_weight(s, t);
            T -= a * (P * s.F.transpose() * m).transpose();
            T -= m * (P.transpose() * s.F.transpose() * a).transpose();
            C = p.L.transpose() * pP * covariance_factor_t(s, t);
        } else {
            C = -p.L.transpose() * pP;
        }
        T += C * s.F * P.transpose() + C.transpose() * s.F * P;
        out[k] = -T;
    }
    return out;
}

Vector gradient_flat(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs,
                     const DesignVars& design, const GradientOptions& opts) {
    auto rhs = loss_state_gradient(trace, model, obs, opts.mode, opts.weights);
    auto adj = solve_adjoint(trace, model, rhs, opts.treatment);
    auto dF = transition_sensitivity(trace, model, adj, opts.treatment);
    return chain_transition_gradient(design, dF);
}

std::vector<SensitivitySlot> gradient(const FilterTrace& trace, const ModelSequence& model, const ObservationSeq& obs,
                                      const DesignVars& design, const GradientOptions& opts) {
    Vector g = gradient_flat(trace, model, obs, design, opts);
    std::vector<SensitivitySlot> slots;
    slots.reserve(static_cast<std::size_t>(g.size()));
    for (Eigen::Index i = 0; i < g.size(); ++i) slots.push_back({i, slot_label(design, i), g(i)});
    return slots;
}

double VerificationReport::max_error() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.analytic_vs_fd1);
    return m;
}

double VerificationReport::max_error(const std::string& block) const {
    double m = 0.0;
    for (const auto& r : rows)
        if (r.block == block) m = std::max(m, r.analytic_vs_fd1);
    return m;
}

namespace {

struct FdJacobians {
    Matrix xx, Px, xP, PP, kk_xx, kk_PP;
};

// central differences of step_residual in every argument
FdJacobians fd_step(const StepModel& s, const Vector& z, const Vector& xp, const Matrix& Pp, const Vector& x,
                    const Matrix& P, double h) {
    const auto n = s.nx();
    const auto nn = n * n;
    FdJacobians J;
    J.xx.resize(n, n);
    J.Px.resize(nn, n);
    J.xP.resize(n, nn);
    J.PP.resize(nn, nn);
    J.kk_xx.resize(n, n);
    J.kk_PP.resize(nn, nn);
    auto r = [&](const Vector& a, const Matrix& A, const Vector& b, const Matrix& B) {
        return step_residual(s, z, a, A, b, B);
    };
    for (Eigen::Index j = 0; j < n; ++j) {
        Vector lo = xp, hi = xp;
        lo(j) -= h;
        hi(j) += h;
        Vector d = (r(hi, Pp, x, P) - r(lo, Pp, x, P)) / (2.0 * h);
        J.xx.col(j) = d.head(n);
        J.Px.col(j) = d.tail(nn);
        lo = x;
        hi = x;
        lo(j) -= h;
        hi(j) += h;
        J.kk_xx.col(j) = ((r(xp, Pp, hi, P) - r(xp, Pp, lo, P)) / (2.0 * h)).head(n);
    }
    for (Eigen::Index j = 0; j < nn; ++j) {
        Matrix lo = Pp, hi = Pp;
        lo.data()[j] -= h;
        hi.data()[j] += h;
        Vector d = (r(xp, hi, x, P) - r(xp, lo, x, P)) / (2.0 * h);
        J.xP.col(j) = d.head(n);
        J.PP.col(j) = d.tail(nn);
        lo = P;
        hi = P;
        lo.data()[j] -= h;
        hi.data()[j] += h;
        J.kk_PP.col(j) = ((r(xp, Pp, x, hi) - r(xp, Pp, x, lo)) / (2.0 * h)).tail(nn);
    }
    return J;
}

}  // namespace

VerificationReport verify_blocks(const ModelSequence& model, const ObservationSeq& obs, double eps) {
    VerificationReport rep;
    rep.eps = eps;
    const auto trace = run_filter(model, obs);
    const auto n = model.nx();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix I2 = Matrix::Identity(n * n, n * n);
    for (std::size_t k = 0; k < model.nt(); ++k) {
        const auto& s = model.steps[k];
        const auto& t = trace.steps[k];
        const auto& xp = trace.x_prev(k);
        const auto& Pp = trace.P_prev(k);
        auto f1 = fd_step(s, obs[k], xp, Pp, t.x_post, t.P_post, eps);
        auto f2 = fd_step(s, obs[k], xp, Pp, t.x_post, t.P_post, 0.5 * eps);
        const Matrix an_xx = block_xx_prev(s, t.K);
        const Matrix an_xP = block_xP_prev(s, t);
        const Matrix an_PP = block_PP_prev(s, t);
        auto add = [&](const std::string& name, const Matrix& an, const Matrix& a, const Matrix& b) {
            rep.rows.push_back({k + 1, name, (an - a).norm(), (a - b).norm()});
        };
        add("A_kk_xx", I, f1.kk_xx, f2.kk_xx);
        add("A_kk_PP", I2, f1.kk_PP, f2.kk_PP);
        add("A_kk1_xx", an_xx, f1.xx, f2.xx);
        add("A_kk1_xP", an_xP, f1.xP, f2.xP);
        add("A_kk1_PP", an_PP, f1.PP, f2.PP);
        rep.max_px_fd = std::max(rep.max_px_fd, f1.Px.cwiseAbs().maxCoeff());
    }
    return rep;
}

void write_verification_csv(std::ostream& os, const VerificationReport& rep) {
    csv::header(os, "block_verification eps=" + csv::fmt(rep.eps),
                {"k", "block_name", "frob_analytic_vs_fd1", "frob_fd1_vs_fd2"});
    for (const auto& r : rep.rows)
        os << r.k << ',' << r.block << ',' << csv::fmt(r.analytic_vs_fd1) << ',' << csv::fmt(r.fd1_vs_fd2) << '\n';
}

}  // namespace dkf
