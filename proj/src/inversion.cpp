#include "dkf/inversion.hpp"

#include "dkf/csv.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

namespace dkf {

FrozenReference make_reference(const DesignVars& design, const ModelSequence& base, const ObservationSeq& obs) {
    const auto trace = run_filter(build_model(design, base), obs);
    return {gains_of(trace), whitening_weights(trace)};
}

double barrier_value(const DesignVars& design, double weight, Vector* grad) {
    const auto* t = std::get_if<DiffusivityTable>(&design);
    if (grad) *grad = Vector::Zero(flat_size(design));
    if (!t || weight == 0.0) return 0.0;
    double b = 0.0;
    for (Eigen::Index j = 0; j < t->values.size(); ++j) {
        const double d = t->values(j);
        if (!(d > 0.0)) return std::numeric_limits<double>::infinity();
        b += d - std::log(d);
        if (grad) (*grad)(j) = weight * (1.0 - 1.0 / d);
    }
    return weight * b;
}

ObjectiveValue objective(const DesignVars& design, const ModelSequence& base, const ObservationSeq& obs,
                         const ObjectiveOptions& opts, const FrozenReference& ref) {
    ObjectiveValue out;
    Vector gb;
    const double b = barrier_value(design, opts.barrier_weight, &gb);
    if (!std::isfinite(b)) {
        out.value = b;
        out.gradient = Vector::Constant(flat_size(design), std::numeric_limits<double>::quiet_NaN());
        out.data_gradient = out.gradient;
        return out;
    }
    const auto model = build_model(design, base);
    const bool frozen = opts.treatment == GainTreatment::frozen;
    const auto trace = run_filter(model, obs, frozen ? &ref.gains : nullptr);
    const auto* w = opts.mode == LossMode::whitened ? &ref.weights : nullptr;
    out.value = loss(trace, model, obs, opts.mode, w) + b;
    GradientOptions go{opts.mode, opts.treatment, w};
    out.data_gradient = gradient_flat(trace, model, obs, design, go);
    out.gradient = out.data_gradient + gb;
    return out;
}

namespace {

void track_max(Vector& acc, const Vector& g) {
    if (acc.size() != g.size()) acc = Vector::Zero(g.size());
    if (g.allFinite()) acc = acc.cwiseMax(g.cwiseAbs());
}

}  // namespace

InversionResult minimize(const DesignVars& init, const ModelSequence& base, const ObservationSeq& obs,
                         const ObjectiveOptions& obj, const FrozenReference& ref, const LbfgsOptions& opts) {
    InversionResult res;
    res.design = init;
    DesignVars work = init;
    Vector maxg = Vector::Zero(flat_size(init));
    // with a barrier the table is searched in log d, so iterates stay positive and the
    // barrier's curvature near d = 0 no longer stalls the line search
    std::deque<std::pair<Vector, Vector>> recent;
    const bool log_space = std::holds_alternative<DiffusivityTable>(init) && obj.barrier_weight > 0.0;
    ObjectiveFn fn = [&](const Vector& x, Vector& g) {
        const Vector d = log_space ? Vector(x.array().exp()) : x;
        set_flat(work, d);
        ObjectiveValue v;
        try {
            v = objective(work, base, obs, obj, ref);
        } catch (const SingularMatrix&) {
            // trial point left the region where the filter is defined; the line search backs off
            g = Vector::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
            return std::numeric_limits<double>::infinity();
        }
        recent.emplace_back(x, v.data_gradient);
        if (recent.size() > 256) recent.pop_front();
        g = log_space ? Vector(v.gradient.cwiseProduct(d)) : v.gradient;
        return v.value;
    };
    const Vector x0 = to_flat(init);
    if (log_space && !(x0.array() > 0.0).all())
        throw std::invalid_argument("minimize: barrier requires a strictly positive initial table");
    // identification only counts accepted iterates, not line-search trials
    auto accept = [&](const Vector& x) {
        for (auto it = recent.rbegin(); it != recent.rend(); ++it)
            if (it->first.size() == x.size() && it->first == x) {
                track_max(maxg, it->second);
                return;
            }
    };
    auto r = lbfgs_minimize(fn, log_space ? Vector(x0.array().log()) : x0, opts, accept);
    set_flat(res.design, log_space ? Vector(r.x.array().exp()) : r.x);
    res.loss_history = std::move(r.loss_history);
    res.grad_history = std::move(r.grad_history);
    res.iterations = r.iterations;
    res.evaluations = r.evaluations;
    res.reason = r.reason;
    res.outer_rounds = 1;
    res.max_abs_gradient = maxg;
    return res;
}

std::vector<Vector> lagged_states(const FilterTrace& trace) {
    std::vector<Vector> lin;
    lin.reserve(trace.steps.size());
    for (std::size_t k = 0; k < trace.steps.size(); ++k) lin.push_back(trace.x_prev(k));
    return lin;
}

InversionResult invert(const DesignVars& init, const ModelSequence& base, const ObservationSeq& obs,
                       const InversionOptions& opts) {
    InversionResult total;
    total.design = init;
    total.max_abs_gradient = Vector::Zero(flat_size(init));
    DesignVars cur = init;
    for (int round = 0; round < opts.outer_rounds; ++round) {
        const auto trace = run_filter(build_model(cur, base), obs);
        double lin_change = 0.0;
        if (auto* t = std::get_if<DiffusivityTable>(&cur)) {
            auto lin = lagged_states(trace);
            for (std::size_t k = 0; k < lin.size(); ++k)
                lin_change = std::max(lin_change, (lin[k] - t->linearization[k]).lpNorm<Eigen::Infinity>());
            t->linearization = std::move(lin);
        }
        FrozenReference ref{gains_of(trace), whitening_weights(trace)};
        if (lin_change > 0.0) ref = make_reference(cur, base, obs);
        auto r = minimize(cur, base, obs, opts.objective, ref, opts.lbfgs);

        const double change = (to_flat(r.design) - to_flat(cur)).lpNorm<Eigen::Infinity>();
        total.loss_history.insert(total.loss_history.end(), r.loss_history.begin(), r.loss_history.end());
        total.grad_history.insert(total.grad_history.end(), r.grad_history.begin(), r.grad_history.end());
        total.iterations += r.iterations;
        total.evaluations += r.evaluations;
        total.reason = r.reason;
        total.outer_rounds = round + 1;
        track_max(total.max_abs_gradient, r.max_abs_gradient);
        cur = std::move(r.design);
        if (change < opts.outer_tol && lin_change < opts.outer_tol) {
            total.outer_converged = true;
            break;
        }
    }
    total.design = std::move(cur);
    return total;
}

void write_design_csv(std::ostream& os, const DesignVars& design) {
    if (const auto* t = std::get_if<DiffusivityTable>(&design)) {
        csv::header(os, "design_table", {"grid", "value"});
        for (Eigen::Index j = 0; j < t->grid.size(); ++j) csv::row(os, {t->grid(j), t->values(j)});
        return;
    }
    csv::header(os, "design_transition", {"step", "row", "col", "value"});
    auto emit = [&](double step, const Matrix& F) {
        for (Eigen::Index j = 0; j < F.cols(); ++j)
            for (Eigen::Index i = 0; i < F.rows(); ++i)
                csv::row(os, {step, static_cast<double>(i), static_cast<double>(j), F(i, j)});
    };
    if (const auto* t = std::get_if<TiedTransition>(&design)) {
        emit(0, t->F);
    } else {
        const auto& p = std::get<PerStepTransition>(design);
        for (std::size_t k = 0; k < p.F.size(); ++k) emit(static_cast<double>(k + 1), p.F[k]);
    }
}

void write_history_csv(std::ostream& os, const InversionResult& res) {
    csv::header(os, "loss_history", {"iter", "loss", "gradnorm"});
    for (std::size_t i = 0; i < res.loss_history.size(); ++i)
        csv::row(os, {static_cast<double>(i), res.loss_history[i], res.grad_history[i]});
}

}  // namespace dkf
