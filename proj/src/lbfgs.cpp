#include "dkf/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace dkf {

void LbfgsOptions::validate() const {
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw std::invalid_argument("LbfgsOptions: need 0 < c1 < c2 < 1");
    if (memory < 1) throw std::invalid_argument("LbfgsOptions: memory must be >= 1");
    if (max_iterations < 0 || max_line_search < 1) throw std::invalid_argument("LbfgsOptions: bad iteration limits");
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::gradient_tolerance: return "gradient_tolerance";
        case Termination::function_tolerance: return "function_tolerance";
        case Termination::max_iterations: return "max_iterations";
        case Termination::line_search_failed: return "line_search_failed";
    }
    return "unknown";
}

namespace {

struct Probe {
    double a = 0.0, f = 0.0, d = 0.0;  // step, value, directional derivative
    Vector x, g;
};

// minimizer of the cubic through (a, fa, da) and (b, fb, db), guarded to the
// interior of [a, b]; falls back to bisection
double cubic_step(const Probe& p, const Probe& q) {
    const double lo = std::min(p.a, q.a), hi = std::max(p.a, q.a);
    const double guard = 1e-3 * (hi - lo);
    const double mid = 0.5 * (lo + hi);
    if (!std::isfinite(p.f) || !std::isfinite(q.f)) return mid;
    const double d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.a - q.a);
    const double disc = d1 * d1 - p.d * q.d;
    if (disc < 0.0) return mid;
    const double d2 = std::copysign(std::sqrt(disc), q.a - p.a);
    const double den = q.d - p.d + 2.0 * d2;
    if (den == 0.0) return mid;
    const double a = q.a - (q.a - p.a) * (q.d + d2 - d1) / den;
    if (!std::isfinite(a) || a < lo + guard || a > hi - guard) return mid;
    return a;
}

class LineSearch {
public:
    LineSearch(const ObjectiveFn& fn, const LbfgsOptions& o, const Vector& x, const Vector& dir, double f0, double d0,
               int& evals)
        : fn_(fn), o_(o), x_(x), dir_(dir), f0_(f0), d0_(d0), evals_(evals) {}

    // returns true and fills out on a strong-Wolfe point; on failure out holds
    // the best sufficient-decrease point seen (or nothing if out.a == 0)
    bool run(double a1, Probe& out) {
        Probe prev;
        prev.a = 0.0;
        prev.f = f0_;
        prev.d = d0_;
        best_ = prev;
        double a = a1;
        for (int i = 0; i < o_.max_line_search; ++i) {
            Probe cur = eval(a);
            if (!std::isfinite(cur.f) || cur.f > f0_ + o_.c1 * a * d0_ || (i > 0 && cur.f >= prev.f))
                return zoom(prev, cur, out, o_.max_line_search - i);
            if (std::abs(cur.d) <= -o_.c2 * d0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.d >= 0.0) return zoom(cur, prev, out, o_.max_line_search - i);
            prev = std::move(cur);
            a *= 2.0;
        }
        out = best_;
        return false;
    }

private:
    Probe eval(double a) {
        Probe p;
        p.a = a;
        p.x = x_ + a * dir_;
        p.g.resize(x_.size());
        p.f = fn_(p.x, p.g);
        ++evals_;
        p.d = p.g.allFinite() ? p.g.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(p.d)) p.f = std::numeric_limits<double>::infinity();
        if (std::isfinite(p.f) && p.f <= f0_ + o_.c1 * a * d0_ && p.f < best_.f) best_ = p;
        return p;
    }

    bool zoom(Probe lo, Probe hi, Probe& out, int budget) {
        for (int j = 0; j < budget; ++j) {
            if (std::abs(hi.a - lo.a) <= 1e-16 * std::max(1.0, std::abs(lo.a))) break;
            Probe cur = eval(cubic_step(lo, hi));
            if (!std::isfinite(cur.f) || cur.f > f0_ + o_.c1 * cur.a * d0_ || cur.f >= lo.f) {
                hi = std::move(cur);
                continue;
            }
            if (std::abs(cur.d) <= -o_.c2 * d0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
            lo = std::move(cur);
        }
        out = best_;
        return false;
    }

    const ObjectiveFn& fn_;
    const LbfgsOptions& o_;
    const Vector& x_;
    const Vector& dir_;
    double f0_, d0_;
    int& evals_;
    Probe best_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, const Vector& x0, const LbfgsOptions& opts,
                           const IterateFn& on_accept) {
    opts.validate();
    LbfgsResult res;
    res.x = x0;
    Vector g(x0.size());
    res.f = fn(res.x, g);
    res.evaluations = 1;
    if (!std::isfinite(res.f) || !g.allFinite()) throw std::runtime_error("lbfgs: non-finite objective at start");
    if (on_accept) on_accept(res.x);
    res.loss_history.push_back(res.f);
    res.grad_history.push_back(g.lpNorm<Eigen::Infinity>());

    std::deque<Vector> S, Y;
    std::deque<double> rho;
    for (;;) {
        if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
            res.reason = Termination::gradient_tolerance;
            break;
        }
        if (res.iterations >= opts.max_iterations) {
            res.reason = Termination::max_iterations;
            break;
        }
        // two-loop recursion
        Vector q = g;
        std::vector<double> alpha(S.size());
        for (std::size_t i = S.size(); i-- > 0;) {
            alpha[i] = rho[i] * S[i].dot(q);
            q -= alpha[i] * Y[i];
        }
        const double gamma = S.empty() ? 1.0 : S.back().dot(Y.back()) / Y.back().squaredNorm();
        q *= gamma;
        for (std::size_t i = 0; i < S.size(); ++i) {
            const double beta = rho[i] * Y[i].dot(q);
            q += (alpha[i] - beta) * S[i];
        }
        Vector dir = -q;
        double d0 = g.dot(dir);
        if (!(d0 < 0.0)) {
            // lost descent; restart from steepest descent
            S.clear();
            Y.clear();
            rho.clear();
            dir = -g;
            d0 = -g.squaredNorm();
        }
        const double a1 = S.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;

        Probe step;
        LineSearch ls(fn, opts, res.x, dir, res.f, d0, res.evaluations);
        if (!ls.run(a1, step)) {
            if (step.a > 0.0 && step.f < res.f) {
                res.x = step.x;
                res.f = step.f;
                g = step.g;
                if (on_accept) on_accept(res.x);
            }
            res.reason = Termination::line_search_failed;
            break;
        }
        if (!(step.f <= res.f + opts.c1 * step.a * d0) || !(std::abs(step.d) <= -opts.c2 * d0))
            throw std::logic_error("lbfgs: accepted step violates strong Wolfe conditions");

        Vector s = step.x - res.x;
        Vector y = step.g - g;
        const double sy = s.dot(y);
        const double f_prev = res.f;
        res.x = std::move(step.x);
        res.f = step.f;
        g = std::move(step.g);
        if (on_accept) on_accept(res.x);
        ++res.iterations;
        res.loss_history.push_back(res.f);
        res.grad_history.push_back(g.lpNorm<Eigen::Infinity>());
        if (sy > 1e-300) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > opts.memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        if (opts.rel_ftol > 0.0 &&
            std::abs(f_prev - res.f) <= opts.rel_ftol * std::max({std::abs(f_prev), std::abs(res.f), 1e-300})) {
            res.reason = Termination::function_tolerance;
            break;
        }
    }
    return res;
}

}  // namespace dkf
