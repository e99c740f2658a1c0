#pragma once

#include "dkf/numkit.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dkf {

struct LbfgsOptions {
    int memory = 10;
    int max_iterations = 500;
    double grad_tol = 1e-8;  // on the infinity norm
    // stop when |f_prev - f| <= rel_ftol * max(|f_prev|, |f|); 0 disables
    double rel_ftol = 0.0;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search = 40;

    void validate() const;
};

enum class Termination { gradient_tolerance, function_tolerance, max_iterations, line_search_failed };
std::string to_string(Termination t);

struct LbfgsResult {
    Vector x;
    double f = 0.0;
    std::vector<double> loss_history;  // accepted iterates, starting at x0
    std::vector<double> grad_history;  // infinity norms
    int iterations = 0;
    int evaluations = 0;
    Termination reason = Termination::max_iterations;
};

// f(x, g) returns the value and fills the gradient.
using ObjectiveFn = std::function<double(const Vector&, Vector&)>;

// called with x0 and every accepted iterate
using IterateFn = std::function<void(const Vector&)>;

LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, const Vector& x0, const LbfgsOptions& opts = {},
                           const IterateFn& on_accept = {});

}  // namespace dkf
