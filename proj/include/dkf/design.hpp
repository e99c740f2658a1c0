#pragma once

#include "dkf/kalman.hpp"
#include "dkf/reaction_diffusion.hpp"

#include <string>
#include <variant>
#include <vector>

namespace dkf {

struct ShapeMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct PerStepTransition {
    std::vector<Matrix> F;
};

struct TiedTransition {
    Matrix F;
};

// d(v) tabulated on a grid; step k's operator is built at linearization[k],
// the state estimate entering that step.
struct DiffusivityTable {
    Vector grid;
    Vector values;
    PdeGeometry geometry;
    DiffusionForm form = DiffusionForm::pointwise;
    std::vector<Vector> linearization;

    void validate() const;
};

using DesignVars = std::variant<PerStepTransition, TiedTransition, DiffusivityTable>;

std::string variant_name(const DesignVars& d);
Eigen::Index flat_size(const DesignVars& d);
Vector to_flat(const DesignVars& d);
void set_flat(DesignVars& d, const Vector& flat);
std::string slot_label(const DesignVars& d, Eigen::Index i);

ModelSequence build_model(const DesignVars& design, const ModelSequence& base);

// Piecewise-linear interpolation, constant outside the grid.
double interpolate(const Vector& grid, const Vector& values, double v);
Vector interpolate(const Vector& grid, const Vector& values, const Vector& v);
// W(i, j) = weight of table entry j at state v_i
Matrix interpolation_weights(const Vector& grid, const Vector& v);

Vector uniform_grid(double lo, double hi, Eigen::Index count);

// Chain rule from per-step dL/dF_k to the flat design gradient.
Vector chain_transition_gradient(const DesignVars& design, const std::vector<Matrix>& dF);

}  // namespace dkf
