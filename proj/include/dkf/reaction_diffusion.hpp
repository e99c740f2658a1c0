#pragma once

#include "dkf/numkit.hpp"

#include <functional>
#include <string>

namespace dkf {

// Periodic 1-D grid with cell-centred nodes x_i = (i + 1/2) dx.
struct PdeGeometry {
    Eigen::Index n = 16;
    double length = 5.0;
    double dt = 0.01;

    double dx() const { return length / static_cast<double>(n); }
    Vector nodes() const;
};

// pointwise:  diag(d) D2 / dx^2
// face:       conservative flux form with face values (d_i + d_{i+1}) / 2
enum class DiffusionForm { pointwise, face };
DiffusionForm parse_diffusion_form(const std::string& s);
std::string to_string(DiffusionForm f);

// periodic (1, -2, 1) stencil
Matrix laplacian_d2(Eigen::Index n);

Matrix diffusion_operator(const PdeGeometry& g, const Vector& d, DiffusionForm form);

// c_i = <G, d(diffusion_operator)/d d_i>_F
Vector diffusion_operator_adjoint(const PdeGeometry& g, const Matrix& G, DiffusionForm form);

struct LinearizedStep {
    Matrix F;
    Vector bias;
};

// F = I + dt [L(d) + diag(1 - 3 v^2)], bias = 2 dt v^3
LinearizedStep linearized_operator(const PdeGeometry& g, const Vector& d, const Vector& v, DiffusionForm form);

using Diffusivity = std::function<double(double)>;
double true_diffusivity(double v);

}  // namespace dkf
