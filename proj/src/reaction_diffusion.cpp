#include "dkf/reaction_diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace dkf {

Vector PdeGeometry::nodes() const {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = (static_cast<double>(i) + 0.5) * dx();
    return x;
}

DiffusionForm parse_diffusion_form(const std::string& s) {
    if (s == "pointwise") return DiffusionForm::pointwise;
    if (s == "face") return DiffusionForm::face;
    throw std::invalid_argument("unknown diffusion form: " + s);
}

std::string to_string(DiffusionForm f) { return f == DiffusionForm::pointwise ? "pointwise" : "face"; }

Matrix laplacian_d2(Eigen::Index n) {
    require_dims(n >= 3, "laplacian_d2: need n >= 3");
    Matrix d2 = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d2(i, i) = -2.0;
        d2(i, (i + 1) % n) += 1.0;
        d2(i, (i + n - 1) % n) += 1.0;
    }
    return d2;
}

Matrix diffusion_operator(const PdeGeometry& g, const Vector& d, DiffusionForm form) {
    const auto n = g.n;
    require_dims(d.size() == n, "diffusion_operator: d length");
    const double inv = 1.0 / (g.dx() * g.dx());
    if (form == DiffusionForm::pointwise) return d.asDiagonal() * laplacian_d2(n) * inv;
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const Eigen::Index b = (a + 1) % n;
        const double df = 0.5 * (d(a) + d(b)) * inv;
        m(a, b) += df;
        m(a, a) -= df;
        m(b, a) += df;
        m(b, b) -= df;
    }
    return m;
}

Vector diffusion_operator_adjoint(const PdeGeometry& g, const Matrix& G, DiffusionForm form) {
    const auto n = g.n;
    require_dims(G.rows() == n && G.cols() == n, "diffusion_operator_adjoint: shape");
    const double inv = 1.0 / (g.dx() * g.dx());
    Vector c = Vector::Zero(n);
    if (form == DiffusionForm::pointwise) {
        const Matrix d2 = laplacian_d2(n);
        for (Eigen::Index i = 0; i < n; ++i) c(i) = G.row(i).dot(d2.row(i)) * inv;
        return c;
    }
    for (Eigen::Index a = 0; a < n; ++a) {
        const Eigen::Index b = (a + 1) % n;
        const double face = (G(a, b) - G(a, a) + G(b, a) - G(b, b)) * 0.5 * inv;
        c(a) += face;
        c(b) += face;
    }
    return c;
}

LinearizedStep linearized_operator(const PdeGeometry& g, const Vector& d, const Vector& v, DiffusionForm form) {
    require_dims(v.size() == g.n, "linearized_operator: state length");
    LinearizedStep s;
    s.F = Matrix::Identity(g.n, g.n) + g.dt * diffusion_operator(g, d, form);
    s.F.diagonal().array() += g.dt * (1.0 - 3.0 * v.array().square());
    s.bias = 2.0 * g.dt * v.array().cube();
    return s;
}

double true_diffusivity(double v) { return 0.1 * std::tanh(v); }

}  // namespace dkf
