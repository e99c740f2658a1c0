#include "dkf/design.hpp"

#include <algorithm>

namespace dkf {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

void DiffusivityTable::validate() const {
    if (grid.size() < 2 || grid.size() != values.size()) throw ShapeMismatch("DiffusivityTable: grid/values length");
    for (Eigen::Index j = 1; j < grid.size(); ++j)
        if (!(grid(j) > grid(j - 1))) throw ShapeMismatch("DiffusivityTable: grid not strictly increasing");
    for (const auto& v : linearization)
        if (v.size() != geometry.n) throw ShapeMismatch("DiffusivityTable: linearization state length");
}

std::string variant_name(const DesignVars& d) {
    return std::visit(overloaded{[](const PerStepTransition&) { return std::string("per_step"); },
                                 [](const TiedTransition&) { return std::string("tied"); },
                                 [](const DiffusivityTable&) { return std::string("table"); }},
                      d);
}

Eigen::Index flat_size(const DesignVars& d) {
    return std::visit(overloaded{[](const PerStepTransition& p) {
                                     Eigen::Index s = 0;
                                     for (const auto& f : p.F) s += f.size();
                                     return s;
                                 },
                                 [](const TiedTransition& t) { return t.F.size(); },
                                 [](const DiffusivityTable& t) { return t.values.size(); }},
                      d);
}

Vector to_flat(const DesignVars& d) {
    Vector out(flat_size(d));
    std::visit(overloaded{[&](const PerStepTransition& p) {
                              Eigen::Index o = 0;
                              for (const auto& f : p.F) {
                                  out.segment(o, f.size()) = vec_view(f);
                                  o += f.size();
                              }
                          },
                          [&](const TiedTransition& t) { out = vec_view(t.F); },
                          [&](const DiffusivityTable& t) { out = t.values; }},
               d);
    return out;
}

void set_flat(DesignVars& d, const Vector& flat) {
    if (flat.size() != flat_size(d)) throw ShapeMismatch("set_flat: length");
    std::visit(overloaded{[&](PerStepTransition& p) {
                              Eigen::Index o = 0;
                              for (auto& f : p.F) {
                                  f = unvec(flat.segment(o, f.size()), f.rows(), f.cols());
                                  o += f.size();
                              }
                          },
                          [&](TiedTransition& t) { t.F = unvec(flat, t.F.rows(), t.F.cols()); },
                          [&](DiffusivityTable& t) { t.values = flat; }},
               d);
}

std::string slot_label(const DesignVars& d, Eigen::Index i) {
    return std::visit(overloaded{[&](const PerStepTransition& p) {
                                     const auto n = p.F.front().rows();
                                     const auto per = p.F.front().size();
                                     const auto k = i / per, e = i % per;
                                     return "F" + std::to_string(k + 1) + "(" + std::to_string(e % n) + "," +
                                            std::to_string(e / n) + ")";
                                 },
                                 [&](const TiedTransition& t) {
                                     const auto n = t.F.rows();
                                     return "F(" + std::to_string(i % n) + "," + std::to_string(i / n) + ")";
                                 },
                                 [&](const DiffusivityTable&) { return "d[" + std::to_string(i) + "]"; }},
                      d);
}

ModelSequence build_model(const DesignVars& design, const ModelSequence& base) {
    ModelSequence m = base;
    const auto n = base.nx();
    std::visit(overloaded{[&](const PerStepTransition& p) {
                              if (p.F.size() != m.nt()) throw ShapeMismatch("PerStepTransition: step count");
                              for (std::size_t k = 0; k < m.nt(); ++k) {
                                  if (p.F[k].rows() != n || p.F[k].cols() != n)
                                      throw ShapeMismatch("PerStepTransition: F shape");
                                  m.steps[k].F = p.F[k];
                              }
                          },
                          [&](const TiedTransition& t) {
                              if (t.F.rows() != n || t.F.cols() != n) throw ShapeMismatch("TiedTransition: F shape");
                              for (auto& s : m.steps) s.F = t.F;
                          },
                          [&](const DiffusivityTable& t) {
                              t.validate();
                              if (t.geometry.n != n || t.linearization.size() != m.nt())
                                  throw ShapeMismatch("DiffusivityTable: geometry/linearization vs base");
                              for (std::size_t k = 0; k < m.nt(); ++k) {
                                  const Vector& v = t.linearization[k];
                                  auto op = linearized_operator(t.geometry, interpolate(t.grid, t.values, v), v,
                                                                t.form);
                                  m.steps[k].F = std::move(op.F);
                                  m.steps[k].f = base.steps[k].f + op.bias;
                              }
                          }},
               design);
    return m;
}

double interpolate(const Vector& grid, const Vector& values, double v) {
    const auto m = grid.size();
    if (v <= grid(0)) return values(0);
    if (v >= grid(m - 1)) return values(m - 1);
    const auto it = std::upper_bound(grid.data(), grid.data() + m, v);
    const auto j = static_cast<Eigen::Index>(it - grid.data()) - 1;
    const double t = (v - grid(j)) / (grid(j + 1) - grid(j));
    return (1.0 - t) * values(j) + t * values(j + 1);
}

Vector interpolate(const Vector& grid, const Vector& values, const Vector& v) {
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = interpolate(grid, values, v(i));
    return out;
}

Matrix interpolation_weights(const Vector& grid, const Vector& v) {
    const auto m = grid.size();
    Matrix w = Matrix::Zero(v.size(), m);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) <= grid(0)) {
            w(i, 0) = 1.0;
        } else if (v(i) >= grid(m - 1)) {
            w(i, m - 1) = 1.0;
        } else {
            const auto it = std::upper_bound(grid.data(), grid.data() + m, v(i));
            const auto j = static_cast<Eigen::Index>(it - grid.data()) - 1;
            const double t = (v(i) - grid(j)) / (grid(j + 1) - grid(j));
            w(i, j) = 1.0 - t;
            w(i, j + 1) = t;
        }
    }
    return w;
}

Vector uniform_grid(double lo, double hi, Eigen::Index count) {
    return Vector::LinSpaced(count, lo, hi);
}

Vector chain_transition_gradient(const DesignVars& design, const std::vector<Matrix>& dF) {
    Vector g = Vector::Zero(flat_size(design));
    std::visit(overloaded{[&](const PerStepTransition& p) {
                              Eigen::Index o = 0;
                              for (std::size_t k = 0; k < p.F.size(); ++k) {
                                  g.segment(o, dF[k].size()) = vec_view(dF[k]);
                                  o += dF[k].size();
                              }
                          },
                          [&](const TiedTransition&) {
                              Matrix acc = Matrix::Zero(dF.front().rows(), dF.front().cols());
                              for (const auto& m : dF) acc += m;
                              g = vec_view(acc);
                          },
                          [&](const DiffusivityTable& t) {
                              for (std::size_t k = 0; k < dF.size(); ++k) {
                                  Vector c = t.geometry.dt * diffusion_operator_adjoint(t.geometry, dF[k], t.form);
                                  g += interpolation_weights(t.grid, t.linearization[k]).transpose() * c;
                              }
                          }},
               design);
    return g;
}

}  // namespace dkf
