#include "dkf/experiments.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

namespace py = pybind11;
using namespace dkf;

namespace {

py::dict trace_dict(const FilterTrace& t) {
    std::vector<Vector> x, xp;
    std::vector<Matrix> P, K;
    for (const auto& s : t.steps) {
        x.push_back(s.x_post);
        xp.push_back(s.x_pred);
        P.push_back(s.P_post);
        K.push_back(s.K);
    }
    py::dict d;
    d["x"] = x;
    d["x_pred"] = xp;
    d["P"] = P;
    d["K"] = K;
    return d;
}

py::dict metrics_dict(const StateMetrics& m) {
    py::dict d;
    d["rmse"] = m.rmse;
    d["rmse_total"] = m.rmse_total;
    d["relfrob"] = m.relfrob;
    d["mean_abs_dP"] = m.mean_abs_dP;
    return d;
}

LossMode loss_mode(const std::string& s) {
    if (s == "plain") return LossMode::plain;
    if (s == "whitened") return LossMode::whitened;
    throw std::invalid_argument("loss must be plain or whitened");
}

GainTreatment treatment(const std::string& s) {
    if (s == "coupled") return GainTreatment::coupled;
    if (s == "frozen") return GainTreatment::frozen;
    throw std::invalid_argument("gain treatment must be coupled or frozen");
}

}  // namespace

PYBIND11_MODULE(_dkf, m) {
    m.doc() = "differentiable Kalman filter core";

    py::class_<StepModel>(m, "StepModel")
        .def(py::init<>())
        .def(py::init([](Matrix F, Matrix B, Matrix H, Vector f, Vector u, Matrix Q, Matrix R) {
                 StepModel s{F, B, H, f, u, Q, R};
                 s.validate();
                 return s;
             }),
             py::arg("F"), py::arg("B"), py::arg("H"), py::arg("f"), py::arg("u"), py::arg("Q"), py::arg("R"))
        .def_readwrite("F", &StepModel::F)
        .def_readwrite("B", &StepModel::B)
        .def_readwrite("H", &StepModel::H)
        .def_readwrite("f", &StepModel::f)
        .def_readwrite("u", &StepModel::u)
        .def_readwrite("Q", &StepModel::Q)
        .def_readwrite("R", &StepModel::R);

    py::class_<ModelSequence>(m, "ModelSequence")
        .def(py::init([](Vector x0, Matrix P0, std::vector<StepModel> steps) {
                 ModelSequence s{{x0, P0}, std::move(steps)};
                 s.validate();
                 return s;
             }),
             py::arg("x0"), py::arg("P0"), py::arg("steps"))
        .def_property_readonly("nt", &ModelSequence::nt)
        .def_property_readonly("x0", [](const ModelSequence& s) { return s.initial.x; })
        .def_property_readonly("P0", [](const ModelSequence& s) { return s.initial.P; })
        .def_readwrite("steps", &ModelSequence::steps);

    m.def(
        "predict",
        [](const Vector& x, const Matrix& P, const StepModel& s) {
            auto g = predict({x, P}, s);
            return py::make_tuple(g.x, g.P);
        },
        py::arg("x"), py::arg("P"), py::arg("step"));
    m.def(
        "update",
        [](const Vector& x, const Matrix& P, const Vector& z, const Matrix& H, const Matrix& R) {
            auto g = update({x, P}, z, H, R);
            return py::make_tuple(g.x, g.P);
        },
        py::arg("x_pred"), py::arg("P_pred"), py::arg("z"), py::arg("H"), py::arg("R"));
    m.def(
        "run_filter", [](const ModelSequence& model, const ObservationSeq& obs) { return trace_dict(run_filter(model, obs)); },
        py::arg("model"), py::arg("obs"));
    m.def(
        "loss",
        [](const ModelSequence& model, const ObservationSeq& obs, const std::string& mode) {
            return loss(run_filter(model, obs), model, obs, loss_mode(mode));
        },
        py::arg("model"), py::arg("obs"), py::arg("mode") = "plain");
    m.def(
        "tied_gradient",
        [](const ModelSequence& base, const ObservationSeq& obs, const Matrix& F, const std::string& mode,
           const std::string& gains) {
            DesignVars d = TiedTransition{F};
            ObjectiveOptions o{loss_mode(mode), treatment(gains), 0.0};
            auto v = objective(d, base, obs, o, make_reference(d, base, obs));
            return py::make_tuple(v.value, unvec(v.gradient, F.rows(), F.cols()));
        },
        py::arg("base"), py::arg("obs"), py::arg("F"), py::arg("mode") = "plain", py::arg("gains") = "coupled",
        "loss and dL/dF of a shared transition matrix");

    py::class_<RocketConfig>(m, "RocketConfig")
        .def(py::init<>())
        .def_readwrite("dt", &RocketConfig::dt)
        .def_readwrite("thrust_accel", &RocketConfig::thrust_accel)
        .def_readwrite("burn_fraction", &RocketConfig::burn_fraction)
        .def_readwrite("g", &RocketConfig::g)
        .def_readwrite("nt", &RocketConfig::nt)
        .def_readwrite("sigma", &RocketConfig::sigma)
        .def_readwrite("x0", &RocketConfig::x0)
        .def_readwrite("p0", &RocketConfig::p0)
        .def_readwrite("q", &RocketConfig::q)
        .def_readwrite("seed", &RocketConfig::seed);

    m.def("rocket_true_F", &rocket_true_F, py::arg("dt") = 0.1);
    m.def("rocket_table_initial_F", &rocket_table_initial_F);
    m.def("rocket_model", &rocket_model, py::arg("cfg"), py::arg("F"));
    m.def(
        "rocket_truth",
        [](const RocketConfig& cfg) {
            auto r = rocket_truth(cfg);
            py::dict d;
            d["states"] = r.states;
            d["clean"] = r.clean;
            d["noisy"] = r.noisy;
            return d;
        },
        py::arg("cfg"));

    m.def(
        "verify",
        [](int nt, double sigma, double eps) {
            VerifyOptions vo;
            vo.rocket.nt = nt;
            vo.rocket.sigma = sigma;
            vo.eps = eps;
            auto o = run_verify(vo);
            py::dict per;
            for (const auto& b : block_names()) per[py::str(b)] = o.report.max_error(b);
            py::dict d;
            d["max_error"] = o.max_error;
            d["per_block"] = per;
            d["rows"] = o.report.rows.size();
            return d;
        },
        py::arg("nt") = 100, py::arg("sigma") = verify_rocket_defaults().sigma, py::arg("eps") = 1e-6,
        "finite-difference check of the analytic Jacobian blocks on the rocket model");

    m.def(
        "invert_rocket",
        [](double sigma, int nt, std::uint64_t seed, const std::string& init, const std::string& variant) {
            RocketOptions ro;
            ro.rocket.nt = nt;
            ro.rocket.seed = seed;
            ro.variant = variant;
            if (init == "perturbed")
                ro.init = RocketInit::perturbed;
            else if (init != "table")
                throw std::invalid_argument("init must be table or perturbed");
            auto o = run_rocket_sigma(ro, sigma);
            py::dict d;
            d["F_initial"] = o.F_init;
            d["F_optimized"] = o.F_opt;
            d["rmse_initial"] = o.rmse_init;
            d["rmse_optimized"] = o.rmse_opt;
            d["loss_history"] = o.inversion.loss_history;
            d["termination"] = to_string(o.inversion.reason);
            return d;
        },
        py::arg("sigma") = 0.005, py::arg("nt") = 100, py::arg("seed") = 0, py::arg("init") = "table",
        py::arg("variant") = "tied");

    m.def(
        "invert_allen_cahn",
        [](double sigma, std::uint64_t seed, int m_stripes, int epochs) {
            AllenCahnOptions ao;
            ao.ac.seed = seed;
            ao.ac.m_stripes = m_stripes;
            ao.train.epochs = epochs;
            auto o = run_allen_cahn_sigma(ao, sigma);
            std::vector<bool> keep = o.ident.keep;
            py::dict d;
            d["grid"] = o.table.grid;
            d["table"] = o.table.values;
            d["identified"] = keep;
            d["posterior_std"] = o.ident.posterior_std;
            d["closure"] = o.closure.model;
            d["d_rmse"] = o.d_rmse_dnn;
            d["baseline"] = metrics_dict(o.m_baseline);
            d["inverted"] = metrics_dict(o.m_inverted);
            d["dnn"] = metrics_dict(o.m_dnn);
            return d;
        },
        py::arg("sigma") = 0.0025, py::arg("seed") = 0, py::arg("m_stripes") = 4, py::arg("epochs") = 5000);

    py::class_<MlpModel>(m, "MlpModel")
        .def_readonly("sizes", &MlpModel::sizes)
        .def_property_readonly("parameter_count", &MlpModel::parameter_count)
        .def("__call__", [](const MlpModel& net, const Vector& x) { return forward(net, x); })
        .def("diffusivity", [](const MlpModel& net, const Vector& v) { return predict_diffusivity(net, v); })
        .def("save", [](const MlpModel& net, const std::string& path) { save_checkpoint(path, net); })
        .def_static("load", [](const std::string& path) { return load_checkpoint(path); });

    m.def(
        "train_closure",
        [](const Vector& v, const Vector& d, std::vector<Eigen::Index> sizes, std::uint64_t seed, int epochs,
           double lr) {
            if (v.size() != d.size()) throw std::invalid_argument("train_closure: v and d differ in length");
            Dataset ds;
            ds.provenance = "python";
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                ds.inputs.push_back(Vector::Constant(1, v(i)));
                ds.targets.push_back(Vector::Constant(1, d(i)));
            }
            TrainConfig tc;
            tc.epochs = epochs;
            tc.learning_rate = lr;
            tc.seed = Rng::derive_seed(seed, "closure/train");
            Rng init = Rng(seed).derive("closure/init");
            auto r = train(MlpModel::create(sizes, init), ds, tc);
            return py::make_tuple(r.model, r.train_loss, r.val_loss);
        },
        py::arg("v"), py::arg("d"), py::arg("sizes") = std::vector<Eigen::Index>{1, 32, 32, 1}, py::arg("seed") = 0,
        py::arg("epochs") = 5000, py::arg("lr") = 1e-3);

    m.def("true_diffusivity", py::vectorize(&true_diffusivity));
    m.def("derive_seed", &Rng::derive_seed, py::arg("seed"), py::arg("key"));
    m.def("sha256_file", [](const std::filesystem::path& p) { return sha256_file(p); });
    m.attr("RNG_ALGORITHM") = Rng::kAlgorithm;
}
