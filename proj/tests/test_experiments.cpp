#include "doctest.h"
#include "support.hpp"

#include "dkf/csv.hpp"
#include "dkf/experiments.hpp"

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace dkf;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dkf_test_" + std::to_string(::getpid())) / name;
    std::filesystem::remove_all(p);
    return p;
}

struct SmallAc {
    AllenCahnConfig cfg;
    TruthRun run;
    ModelSequence base;
    DiffusivityTable table;

    explicit SmallAc(double hi = 1.0) {
        cfg.nt = 6;
        cfg.m_stripes = 2;
        run = ac_truth(cfg);
        base = ac_base_model(cfg, run.states[0]);
        table.geometry = cfg.geometry;
        table.form = DiffusionForm::face;
        table.grid = uniform_grid(0.0, hi, 9);
        table.values = Vector::Constant(9, 0.3);
        table.linearization.assign(base.nt(), run.states[0]);
    }
};

}  // namespace

TEST_CASE("lbfgs reports x0 and every accepted iterate") {
    std::vector<Vector> seen;
    auto f = [](const Vector& x, Vector& g) {
        g = 2.0 * (x.array() - 1.0).matrix();
        return (x.array() - 1.0).square().sum();
    };
    auto r = lbfgs_minimize(f, Vector::Zero(3), {}, [&](const Vector& x) { seen.push_back(x); });
    REQUIRE(seen.size() == static_cast<std::size_t>(r.iterations) + 1);
    CHECK(seen.front() == Vector::Zero(3));
    CHECK(seen.back() == r.x);
}

TEST_CASE("barrier inversion keeps the table positive and lowers the loss") {
    SmallAc ac;
    InversionOptions io;
    io.objective = {LossMode::whitened, GainTreatment::frozen, 1e-6};
    io.lbfgs.max_iterations = 200;
    io.outer_rounds = 5;
    auto r = invert(ac.table, ac.base, ac.run.noisy, io);
    const auto& t = std::get<DiffusivityTable>(r.design);
    CHECK((t.values.array() > 0.0).all());
    CHECK(r.loss_history.back() < r.loss_history.front());
    CHECK(r.max_abs_gradient.allFinite());
}

TEST_CASE("barrier inversion rejects a non-positive start") {
    SmallAc ac;
    ac.table.values(3) = 0.0;
    ObjectiveOptions o{LossMode::plain, GainTreatment::coupled, 1e-6};
    auto ref = make_reference(ac.table, ac.base, ac.run.noisy);
    CHECK_THROWS_AS(minimize(ac.table, ac.base, ac.run.noisy, o, ref, {}), std::invalid_argument);
}

TEST_CASE("identifiability: entries the states never reach keep the prior") {
    SmallAc ac(4.0);  // grid spacing 0.5; states stay within about [0, 1]
    InversionResult inv;
    inv.max_abs_gradient = Vector::Ones(9);
    ac.table.linearization.assign(ac.run.states.begin(), ac.run.states.end() - 1);
    AllenCahnOptions o;
    auto id = table_identifiability(ac.table, inv, ac.base, ac.run.noisy, o);
    REQUIRE(id.posterior_std.size() == 9);
    for (Eigen::Index j = 4; j < 9; ++j) {
        CHECK(id.posterior_std(j) == doctest::Approx(o.prior_std).epsilon(1e-12));
        CHECK_FALSE(id.keep[static_cast<std::size_t>(j)]);
    }
    CHECK(id.posterior_std(0) < o.ident_std);
    CHECK(id.keep[0]);

    inv.max_abs_gradient(0) = 0.0;  // never moved by the optimizer
    CHECK_FALSE(table_identifiability(ac.table, inv, ac.base, ac.run.noisy, o).keep[0]);

    auto ds = closure_dataset(ac.table, id, "test");
    std::size_t kept = 0;
    for (bool k : id.keep) kept += k;
    CHECK(ds.size() == kept);
}

TEST_CASE("closure dataset round trip and missing input") {
    Dataset d;
    d.provenance = "unit";
    for (double v : {0.0, 0.125, 0.9}) {
        d.inputs.push_back(Vector::Constant(1, v));
        d.targets.push_back(Vector::Constant(1, true_diffusivity(v) + 1e-3));
    }
    const auto dir = scratch("dataset");
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "closure_dataset.csv");
        write_closure_dataset(os, d);
    }
    auto back = load_closure_dataset(dir.string());
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.inputs[i](0) == d.inputs[i](0));
        CHECK(back.targets[i](0) == d.targets[i](0));
    }
    CHECK_THROWS_AS(load_closure_dataset((dir / "absent.csv").string()), MissingInput);
    CHECK_THROWS_AS(load_closure_dataset(scratch("empty_dir").string()), MissingInput);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("verify bundle and manifest") {
    const auto dir = scratch("verify");
    VerifyOptions vo;
    vo.rocket.nt = 10;
    ReportBundle out(dir, "verify");
    CHECK(cmd_verify(vo, out) == 0);
    out.finalize(0.5);
    std::ifstream is(dir / "manifest.json");
    auto m = nlohmann::json::parse(is);
    CHECK(m["command"] == "verify");
    CHECK(m["versions"]["rng"] == Rng::kAlgorithm);
    std::vector<std::string> paths;
    for (const auto& f : m["files"]) {
        paths.push_back(f["path"]);
        CHECK(f["sha256"] == sha256_file(dir / f["path"].get<std::string>()));
    }
    CHECK(paths == std::vector<std::string>{"summary.json", "verification.csv", "verification.svg"});
    std::ifstream ss(dir / "summary.json");
    auto s = nlohmann::json::parse(ss);
    CHECK(s["results"]["below_alert_1e-4"] == true);
    CHECK(s["results"]["rows"] == 50);

    // the alert threshold maps to exit 2
    vo.alert = 1e-30;
    ReportBundle strict(scratch("verify_strict"), "verify");
    CHECK(cmd_verify(vo, strict) == 2);
    std::filesystem::remove_all(dir.parent_path());
}

TEST_CASE("rocket fixtures") {
    CHECK_FALSE(rocket_table_target(0.01).has_value());
    CHECK(rocket_table_target(0.005).value()(0, 1) == 0.100005);
    RocketOptions ro;
    CHECK(rocket_initial_F(ro) == rocket_table_initial_F());
    ro.init = RocketInit::perturbed;
    const Matrix a = rocket_initial_F(ro), b = rocket_initial_F(ro);
    CHECK(a == b);
    const double dev = (a - rocket_true_F(ro.rocket.dt)).norm();
    CHECK(dev > 0.0);
    CHECK(dev < 0.5);
}
