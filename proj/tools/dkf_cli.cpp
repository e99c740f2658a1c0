#include "dkf/experiments.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string out;
    std::vector<double> sigmas;
    int threads = 1;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "root seed");
    sub->add_option("--out", c.out, "output directory (default $DKF_OUT_ROOT/<command> or runs/<command>)");
    sub->add_option("--sigma", c.sigmas, "observation noise level(s)");
    sub->add_option("--threads", c.threads, "workers for the noise-level fan-out")->check(CLI::PositiveNumber);
}

std::filesystem::path out_dir(const Common& c, const std::string& cmd) {
    if (!c.out.empty()) return c.out;
    const char* root = std::getenv("DKF_OUT_ROOT");
    return std::filesystem::path(root && *root ? root : "runs") / cmd;
}

const std::map<std::string, dkf::LossMode> kLoss{{"plain", dkf::LossMode::plain},
                                                 {"whitened", dkf::LossMode::whitened}};
const std::map<std::string, dkf::GainTreatment> kGain{{"frozen", dkf::GainTreatment::frozen},
                                                      {"coupled", dkf::GainTreatment::coupled}};
const std::map<std::string, dkf::DiffusionForm> kForm{{"pointwise", dkf::DiffusionForm::pointwise},
                                                      {"face", dkf::DiffusionForm::face}};

void add_objective(CLI::App* sub, dkf::ObjectiveOptions& o, dkf::LbfgsOptions& l, int& rounds) {
    sub->add_option("--loss", o.mode, "plain | whitened")->transform(CLI::CheckedTransformer(kLoss));
    sub->add_option("--gain", o.treatment, "frozen | coupled")->transform(CLI::CheckedTransformer(kGain));
    sub->add_option("--max-iter", l.max_iterations, "L-BFGS iterations per outer round");
    sub->add_option("--grad-tol", l.grad_tol, "L-BFGS gradient tolerance (infinity norm)");
    sub->add_option("--outer-rounds", rounds, "gain/linearization refresh rounds");
}

void add_train(CLI::App* sub, dkf::TrainConfig& t) {
    sub->add_option("--epochs", t.epochs);
    sub->add_option("--lr", t.learning_rate);
    sub->add_option("--batch-size", t.batch_size, "0 = full batch");
    sub->add_option("--val-fraction", t.validation_fraction);
}

template <class F>
int run_bundle(const std::string& cmd, const Common& c, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = out_dir(c, cmd);
    dkf::ReportBundle out(dir, cmd);
    const int code = body(out);
    out.finalize(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    std::cout << cmd << ": wrote " << out.files().size() + 1 << " files to " << dir.string() << " (exit " << code
              << ")\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dkf: differentiable Kalman filter experiments"};
    app.require_subcommand(1);
    // read by the top-level app; subcommand options go in a [<command>] section
    app.set_config("--config", "", "TOML/INI file with a [<command>] section; command line flags take precedence");
    app.fallthrough();
    app.allow_config_extras(false);

    Common cv, cr, ca, cc;

    dkf::VerifyOptions vo;
    auto* verify = app.add_subcommand("verify", "check the adjoint Jacobian blocks against finite differences");
    add_common(verify, cv);
    verify->add_option("--nt", vo.rocket.nt);
    verify->add_option("--eps", vo.eps, "finite difference step");
    verify->add_option("--alert", vo.alert, "exit 2 if any block error reaches this");

    dkf::RocketOptions ro;
    std::string rinit = "table";
    auto* rocket = app.add_subcommand("rocket", "transition matrix inversion on the rocket benchmark");
    add_common(rocket, cr);
    rocket->add_option("--nt", ro.rocket.nt);
    rocket->add_option("--init", rinit, "table | perturbed")->check(CLI::IsMember({"table", "perturbed"}));
    rocket->add_option("--init-sigma", ro.init_sigma);
    rocket->add_option("--variant", ro.variant, "tied | per_step")->check(CLI::IsMember({"tied", "per_step"}));
    add_objective(rocket, ro.objective, ro.lbfgs, ro.outer_rounds);

    dkf::AllenCahnOptions ao;
    ao.ac.m_stripes = 4;
    auto* ac = app.add_subcommand("allen-cahn", "diffusivity table inversion and closure on Allen-Cahn");
    add_common(ac, ca);
    ac->add_option("--nt", ao.ac.nt);
    ac->add_option("--m-stripes", ao.ac.m_stripes);
    ac->add_option("--form", ao.form, "pointwise | face")->transform(CLI::CheckedTransformer(kForm));
    ac->add_option("--grid-points", ao.grid_points);
    ac->add_option("--d-init", ao.d_init);
    ac->add_option("--barrier", ao.objective.barrier_weight);
    ac->add_option("--ident-std", ao.ident_std, "keep table entries with posterior std below this");
    add_objective(ac, ao.objective, ao.lbfgs, ao.outer_rounds);
    add_train(ac, ao.train);

    dkf::ClosureOptions co;
    std::string csrc = "inversion";
    auto* closure = app.add_subcommand("closure", "train the MLP closure from stored inversion output");
    add_common(closure, cc);
    closure->add_option("--input", co.input, "closure_dataset.csv or a directory containing one");
    closure->add_option("--source", csrc, "inversion | truth")->check(CLI::IsMember({"inversion", "truth"}));
    closure->add_option("--samples", co.truth_samples, "truth source sample count");
    add_train(closure, co.train);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*verify) {
            vo.rocket.seed = cv.seed;
            if (cv.sigmas.size() > 1) throw std::invalid_argument("verify: takes a single --sigma");
            if (!cv.sigmas.empty()) vo.rocket.sigma = cv.sigmas[0];
            vo.rocket.validate();
            return run_bundle("verify", cv, [&](dkf::ReportBundle& out) { return dkf::cmd_verify(vo, out); });
        }
        if (*rocket) {
            ro.rocket.seed = cr.seed;
            if (!cr.sigmas.empty()) ro.sigmas = cr.sigmas;
            ro.init = rinit == "table" ? dkf::RocketInit::table : dkf::RocketInit::perturbed;
            ro.rocket.validate();
            ro.lbfgs.validate();
            return run_bundle("rocket", cr, [&](dkf::ReportBundle& out) { return dkf::cmd_rocket(ro, out, cr.threads); });
        }
        if (*ac) {
            ao.ac.seed = ca.seed;
            if (!ca.sigmas.empty()) ao.sigmas = ca.sigmas;
            ao.ac.validate();
            ao.lbfgs.validate();
            ao.train.validate();
            return run_bundle("allen-cahn", ca,
                              [&](dkf::ReportBundle& out) { return dkf::cmd_allen_cahn(ao, out, ca.threads); });
        }
        if (*closure) {
            co.seed = cc.seed;
            co.source = csrc == "truth" ? dkf::ClosureSource::truth : dkf::ClosureSource::inversion;
            if (co.source == dkf::ClosureSource::inversion && co.input.empty())
                throw dkf::MissingInput("closure: --input is required with --source inversion");
            co.train.validate();
            // load before creating the output directory so a missing input leaves nothing behind
            if (co.source == dkf::ClosureSource::inversion) dkf::load_closure_dataset(co.input);
            return run_bundle("closure", cc, [&](dkf::ReportBundle& out) { return dkf::cmd_closure(co, out); });
        }
    } catch (const dkf::MissingInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
