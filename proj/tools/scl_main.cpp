#include "cli.hpp"

#include "scl/errors.hpp"
#include "scl/forward_sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace scl::cli {

std::string ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
    return dir;
}

namespace {

RunConfig load(const std::string& file, const Overrides& o) {
    if (file.empty()) throw ConfigError("--config is required");
    RunConfig c = load_run_config(file);
    if (o.paths) c.paths = *o.paths;
    if (o.steps) c.steps = *o.steps;
    if (o.seed) c.seed = *o.seed;
    if (o.order) c.order = *o.order;
    if (o.form) c.form = *o.form;
    if (o.method) c.method = adjoint_method_from_string(*o.method);
    if (o.out) c.out = *o.out;
    finalize_run_config(c);
    return c;
}

void require_valid(const ControlProblem& p) {
    const auto v = validate_problem(p);
    if (!v.pass) {
        std::string msg = "problem '" + p.name + "' failed oracle validation";
        for (const auto& i : v.issues) msg += "; " + i;
        throw OracleError(msg);
    }
}

// The reference control must stay inside U on the simulated paths.
void require_admissible(const ControlProblem& p, const PathBundle& b) {
    Vec u(p.control_dim);
    const std::size_t probe = std::min<std::size_t>(b.paths(), 64);
    for (std::size_t path = 0; path < probe; ++path)
        for (std::size_t k = 0; k < b.grid().steps; ++k) {
            b.control_at(path, k, u);
            if (!p.control_set.contains(u, 1e-9))
                throw DomainError("problem_model", "reference control leaves the control set at t = " +
                                                       std::to_string(b.grid().t(k)));
        }
}

struct Pipeline {
    RunConfig cfg;
    Timings timings;
    PathBundle ubar;
    AdjointSolution adj;
    KernelFrames frames;
    SingularityReport singular;

    ConditionOptions condition_options() const {
        ConditionOptions o;
        o.k_sigma = cfg.k_sigma;
        o.theta_ladder = cfg.theta_ladder;
        o.taus = cfg.taus;
        o.tau_count = cfg.tau_count;
        o.v_grid = cfg.v_grid;
        o.degree = cfg.degree;
        return o;
    }
    void simulate() {
        timings.start("validate");
        require_valid(cfg.problem);
        timings.start("simulate");
        ubar = simulate_state(cfg.problem, cfg.ubar, TimeGrid(cfg.steps, cfg.problem.horizon), cfg.paths, cfg.seed);
        require_admissible(cfg.problem, ubar);
        timings.stop();
    }
    void adjoints() {
        timings.start("adjoint");
        AdjointOptions ao;
        ao.method = cfg.method;
        ao.degree = cfg.degree;
        adj = solve_adjoints(cfg.problem, ubar, ao);
        timings.start("frames");
        frames = build_kernel_frames(cfg.problem, ubar, adj);
        singular = classical_singularity_check(frames);
        timings.stop();
    }
    Json report(const std::string& kind, Json result) const {
        return make_report(kind, std::move(result), cfg.echo, cfg.echo.contains("timings") ? &timings : nullptr);
    }
};

int cmd_validate(const std::string& file, const Overrides& o) {
    const RunConfig c = load(file, o);
    const auto v = validate_problem(c.problem);
    const std::string dir = ensure_out_dir(c.out);
    write_json(dir + "/validate.json", make_report("validate", to_json(v), c.echo));
    std::cout << "validate: " << c.problem.name << " " << (v.pass ? "pass" : "FAIL") << "\n";
    for (const auto& i : v.issues) std::cout << "  " << i << "\n";
    if (!v.pass) throw OracleError("problem '" + c.problem.name + "' failed oracle validation");
    return kOk;
}

Pipeline make_pipeline(const std::string& file, const Overrides& o) {
    Pipeline pl;
    pl.cfg = load(file, o);
    if (o.timings) pl.cfg.echo["timings"] = true;
    return pl;
}

int cmd_simulate(const std::string& file, const Overrides& o) {
    auto pl = make_pipeline(file, o);
    pl.simulate();
    const auto cost = evaluate_cost(pl.cfg.problem, pl.ubar);
    const std::string dir = ensure_out_dir(pl.cfg.out);
    write_bundle(dir + "/bundle.sclb", pl.ubar, pl.cfg.problem.control_dim);
    write_json(dir + "/simulate.json",
               pl.report("simulate", {{"cost", cost.mean}, {"cost_stderr", cost.std_error}, {"bundle", "bundle.sclb"}}));
    std::cout << "J(ubar) = " << cost.mean << " +- " << cost.std_error << "\n";
    return kOk;
}

int cmd_adjoint(const std::string& file, const Overrides& o) {
    auto pl = make_pipeline(file, o);
    pl.simulate();
    pl.adjoints();
    const auto y = simulate_variational(pl.cfg.problem, pl.ubar, PerturbationSpec::convex(pl.cfg.direction), true);
    const auto duality = adjoint_duality_check(pl.cfg.problem, pl.ubar, pl.adj, y);
    const std::string dir = ensure_out_dir(pl.cfg.out);
    write_adjoint_csv(dir + "/adjoint.csv", pl.adj, pl.ubar.grid());
    Json result = {{"method", to_string(pl.adj.method)},
                   {"degree", pl.adj.degree},
                   {"symmetry_defect", pl.adj.symmetry_defect},
                   {"level_stderr", pl.adj.level_stderr},
                   {"slope_stderr", pl.adj.slope_stderr},
                   {"duality", to_json(duality)},
                   {"singularity", to_json(pl.singular)},
                   {"table", "adjoint.csv"}};
    write_json(dir + "/adjoint.json", pl.report("adjoint", result));
    std::cout << "adjoints: " << to_string(pl.adj.method) << ", symmetry defect " << pl.adj.symmetry_defect << "\n";
    for (const auto& d : duality)
        std::cout << "  duality " << d.identity << ": residual " << d.residual << " (" << (d.pass ? "pass" : "FAIL")
                  << ")\n";
    return kOk;
}

int cmd_check(const std::string& file, const Overrides& o) {
    auto pl = make_pipeline(file, o);
    pl.simulate();
    pl.adjoints();
    const auto& p = pl.cfg.problem;
    const auto opts = pl.condition_options();
    const std::string dir = ensure_out_dir(pl.cfg.out);

    pl.timings.start("conditions");
    const auto first = needle_first_order_test(p, pl.frames, opts);
    Json result = {{"singularity", to_json(pl.singular)},
                   {"s_integrability", s_integrability_diagnostic(pl.frames).mean},
                   {"first_order", to_json(first)}};
    Verdict global = first.global_verdict;
    if (pl.cfg.order == 2) {
        ConditionReport rep;
        if (pl.cfg.form == "integral") {
            rep = integral_type_test(p, pl.ubar, pl.frames, PerturbationSpec::convex(pl.cfg.direction), &pl.singular,
                                     opts);
        } else if (pl.cfg.form == "martingale") {
            const auto kernel = direction_kernel(pl.frames, pl.ubar, pl.cfg.degree);
            std::optional<FundamentalMatrixPath> fmp;
            if (!kernel.is_zero()) fmp = simulate_fundamental(p, pl.ubar);
            rep = pointwise_martingale_test(p, pl.frames, fmp ? &*fmp : nullptr, kernel, &pl.singular, opts);
            result["kernel_reconstruction_error"] = kernel.reconstruction_error();
        } else {
            // Deterministic kernel frames have zero Malliavin derivatives.
            const bool deterministic = pl.frames.shared;
            const auto gS = plugins::zero(p.control_dim, p.state_dim);
            const auto gU = plugins::zero(p.control_dim, 1);
            const bool haveS = deterministic || pl.cfg.grad_S == "zero";
            const bool haveU = deterministic || pl.cfg.grad_ubar == "zero";
            rep = pointwise_malliavin_test(p, pl.frames, *pl.ubar.brownian, haveS ? &gS : nullptr,
                                           haveU ? &gU : nullptr, &pl.singular, opts);
        }
        write_condition_csv(dir + "/cells.csv", rep);
        result["condition"] = to_json(rep, pl.cfg.echo);
        global = rep.global_verdict;
    }
    pl.timings.stop();
    result["global_verdict"] = to_string(global);
    write_json(dir + "/check.json", pl.report("check", result));
    std::cout << "singular: " << (pl.singular.singular ? "yes" : "no") << "\n";
    std::cout << "global_verdict: " << to_string(global) << "\n";
    return kOk;
}

}  // namespace

}  // namespace scl::cli

int main(int argc, char** argv) {
    using namespace scl::cli;
    CLI::App app{"Second-order necessary-condition checks for stochastic optimal control"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SCL_VERSION);

    std::string config;
    std::string id;
    Overrides o;
    auto add_common = [&](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", config, "run configuration (JSON)")->required();
        sub->add_option_function<std::size_t>("--paths", [&](const std::size_t& v) { o.paths = v; }, "Monte Carlo paths");
        sub->add_option_function<std::size_t>("--steps", [&](const std::size_t& v) { o.steps = v; }, "time steps");
        sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { o.seed = v; }, "seed");
        sub->add_option_function<int>("--order", [&](const int& v) { o.order = v; }, "1 or 2");
        sub->add_option_function<std::string>("--form", [&](const std::string& v) { o.form = v; },
                                              "integral | martingale | malliavin");
        sub->add_option_function<std::string>("--method", [&](const std::string& v) { o.method = v; },
                                              "auto | analytic | regression");
        sub->add_option_function<std::string>("--out", [&](const std::string& v) { o.out = v; }, "output directory");
        sub->add_flag("--timings", o.timings, "embed wall-clock timings in reports");
    };
    auto* validate = app.add_subcommand("validate", "check oracle derivatives and the control set");
    auto* simulate = app.add_subcommand("simulate", "simulate the reference state and cache it");
    auto* adjoint = app.add_subcommand("adjoint", "solve the adjoint equations");
    auto* check = app.add_subcommand("check", "run the necessary-condition tests");
    auto* reproduce = app.add_subcommand("reproduce", "rerun a shipped example and assert its numbers");
    for (auto* s : {validate, simulate, adjoint, check}) add_common(s, true);
    add_common(reproduce, false);
    reproduce->add_option("id", id, "example33 | example34 | lq-riccati | counterexample-osc | "
                                    "counterexample-singular | prop31-slopes | expansion33")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (*validate) return cmd_validate(config, o);
        if (*simulate) return cmd_simulate(config, o);
        if (*adjoint) return cmd_adjoint(config, o);
        if (*check) return cmd_check(config, o);
        return cmd_reproduce(id, o);
    } catch (const scl::ConfigError& e) {
        std::cerr << "scl: [config] " << e.what() << "\n";
        return kUsage;
    } catch (const scl::Error& e) {
        std::cerr << "scl: [" << e.module() << "] " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "scl: [internal] " << e.what() << "\n";
        return kNumerical;
    }
}
