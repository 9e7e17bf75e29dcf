#include <doctest.h>

#include "scl/errors.hpp"
#include "scl/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace scl;

namespace {

std::string slurp(const std::string& file) {
    std::ifstream is(file);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// A small end-to-end run whose report depends on the random sample.
Json run(std::uint64_t seed) {
    const auto p = presets::example33();
    const auto ubar = simulate_state(p, AdmissibleControl::constant(Vec::Zero(1)), TimeGrid(32, 1.0), 300, seed);
    const auto fr = build_kernel_frames(p, ubar, solve_adjoints(p, ubar));
    const auto sing = classical_singularity_check(fr);
    const auto integral = integral_type_test(
        p, ubar, fr, PerturbationSpec::convex(AdmissibleControl::constant(Vec::Ones(1))), &sing);
    const Json echo = {{"paths", 300}, {"steps", 32}, {"seed", seed}};
    return make_report("check", {{"singularity", to_json(sing)}, {"integral", to_json(integral, echo)}}, echo);
}

}  // namespace

TEST_CASE("singularity report schema") {
    SingularityReport r;
    r.sup_Hu = 1e-13;
    r.singular = true;
    const auto j = to_json(r);
    for (const char* key : {"sup_Hu", "sup_Huu_plus", "verdict", "tolerance", "method", "quantile"})
        CHECK(j.contains(key));
    CHECK(j["verdict"] == "singular");
}

TEST_CASE("condition report schema") {
    ConditionReport r;
    r.condition = "pointwise_malliavin";
    r.tau_grid = {0.0, 0.5};
    r.v_grid = {Vec::Ones(1)};
    ConditionCell c;
    c.tau = 0.5;
    c.v = Vec::Ones(1);
    c.value = 1.0;
    c.verdict = Verdict::Violated;
    r.cells = {c};
    r.global_verdict = Verdict::Violated;
    const auto j = to_json(r, Json{{"seed", 3}});
    for (const char* key : {"condition", "grid", "cells", "global_verdict", "config_echo"}) CHECK(j.contains(key));
    CHECK(j["grid"]["tau"].size() == 2);
    CHECK(j["grid"]["v"][0][0] == 1.0);
    const auto& cell = j["cells"][0];
    for (const char* key : {"tau", "v", "value", "stderr", "verdict"}) CHECK(cell.contains(key));
    CHECK_FALSE(cell.contains("max"));
    CHECK(cell["verdict"] == "violated");
    CHECK_FALSE(j.contains("note"));
    CHECK(j["config_echo"]["seed"] == 3);
    CHECK_FALSE(to_json(r).contains("config_echo"));
}

TEST_CASE("ladder, d-plus and expansion serialisation") {
    DplusReport d;
    d.trace = {{0.1, 0.5, 0.01}};
    d.value = 1.0;
    const auto j = to_json(d);
    CHECK(j["value"] == 1.0);
    CHECK(j["trace"][0]["theta"] == 0.1);
    CHECK(j["trace"][0]["stderr"] == 0.01);

    ExpansionReport e;
    e.rows = {{0.1, -0.005, 0.0, -0.005, 1e-4, 1e-5}};
    e.converging = true;
    const auto je = to_json(e);
    CHECK(je["rows"][0]["residual_over_eps2"].get<double>() == doctest::Approx(0.01));
    CHECK(je["converging"] == true);
}

TEST_CASE("report envelope and timings") {
    const auto plain = make_report("validate", Json::object(), Json{{"paths", 100}});
    CHECK(plain["artifact"]["name"] == "scl_toolkit");
    CHECK(plain["artifact"]["version"] == SCL_VERSION);
    CHECK(plain["kind"] == "validate");
    CHECK(plain["config_echo"]["paths"] == 100);
    CHECK_FALSE(plain.contains("timings"));

    Timings t;
    t.start("simulate");
    t.start("adjoints");
    t.stop();
    const auto timed = make_report("check", Json::object(), Json::object(), &t);
    REQUIRE(timed.contains("timings"));
    CHECK(timed["timings"].contains("simulate"));
    CHECK(timed["timings"]["adjoints"].get<double>() >= 0.0);
}

TEST_CASE("identical seeds give byte-identical reports") {
    const std::string a = "test_report_a.json", b = "test_report_b.json", c = "test_report_c.json";
    write_json(a, run(5));
    write_json(b, run(5));
    write_json(c, run(6));
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
    for (const auto& f : {a, b, c}) std::remove(f.c_str());
}

TEST_CASE("csv writers") {
    ConditionReport r;
    ConditionCell c;
    c.tau = 0.25;
    c.v = (Vec(2) << 1.0, -0.5).finished();
    c.value = -0.5;
    c.verdict = Verdict::Satisfied;
    r.cells = {c};
    const std::string file = "test_cells.csv";
    write_condition_csv(file, r);
    CHECK(slurp(file) == "tau,v,value,stderr,verdict\n0.25,1 -0.5,-0.5,0,satisfied\n");
    std::remove(file.c_str());

    ExpansionReport e;
    e.rows = {{0.5, -0.125, 0.01, -0.125, 0.0, 0.0}};
    write_expansion_csv(file, e);
    CHECK(slurp(file) == "eps,delta_J,delta_J_stderr,prediction,residual,residual_stderr\n0.5,-0.125,0.01,-0.125,0,0\n");
    std::remove(file.c_str());

    CHECK_THROWS_AS(write_json("/nonexistent-dir/x.json", Json::object()), ConfigError);
}
