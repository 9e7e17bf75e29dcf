#include <doctest.h>

#include "scl/errors.hpp"
#include "scl/expression.hpp"
#include "scl/forward_sim.hpp"
#include "scl/problem.hpp"
#include "scl/problem_io.hpp"

#include <cmath>

using namespace scl;

namespace {

ControlSet unit_box(int m) { return ControlSet::box(Vec::Constant(m, -1.0), Vec::Constant(m, 1.0)); }

LqMatrices zero_lq(int n, int m) {
    LqMatrices d;
    d.A = Mat::Zero(n, n);
    d.B = Mat::Zero(n, m);
    d.C = Mat::Zero(n, n);
    d.D = Mat::Zero(n, m);
    d.R = Mat::Zero(n, n);
    d.M = Mat::Zero(m, n);
    d.N = Mat::Zero(m, m);
    d.G = Mat::Zero(n, n);
    return d;
}

}  // namespace

TEST_CASE("example 3.3 preset validates with exact derivatives") {
    const auto p = presets::example33();
    const auto r = validate_problem(p);
    CHECK(r.pass);
    CHECK(r.control_set_ok);
    for (const auto& res : r.residuals) CHECK(res.max_error < 1e-8);
}

TEST_CASE("every preset matches finite differences") {
    for (const auto& p : {presets::example33(), presets::example33_no_terminal(), presets::example34(), presets::sine()}) {
        ValidationOptions o;
        o.fd_step = 1e-5;
        o.tolerance = 1e-6;
        const auto r = validate_problem(p, o);
        INFO(p.name);
        CHECK(r.pass);
        CHECK(r.max_symmetry_defect == 0.0);
    }
}

TEST_CASE("drift of the wrong length is a structural error") {
    auto p = presets::sine();
    p.drift = [](double, const Vec&, const Vec&, const Noise&, JetOrder, VectorJet& j) {
        j.resize(2, 1);
        j.value = Vec::Zero(2);
    };
    CHECK_THROWS_AS(validate_problem(p), StructuralError);
}

TEST_CASE("non-finite oracle output names the oracle") {
    auto p = presets::sine();
    p.running_cost = [](double, const Vec&, const Vec&, const Noise&, JetOrder, ScalarJet& j) {
        j.resize(1, 1);
        j.value = std::nan("");
    };
    try {
        validate_problem(p);
        FAIL("expected an oracle error");
    } catch (const OracleError& e) {
        CHECK(std::string(e.what()).find("f") != std::string::npos);
    }
}

TEST_CASE("nonsymmetric f_uu is flagged") {
    ControlProblem p = make_lq_problem(zero_lq(1, 2), 1.0, Vec::Zero(1), unit_box(2));
    p.running_cost = [](double, const Vec& x, const Vec& u, const Noise&, JetOrder, ScalarJet& j) {
        j.resize(static_cast<int>(x.size()), static_cast<int>(u.size()));
        Mat Q(2, 2);
        Q << 1.0, 0.5, 0.0, 1.0;  // f = u^T Q u / 2 with a deliberately skew Hessian report
        j.value = 0.5 * u.dot(Q * u);
        j.du = 0.5 * (Q + Q.transpose()) * u;
        j.duu = Q;
    };
    const auto r = validate_problem(p);
    CHECK_FALSE(r.pass);
    CHECK(r.max_symmetry_defect > 0.1);
}

TEST_CASE("LQ constructor") {
    SUBCASE("example 3.4 data is a valid 2x2 problem") {
        auto d = zero_lq(2, 2);
        d.B = Vec(Vec::Unit(2, 0)).asDiagonal();
        d.D = Vec(Vec::Unit(2, 1)).asDiagonal();
        d.G = Vec(Vec::Unit(2, 0)).asDiagonal();
        const auto p = make_lq_problem(d, 1.0, Vec::Zero(2), unit_box(2));
        CHECK(p.state_dim == 2);
        CHECK(p.control_dim == 2);
        CHECK(validate_problem(p).pass);
    }
    SUBCASE("all zero matrices give the zero problem") {
        const auto p = make_lq_problem(zero_lq(2, 1), 1.0, Vec::Zero(2), unit_box(1));
        CHECK(validate_problem(p).pass);
        VectorJet b;
        eval_vector_jet(p, p.drift, "b", 0.3, Vec::Ones(2), Vec::Ones(1), {}, JetOrder::Second, b);
        CHECK(b.value.norm() == 0.0);
    }
    SUBCASE("nonsymmetric G is rejected") {
        auto d = zero_lq(2, 1);
        d.G(0, 1) = 1.0;
        CHECK_THROWS_AS(make_lq_problem(d, 1.0, Vec::Zero(2), unit_box(1)), StructuralError);
    }
    SUBCASE("oracles reproduce the quadratic forms") {
        LqMatrices d;
        d.A = (Mat(2, 2) << 0.1, -0.2, 0.3, 0.4).finished();
        d.B = (Mat(2, 1) << 1.0, -0.5).finished();
        d.C = (Mat(2, 2) << 0.2, 0.0, -0.1, 0.3).finished();
        d.D = (Mat(2, 1) << 0.5, 0.25).finished();
        d.R = (Mat(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
        d.M = (Mat(1, 2) << 0.7, -0.4).finished();
        d.N = Mat::Constant(1, 1, 1.5);
        d.G = (Mat(2, 2) << 1.0, -0.2, -0.2, 0.5).finished();
        const auto p = make_lq_problem(d, 1.0, Vec::Zero(2), unit_box(1));
        const Vec x = (Vec(2) << 0.3, -1.2).finished();
        const Vec u = Vec::Constant(1, 0.6);
        VectorJet b, s;
        ScalarJet f, h;
        eval_vector_jet(p, p.drift, "b", 0.5, x, u, {}, JetOrder::Second, b);
        eval_vector_jet(p, p.diffusion, "sigma", 0.5, x, u, {}, JetOrder::Second, s);
        eval_scalar_jet(p, 0.5, x, u, {}, JetOrder::Second, f);
        eval_terminal_jet(p, x, {}, JetOrder::Second, h);
        CHECK((b.value - (d.A * x + d.B * u)).norm() < 1e-15);
        CHECK((s.value - (d.C * x + d.D * u)).norm() < 1e-15);
        const double fx = 0.5 * (x.dot(d.R * x) + 2.0 * u.dot(d.M * x) + u.dot(d.N * u));
        CHECK(f.value == doctest::Approx(fx).epsilon(1e-15));
        CHECK(h.value == doctest::Approx(0.5 * x.dot(d.G * x)).epsilon(1e-15));
        CHECK((f.dxu - d.M).norm() < 1e-15);
        CHECK((h.dxx - d.G).norm() < 1e-15);
    }
}

TEST_CASE("control sets") {
    const auto box = unit_box(2);
    CHECK(box.sample_grid().size() == 9);
    for (const auto& v : box.sample_grid()) CHECK(box.contains(v));
    CHECK(box.contains(Vec::Constant(2, 1.0)));
    CHECK_FALSE(box.contains(Vec::Constant(2, 1.1)));
    CHECK((box.project(Vec::Constant(2, 3.0)) - Vec::Ones(2)).norm() == 0.0);

    const std::vector<Vec> tri{Vec::Zero(2), Vec::Unit(2, 0), Vec::Unit(2, 1)};
    const auto poly = ControlSet::polytope(tri);
    for (const auto& v : poly.sample_grid()) CHECK(poly.contains(v, 1e-12));
    CHECK(poly.contains(Vec::Constant(2, 0.25)));
    CHECK_FALSE(poly.contains(Vec::Constant(2, 0.75), 1e-9));
    CHECK(poly.distance(Vec::Constant(2, 1.0)) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));

    CHECK_THROWS_AS(ControlSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)), StructuralError);
}

TEST_CASE("path functionals only see past increments") {
    const auto u = AdmissibleControl::path_functional(
        [](double, const Noise& n, Vec& out) {
            double s = 0.0;
            for (double d : n.increments) s += d;
            out = Vec::Constant(1, std::tanh(s));
        },
        1);
    CHECK_FALSE(u.deterministic());
    auto bm = generate_brownian(TimeGrid(16, 1.0), 4, 3);
    auto altered = std::make_shared<BrownianSample>(*bm);
    const std::size_t k = 7;
    altered->dW(1, k) += 5.0;  // changes only increments with index >= k
    Vec a(1), b(1);
    u.value(1, k, bm->grid.t(k), bm->noise(1, k), a);
    u.value(1, k, altered->grid.t(k), altered->noise(1, k), b);
    CHECK(a(0) == b(0));
}

TEST_CASE("expression parser") {
    const expr::VariableLayout layout{2, 1};
    const auto e = expr::Expression::parse("sin(x[0]) * u[0] + pow(x[1], 2) - 3 / t + w", layout);
    const double slots[] = {2.0, 0.5, -1.5, 0.25, 0.1};
    const double expected = std::sin(0.5) * 0.25 + 2.25 - 1.5 + 0.1;
    CHECK(e.evaluate(slots) == doctest::Approx(expected).epsilon(1e-15));
    const auto d = e.derivative(layout.state_slot(0));
    CHECK(d.evaluate(slots) == doctest::Approx(std::cos(0.5) * 0.25).epsilon(1e-15));
    CHECK(e.derivative(layout.control_slot(0)).derivative(layout.control_slot(0)).is_zero());
    CHECK_THROWS(expr::Expression::parse("x[0] +", layout));
}

TEST_CASE("problem json") {
    const Json lq = {{"kind", "lq"},
                     {"T", 1.0},
                     {"x0", {0.0}},
                     {"A", {{0.0}}},
                     {"B", {{1.0}}},
                     {"C", {{0.0}}},
                     {"D", {{1.0}}},
                     {"R", {{0.0}}},
                     {"M", {{0.0}}},
                     {"N", {{1.0}}},
                     {"G", {{-1.0}}},
                     {"control_set", {{"box", {{"lower", {-1.0}}, {"upper", {1.0}}}}}}};
    const auto p = problem_from_json(lq);
    CHECK(p.lq.has_value());
    CHECK(validate_problem(p).pass);

    Json bad = lq;
    bad["Z"] = 1;
    CHECK_THROWS_AS(problem_from_json(bad), ConfigError);

    const Json expr = {{"kind", "custom-expr"},
                       {"n", 1},
                       {"m", 1},
                       {"x0", {0.5}},
                       {"drift", {"sin(x[0]) + u[0]"}},
                       {"diffusion", {"u[0]"}},
                       {"running_cost", "0.5 * u[0]^2"},
                       {"terminal_cost", "0.5 * x[0]^2"},
                       {"control_set", {{"box", {{"lower", {-1.0}}, {"upper", {1.0}}}}}}};
    const auto pe = problem_from_json(expr);
    CHECK(pe.state_dim == 1);
    CHECK(validate_problem(pe).pass);
    CHECK_THROWS_AS(problem_from_json({{"kind", "expression"}}), ConfigError);

    const Json cfg = {{"problem", {{"kind", "example33"}}}, {"paths", 10}};
    CHECK_THROWS_AS(parse_run_config(cfg), ConfigError);
    const Json ok = {{"problem", {{"kind", "example34"}}}, {"paths", 200}, {"steps", 32}};
    const auto c = parse_run_config(ok);
    CHECK(c.paths == 200);
    CHECK(c.echo["problem"]["kind"] == "example34");
    CHECK_THROWS_AS(parse_run_config({{"problem", {{"kind", "example34"}}}, {"eps_ladder", {0.1, 0.2, 0.05}}}),
                    ConfigError);
}
