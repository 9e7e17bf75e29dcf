#include <doctest.h>

#include "scl/adjoint.hpp"
#include "scl/conditions.hpp"
#include "scl/errors.hpp"

#include <cmath>

using namespace scl;

namespace {

AdmissibleControl constant(double v, int m = 1) { return AdmissibleControl::constant(Vec::Constant(m, v)); }

struct Setup {
    ControlProblem p;
    PathBundle b;
    AdjointSolution adj;
    KernelFrames fr;
    SingularityReport sing;
};

Setup setup(ControlProblem p, const AdmissibleControl& u, std::size_t steps, std::size_t paths, std::uint64_t seed = 11) {
    Setup s{std::move(p), {}, {}, {}, {}};
    s.b = simulate_state(s.p, u, TimeGrid(steps, s.p.horizon), paths, seed);
    s.adj = solve_adjoints(s.p, s.b);
    s.fr = build_kernel_frames(s.p, s.b, s.adj);
    s.sing = classical_singularity_check(s.fr);
    return s;
}

ConditionOptions few_taus() {
    ConditionOptions o;
    o.tau_count = 4;
    return o;
}

}  // namespace

TEST_CASE("classify and aggregate") {
    CHECK(classify(-1.0, 0.1, 3.0, 1e-12) == Verdict::Satisfied);
    CHECK(classify(1e-13, 0.0, 3.0, 1e-12) == Verdict::Satisfied);
    CHECK(classify(1.0, 0.1, 3.0, 1e-12) == Verdict::Violated);
    CHECK(classify(0.2, 0.1, 3.0, 1e-12) == Verdict::Inconclusive);

    std::vector<ConditionCell> cells(3);
    for (auto& c : cells) c.verdict = Verdict::Satisfied;
    CHECK(aggregate(cells) == Verdict::Satisfied);
    cells[1].verdict = Verdict::Inconclusive;
    CHECK(aggregate(cells) == Verdict::Inconclusive);
    cells[2].verdict = Verdict::Violated;
    CHECK(aggregate(cells) == Verdict::Violated);
    CHECK(std::string(to_string(Verdict::NotApplicable)) == "not_applicable");
}

TEST_CASE("theta ladders and tau grids") {
    const auto l = geometric_ladder(0.5, 4);
    REQUIRE(l.size() == 4);
    CHECK(l[3] == 0.0625);
    const TimeGrid g(256, 1.0);
    ConditionOptions o;
    const auto eff = effective_ladder(g, o);
    CHECK(eff.front() == 0.125);
    CHECK(eff.size() == 9);
    const auto taus = tau_grid(g, o);
    CHECK(taus.size() == o.tau_count);
    CHECK(taus.back() <= 1.0 - 0.125 - g.dt() + 1e-12);
    o.theta_ladder = {0.1, 0.2};
    CHECK_THROWS_AS(effective_ladder(g, o), ConfigError);
    o.theta_ladder = {0.1};
    o.taus = {0.95};
    CHECK_THROWS_AS(tau_grid(g, o), ConfigError);
}

TEST_CASE("cost expansion on example 3.3") {
    const auto s = setup(presets::example33(), constant(0.0), 128, 5000);
    const std::vector<double> ladder{0.2, 0.1, 0.05, 0.025};
    SUBCASE("v = 1 follows -eps^2/2") {
        const auto rep = cost_expansion_check(s.p, s.b, s.fr, PerturbationSpec::convex(constant(1.0)), ladder);
        REQUIRE(rep.rows.size() == 4);
        for (const auto& row : rep.rows) {
            const double e2 = row.eps * row.eps;
            CHECK(std::abs(row.delta_J + 0.5 * e2) / e2 < 0.05);
            CHECK(std::abs(row.residual) <= 3.0 * row.residual_se + 1e-12);
        }
        CHECK(rep.converging);
    }
    SUBCASE("zero direction changes nothing") {
        const auto rep = cost_expansion_check(s.p, s.b, s.fr, PerturbationSpec::convex(constant(0.0)), ladder);
        for (const auto& row : rep.rows) {
            CHECK(row.delta_J == 0.0);
            CHECK(row.prediction == 0.0);
        }
    }
    CHECK_THROWS_AS(cost_expansion_check(s.p, s.b, s.fr, PerturbationSpec::needle(Vec::Ones(1), 0.2, 0.1), ladder),
                    ConfigError);
    CHECK_THROWS_AS(cost_expansion_check(s.p, s.b, s.fr, PerturbationSpec::convex(constant(1.0)), {0.1, 0.2}),
                    ConfigError);
}

TEST_CASE("integral-type condition") {
    SUBCASE("example 3.3: one half, violated") {
        const auto s = setup(presets::example33(), constant(0.0), 128, 4000);
        const auto r = integral_type_test(s.p, s.b, s.fr, PerturbationSpec::convex(constant(1.0)), &s.sing);
        REQUIRE(r.cells.size() == 1);
        const auto& c = r.cells.front();
        CHECK(std::abs(c.value - 0.5) <= 3.0 * c.std_error + s.b.grid().dt());
        CHECK(r.global_verdict == Verdict::Violated);
        const auto half = integral_type_test(s.p, s.b, s.fr, PerturbationSpec::convex(constant(0.5)), &s.sing);
        CHECK(half.cells.front().value == doctest::Approx(0.25 * c.value).epsilon(1e-10));
        const auto zero = integral_type_test(s.p, s.b, s.fr, PerturbationSpec::convex(constant(0.0)), &s.sing);
        CHECK(zero.cells.front().value == 0.0);
        CHECK(zero.global_verdict == Verdict::Satisfied);
    }
    SUBCASE("example 3.4: -<GBv, Bv>/2") {
        const auto s = setup(presets::example34(), constant(0.0, 2), 64, 1000);
        const Vec v = (Vec(2) << 0.6, -0.4).finished();
        const auto r =
            integral_type_test(s.p, s.b, s.fr, PerturbationSpec::convex(AdmissibleControl::constant(v)), &s.sing);
        CHECK(std::abs(r.cells.front().value + 0.5 * v(0) * v(0)) <= s.b.grid().dt());
        CHECK(r.global_verdict == Verdict::Satisfied);
    }
    SUBCASE("not applicable off the singular set") {
        const auto s = setup(presets::example33_no_terminal(), constant(0.0), 32, 200);
        const auto r = integral_type_test(s.p, s.b, s.fr, PerturbationSpec::convex(constant(1.0)), &s.sing);
        CHECK(r.global_verdict == Verdict::NotApplicable);
        CHECK(r.cells.empty());
        CHECK(r.note.find("not singular") != std::string::npos);
    }
}

TEST_CASE("d-plus estimate") {
    const TimeGrid g(256, 1.0);
    const auto ladder = geometric_ladder(0.25, 5);
    SUBCASE("unit integrand: ratio one half, d-plus one") {
        const auto r = dplus_estimate(g, 10, 0.3, ladder, [](std::size_t, std::size_t, std::size_t) { return 1.0; });
        for (const auto& pt : r.trace) CHECK(pt.estimate == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.value == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("zero integrand") {
        const auto r = dplus_estimate(g, 10, 0.3, ladder, [](std::size_t, std::size_t, std::size_t) { return 0.0; });
        CHECK(r.value == 0.0);
    }
    SUBCASE("t - s integrand vanishes like theta") {
        const double dt = g.dt();
        const auto r = dplus_estimate(g, 1, 0.3, ladder, [dt](std::size_t, std::size_t s, std::size_t t) {
            return static_cast<double>(t - s) * dt;
        });
        for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].estimate < r.trace[i - 1].estimate);
    }
    SUBCASE("too few rungs") {
        CHECK_THROWS_AS(dplus_estimate(g, 10, 0.3, {0.25, 0.125}, [](std::size_t, std::size_t, std::size_t) { return 1.0; }),
                        ConfigError);
        CHECK_THROWS_AS(dplus_estimate(g, 10, 0.9, ladder, [](std::size_t, std::size_t, std::size_t) { return 1.0; }),
                        DomainError);
    }
}

TEST_CASE("pointwise conditions on example 3.3") {
    const auto s = setup(presets::example33(), constant(0.0), 128, 1000);
    auto opts = few_taus();
    opts.v_grid = {Vec::Constant(1, -1.0), Vec::Constant(1, 0.0), Vec::Constant(1, 0.5), Vec::Constant(1, 1.0)};
    const auto z = plugins::zero(1, 1);
    const auto mall = pointwise_malliavin_test(s.p, s.fr, *s.b.brownian, &z, &z, &s.sing, opts);
    const auto kernel = direction_kernel(s.fr, s.b);
    CHECK(kernel.is_zero());
    const auto mart = pointwise_martingale_test(s.p, s.fr, nullptr, kernel, &s.sing, opts);
    REQUIRE(mall.cells.size() == mart.cells.size());
    REQUIRE(mall.cells.size() == 4 * opts.tau_count);
    for (std::size_t i = 0; i < mall.cells.size(); ++i) {
        const auto& c = mall.cells[i];
        // S = 1 and ubar = 0: the value is v^2.
        CHECK(c.value == doctest::Approx(c.v(0) * c.v(0)).epsilon(1e-12));
        CHECK(mart.cells[i].value == c.value);
        if (c.v(0) == 0.0) {
            CHECK(c.value == 0.0);
            CHECK(c.verdict == Verdict::Satisfied);
        } else {
            CHECK(c.verdict == Verdict::Violated);
        }
    }
    CHECK(mall.global_verdict == Verdict::Violated);
    CHECK(mart.global_verdict == Verdict::Violated);

    CHECK_THROWS_AS(pointwise_malliavin_test(s.p, s.fr, *s.b.brownian, nullptr, &z, &s.sing, opts), ConfigError);
    try {
        pointwise_malliavin_test(s.p, s.fr, *s.b.brownian, &z, nullptr, &s.sing, opts);
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("C3") != std::string::npos);
    }
    opts.v_grid = {Vec::Constant(1, 2.0)};
    CHECK_THROWS_AS(pointwise_martingale_test(s.p, s.fr, nullptr, kernel, &s.sing, opts), ConfigError);
}

TEST_CASE("pointwise conditions on example 3.4 are satisfied") {
    const auto s = setup(presets::example34(), constant(0.0, 2), 64, 500);
    const auto zS = plugins::zero(2, 2), zU = plugins::zero(2, 1);
    const auto mall = pointwise_malliavin_test(s.p, s.fr, *s.b.brownian, &zS, &zU, &s.sing, few_taus());
    CHECK_FALSE(mall.cells.empty());
    for (const auto& c : mall.cells) CHECK(c.value == doctest::Approx(-c.v(0) * c.v(0)).epsilon(1e-12));
    CHECK(mall.global_verdict == Verdict::Satisfied);
}

TEST_CASE("pointwise tests need a singular reference") {
    const auto s = setup(presets::example33_no_terminal(), constant(0.0), 32, 200);
    const auto z = plugins::zero(1, 1);
    const auto r = pointwise_malliavin_test(s.p, s.fr, *s.b.brownian, &z, &z, &s.sing, few_taus());
    CHECK(r.global_verdict == Verdict::NotApplicable);
}

TEST_CASE("martingale route with a random frame") {
    // sin(x) drift makes S path dependent, so the kernel is nonzero.
    const auto s = setup(presets::sine(), constant(0.5), 64, 2000);
    const auto kernel = direction_kernel(s.fr, s.b);
    CHECK_FALSE(kernel.is_zero());
    CHECK_THROWS_AS(dplus_estimate(s.fr, nullptr, kernel, 0.25, Vec::Ones(1), geometric_ladder(0.25, 4)), ConfigError);
    const auto fmp = simulate_fundamental(s.p, s.b);
    const auto dp = dplus_estimate(s.fr, &fmp, kernel, 0.25, Vec::Ones(1), geometric_ladder(0.25, 4));
    REQUIRE(dp.trace.size() == 4);
    for (const auto& pt : dp.trace) CHECK(std::isfinite(pt.estimate));
    CHECK(std::isfinite(dp.value));
}

TEST_CASE("second-order quadratic form") {
    SUBCASE("example 3.3: -3 at w = 1, zero at w = 0") {
        const auto s = setup(presets::example33(), constant(0.0), 128, 20000);
        const auto q = bonnans_quadratic_form(s.p, s.b, s.fr, PerturbationSpec::convex(constant(1.0)));
        CHECK(std::abs(q.mean + 3.0) <= 3.0 * q.std_error);
        CHECK(bonnans_quadratic_form(s.p, s.b, s.fr, PerturbationSpec::convex(constant(0.0))).mean == 0.0);
    }
    SUBCASE("example 3.4: <GBw, Bw> + <GDw, Dw>") {
        const auto s = setup(presets::example34(), constant(0.0, 2), 64, 500);
        const Vec w = (Vec(2) << -0.7, 0.9).finished();
        const auto q = bonnans_quadratic_form(s.p, s.b, s.fr, PerturbationSpec::convex(AdmissibleControl::constant(w)));
        CHECK(q.mean == doctest::Approx(w(0) * w(0)).epsilon(1e-10));
    }
}

TEST_CASE("first-order needle test") {
    SUBCASE("example 3.3: H_u vanishes") {
        const auto s = setup(presets::example33(), constant(0.0), 64, 200);
        const auto r = needle_first_order_test(s.p, s.fr, few_taus());
        for (const auto& c : r.cells) CHECK(c.value == 0.0);
        CHECK(r.global_verdict == Verdict::Satisfied);
    }
    SUBCASE("no terminal cost, ubar = 1/2: H_u = -1/2 penalises v < ubar") {
        const auto s = setup(presets::example33_no_terminal(), constant(0.5), 64, 200);
        auto opts = few_taus();
        opts.v_grid = {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
        const auto r = needle_first_order_test(s.p, s.fr, opts);
        for (const auto& c : r.cells) {
            CHECK(c.value == doctest::Approx(-0.5 * (c.v(0) - 0.5)).epsilon(1e-12));
            CHECK(c.verdict == (c.v(0) < 0.5 ? Verdict::Violated : Verdict::Satisfied));
        }
        CHECK(r.global_verdict == Verdict::Violated);
    }
}
