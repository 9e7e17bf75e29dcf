#include <doctest.h>

#include "scl/errors.hpp"
#include "scl/forward_sim.hpp"
#include "scl/stats.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

using namespace scl;

namespace {

ControlSet unit_box(int m) { return ControlSet::box(Vec::Constant(m, -1.0), Vec::Constant(m, 1.0)); }

ControlProblem scalar_problem(const std::string& drift, const std::string& diffusion, double x0) {
    ExpressionProblemSpec s;
    s.x0 = Vec::Constant(1, x0);
    s.drift = {drift};
    s.diffusion = {diffusion};
    s.control_set = unit_box(1);
    return make_expression_problem(s);
}

AdmissibleControl constant(double v, int m = 1) { return AdmissibleControl::constant(Vec::Constant(m, v)); }

}  // namespace

TEST_CASE("Brownian increments") {
    const TimeGrid grid(64, 2.0);
    auto bm = generate_brownian(grid, 2000, 5);
    const auto& d = bm->dW.raw();
    const auto st = sample_stats(d);
    const double sd = std::sqrt(grid.dt());
    CHECK(std::abs(st.mean) < 4.0 * sd / std::sqrt(static_cast<double>(d.size())));
    CHECK(st.stddev == doctest::Approx(sd).epsilon(0.02));
    for (std::size_t p = 0; p < 3; ++p) {
        double w = 0.0;
        for (std::size_t k = 0; k < grid.steps; ++k) w += bm->dW(p, k);
        CHECK(bm->W(p, grid.steps) == doctest::Approx(w).epsilon(1e-12));
    }
}

TEST_CASE("state simulation exact cases") {
    SUBCASE("example 3.3 with zero control stays at zero") {
        const auto b = simulate_state(presets::example33(), constant(0.0), TimeGrid(32, 1.0), 100, 1);
        for (double v : b.x().raw()) CHECK(v == 0.0);
        CHECK(b.path_invariant);
    }
    SUBCASE("pure integrator reproduces the Brownian sums") {
        const auto p = scalar_problem("0", "1", 0.0);
        const auto b = simulate_state(p, constant(0.0), TimeGrid(32, 1.0), 50, 2);
        for (std::size_t path = 0; path < 50; ++path) {
            double s = 0.0;
            for (std::size_t k = 0; k < 32; ++k) {
                CHECK(b.x()(path, k) == s);
                s += b.brownian->dW(path, k);
            }
        }
        CHECK(b.x()(0, 0) == 0.0);
    }
}

TEST_CASE("Euler strong error against geometric Brownian motion has slope about one half") {
    const auto p = scalar_problem("x[0]", "x[0]", 1.0);
    const std::size_t fine = 1024;
    auto bm = generate_brownian(TimeGrid(fine, 1.0), 2000, 9);
    std::vector<double> dts, errs;
    for (std::size_t factor : {16, 8, 4, 2, 1}) {
        auto coarse = factor == 1 ? bm : bm->coarsen(factor);
        const auto b = simulate_state(p, constant(0.0), coarse);
        std::vector<double> e(bm->paths);
        for (std::size_t path = 0; path < bm->paths; ++path) {
            const double exact = std::exp(0.5 + bm->W(path, fine));
            e[path] = std::abs(b.x()(path, coarse->grid.steps) - exact);
        }
        dts.push_back(coarse->grid.dt());
        errs.push_back(sample_stats(e).mean);
    }
    const double slope = loglog_slope(dts, errs);
    CHECK(slope > 0.35);
    CHECK(slope < 0.75);
}

TEST_CASE("simulation is bit-identical for equal seeds and independent of the worker count") {
    const auto p = presets::sine();
    const auto u = AdmissibleControl::path_functional([](double, const Noise& n, Vec& out) { out = Vec::Constant(1, std::tanh(n.w)); }, 1);
    const auto a = simulate_state(p, u, TimeGrid(64, 1.0), 300, 42);
    const auto b = simulate_state(p, u, TimeGrid(64, 1.0), 300, 42);
    CHECK(a.x() == b.x());
    CHECK(a.brownian->dW == b.brownian->dW);
    ::setenv("SCL_THREADS", "3", 1);
    const auto c = simulate_state(p, u, TimeGrid(64, 1.0), 300, 42);
    ::unsetenv("SCL_THREADS");
    CHECK(a.x() == c.x());
    const auto d = simulate_state(p, u, TimeGrid(64, 1.0), 300, 43);
    CHECK_FALSE(a.x() == d.x());
}

TEST_CASE("integration blow-up is reported with the path and node") {
    const auto p = scalar_problem("x[0]^3", "0", 1.0);
    try {
        simulate_state(p, constant(0.0), TimeGrid(16, 10.0), 4, 1);
        FAIL("expected an integration error");
    } catch (const IntegrationError& e) {
        CHECK(e.node() > 0);
    }
}

TEST_CASE("variational equations") {
    SUBCASE("example 3.3: y1 = t + W, y2 = 0") {
        const auto p = presets::example33();
        const auto b = simulate_state(p, constant(0.0), TimeGrid(64, 1.0), 200, 3);
        const auto y = simulate_variational(p, b, PerturbationSpec::convex(constant(1.0)));
        double err = 0.0, y2 = 0.0;
        for (std::size_t path = 0; path < 200; ++path)
            for (std::size_t k = 0; k < 65; ++k) {
                err = std::max(err, std::abs(y.y1(path, k) - b.grid().t(k) - b.brownian->W(path, k)));
                y2 = std::max(y2, std::abs(y.y2(path, k)));
            }
        CHECK(err < 1e-13);
        CHECK(y2 == 0.0);
    }
    SUBCASE("zero direction gives zero paths") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.3), TimeGrid(32, 1.0), 50, 3);
        const auto y = simulate_variational(p, b, PerturbationSpec::convex(constant(0.3)));
        for (double v : y.y1.raw()) CHECK(v == 0.0);
        for (double v : y.y2.raw()) CHECK(v == 0.0);
    }
    SUBCASE("example 3.4: y1 = B v t + D v W") {
        const auto p = presets::example34();
        const auto b = simulate_state(p, constant(0.0, 2), TimeGrid(32, 1.0), 50, 3);
        const Vec v = (Vec(2) << 0.4, -0.7).finished();
        const auto y = simulate_variational(p, b, PerturbationSpec::convex(AdmissibleControl::constant(v)));
        double err = 0.0;
        for (std::size_t path = 0; path < 50; ++path)
            for (std::size_t k = 0; k < 33; ++k) {
                const Vec exact = (Vec(2) << v(0) * b.grid().t(k), v(1) * b.brownian->W(path, k)).finished();
                err = std::max(err, (y.y1.vec(path, k) - exact).norm());
            }
        CHECK(err < 1e-13);
    }
    SUBCASE("y1 is additive in the direction") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.2), TimeGrid(64, 1.0), 100, 4);
        const auto t1 = AdmissibleControl::path_functional([](double t, const Noise&, Vec& o) { o = Vec::Constant(1, 0.2 + std::sin(3 * t)); }, 1);
        const auto t2 = AdmissibleControl::path_functional([](double, const Noise& n, Vec& o) { o = Vec::Constant(1, 0.2 + 0.1 * n.w); }, 1);
        const auto t12 = AdmissibleControl::path_functional(
            [](double t, const Noise& n, Vec& o) { o = Vec::Constant(1, 0.2 + std::sin(3 * t) + 0.1 * n.w); }, 1);
        const auto a = simulate_variational(p, b, PerturbationSpec::convex(t1), false);
        const auto c = simulate_variational(p, b, PerturbationSpec::convex(t2), false);
        const auto s = simulate_variational(p, b, PerturbationSpec::convex(t12), false);
        double err = 0.0;
        for (std::size_t i = 0; i < s.y1.raw().size(); ++i)
            err = std::max(err, std::abs(s.y1.raw()[i] - a.y1.raw()[i] - c.y1.raw()[i]));
        CHECK(err < 1e-12);
    }
}

TEST_CASE("needle windows snap to nodes") {
    const TimeGrid grid(100, 1.0);
    const auto w = snap_needle(grid, 0.304, 0.1);
    CHECK(w.begin == 30);
    CHECK(w.end == 40);
    CHECK_THROWS(snap_needle(grid, 0.95, 0.1));
}

TEST_CASE("perturbation order check") {
    SUBCASE("linear dynamics: first remainder vanishes") {
        const auto p = presets::example33();
        const auto b = simulate_state(p, constant(0.0), TimeGrid(64, 1.0), 200, 3);
        const auto r = perturbation_order_check(p, b, PerturbationSpec::convex(constant(1.0)), {0.2, 0.1, 0.05});
        for (const auto& n : r.norms[1]) CHECK(n.value < 1e-13);
    }
    SUBCASE("zero direction gives zero norms") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.5), TimeGrid(64, 1.0), 200, 3);
        const auto r = perturbation_order_check(p, b, PerturbationSpec::convex(constant(0.5)), {0.2, 0.1, 0.05});
        for (const auto& row : r.norms)
            for (const auto& n : row) CHECK(n.value == 0.0);
    }
    SUBCASE("sine preset: second remainder is quadratic") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.5), TimeGrid(256, 1.0), 2000, 3);
        const auto r =
            perturbation_order_check(p, b, PerturbationSpec::convex(constant(1.0)), {0.2, 0.1, 0.05, 0.025});
        CHECK(r.slopes[0] == doctest::Approx(1.0).epsilon(0.1));
        CHECK(r.slopes[1] > 1.8);
        CHECK(r.slopes[1] < 2.2);
    }
    SUBCASE("short ladder is a configuration error") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.5), TimeGrid(16, 1.0), 100, 3);
        CHECK_THROWS_AS(perturbation_order_check(p, b, PerturbationSpec::convex(constant(1.0)), {0.2, 0.1}),
                        ConfigError);
    }
}

TEST_CASE("fundamental matrix") {
    SUBCASE("zero state derivatives give identity") {
        const auto p = presets::example34();
        const auto b = simulate_state(p, constant(0.0, 2), TimeGrid(32, 1.0), 20, 3);
        const auto f = simulate_fundamental(p, b);
        for (std::size_t path = 0; path < 20; ++path)
            for (std::size_t k = 0; k < 33; ++k) {
                CHECK(f.phi.at(path, k).isIdentity(0.0));
                CHECK(f.psi.at(path, k).isIdentity(0.0));
            }
    }
    SUBCASE("constant coefficients: exponential martingale and small product defect") {
        const auto p = scalar_problem("0.3 * x[0] + u[0]", "0.5 * x[0]", 1.0);
        const auto b = simulate_state(p, constant(0.0), TimeGrid(4096, 1.0), 200, 8);
        const auto f = simulate_fundamental(p, b);
        CHECK(f.max_defect < 1e-6);
        std::vector<double> e(200);
        for (std::size_t path = 0; path < 200; ++path)
            e[path] = std::abs(f.phi(path, 4096) - std::exp((0.3 - 0.125) + 0.5 * b.brownian->W(path, 4096)));
        CHECK(sample_stats(e).mean < 0.02);
    }
    SUBCASE("product defect stays small for the nonlinear preset at N >= 1024") {
        const auto p = presets::sine();
        const auto b = simulate_state(p, constant(0.5), TimeGrid(1024, 1.0), 200, 8);
        CHECK(simulate_fundamental(p, b).max_defect < 1e-4);
    }
}

TEST_CASE("explicit y1 agrees with the SDE route") {
    SUBCASE("example 3.3 exactly") {
        const auto p = presets::example33();
        const auto b = simulate_state(p, constant(0.0), TimeGrid(64, 1.0), 100, 3);
        const auto pert = PerturbationSpec::convex(constant(1.0));
        const auto ex = explicit_y1(p, b, simulate_fundamental(p, b), pert);
        const auto sde = simulate_variational(p, b, pert, false);
        CHECK(sup_norm_difference(ex.y1, sde.y1).value < 1e-13);
    }
    SUBCASE("nonlinear preset converges with the grid") {
        const auto p = presets::sine();
        auto fine = generate_brownian(TimeGrid(1024, 1.0), 500, 12);
        const auto pert = PerturbationSpec::convex(constant(1.0));
        std::vector<double> dts, diffs;
        for (std::size_t factor : {8, 4, 2, 1}) {
            auto bm = factor == 1 ? fine : fine->coarsen(factor);
            const auto b = simulate_state(p, constant(0.5), bm);
            const auto ex = explicit_y1(p, b, simulate_fundamental(p, b), pert);
            const auto sde = simulate_variational(p, b, pert, false);
            dts.push_back(bm->grid.dt());
            diffs.push_back(sup_norm_difference(ex.y1, sde.y1).value);
        }
        CHECK(loglog_slope(dts, diffs) >= 0.5);
    }
}

TEST_CASE("bundle cache round trip") {
    const auto p = presets::sine();
    const auto b = simulate_state(p, constant(0.5), TimeGrid(16, 1.0), 10, 3);
    const std::string file = "test_bundle.sclb";
    write_bundle(file, b, 1);
    const auto c = read_bundle(file);
    CHECK(c.state_dim == 1);
    CHECK(c.control_dim == 1);
    CHECK(c.brownian->dW == b.brownian->dW);
    CHECK(*c.state == b.x());
    std::remove(file.c_str());
}
