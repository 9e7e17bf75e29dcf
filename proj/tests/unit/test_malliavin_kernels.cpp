#include <doctest.h>

#include "scl/errors.hpp"
#include "scl/malliavin.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace scl;

namespace {

PathTensor brownian_power(const BrownianSample& bm, int power) {
    PathTensor out(bm.paths, bm.grid.nodes(), 1);
    for (std::size_t p = 0; p < bm.paths; ++p)
        for (std::size_t k = 0; k < bm.grid.nodes(); ++k) out(p, k) = std::pow(bm.W(p, k), power);
    return out;
}

PathTensor deterministic(const TimeGrid& g, std::size_t paths, double (*fn)(double)) {
    PathTensor out(paths, g.nodes(), 1);
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t k = 0; k < g.nodes(); ++k) out(p, k) = fn(g.t(k));
    return out;
}

FeatureSource brownian_features(const std::shared_ptr<const BrownianSample>& bm) {
    FeatureSource f;
    f.brownian = bm;
    f.use_state = false;
    f.use_brownian = true;
    return f;
}

}  // namespace

TEST_CASE("shipped plugins are adapted") {
    auto bm = generate_brownian(TimeGrid(64, 1.0), 50, 1);
    for (const auto& plug : {plugins::brownian(), plugins::brownian_squared(), plugins::constant(Mat::Ones(2, 1)),
                             plugins::zero(1, 3)}) {
        const auto a = audit_plugin(plug, *bm);
        INFO(plug.label);
        CHECK(a.ok);
        CHECK(a.max_future_derivative == 0.0);
        CHECK(a.max_minus == 0.0);
    }
}

TEST_CASE("a plugin with a future derivative fails the audit") {
    auto bad = plugins::brownian();
    bad.derivative = [](const BrownianSample&, std::size_t, std::size_t, std::size_t, Mat& out) { out = Mat::Ones(1, 1); };
    auto bm = generate_brownian(TimeGrid(32, 1.0), 10, 1);
    const auto a = audit_plugin(bad, *bm);
    CHECK_FALSE(a.ok);
    CHECK(a.max_future_derivative == 1.0);
}

TEST_CASE("window diagonal check") {
    auto bm = generate_brownian(TimeGrid(256, 1.0), 20000, 4);
    const std::vector<double> taus{0.1, 0.3, 0.5};
    const std::vector<double> ladder{0.25, 0.125, 0.0625, 0.03125};
    for (const auto& pt : window_diagonal_check(plugins::brownian(), *bm, taus, ladder)) CHECK(pt.estimate == 0.0);
    for (const auto& pt : window_diagonal_check(plugins::constant(Mat::Constant(1, 1, 3.0)), *bm, taus, ladder))
        CHECK(pt.estimate == 0.0);
    for (const auto& pt : window_diagonal_check(plugins::brownian_squared(), *bm, taus, ladder)) {
        INFO("theta " << pt.theta << " estimate " << pt.estimate << " se " << pt.std_error);
        CHECK(std::abs(pt.estimate - 2.0 * pt.theta / 3.0) <= 3.0 * pt.std_error);
    }
}

TEST_CASE("Clark-Ocone reconstruction") {
    SUBCASE("W(T) and constants are reconstructed exactly") {
        auto bm = generate_brownian(TimeGrid(512, 1.0), 5000, 2);
        CHECK(clark_ocone_check(plugins::brownian(), *bm).relative_error < 1e-3);
        CHECK(clark_ocone_check(plugins::constant(Mat::Constant(1, 1, 2.0)), *bm).relative_error == 0.0);
    }
    SUBCASE("W(T)^2: Ito-sum floor plus regression noise") {
        // The discrete sum misses sum dW^2 - T (relative size N^(-1/2)), and the degree-1
        // fit of 2W(T) on W(s) adds about (2/P)^(1/2).
        const std::size_t N = 2048, P = 20000;
        auto bm = generate_brownian(TimeGrid(N, 1.0), P, 2);
        const auto r = clark_ocone_check(plugins::brownian_squared(), *bm, 1);
        const double model = std::sqrt(1.0 / N + 2.0 / P);
        INFO("error " << r.relative_error << " model " << model);
        CHECK(r.relative_error < 1.3 * model);
        CHECK(r.relative_error > 0.5 * model);
        CHECK(r.mean == doctest::Approx(1.0).epsilon(0.01));
    }
}

TEST_CASE("martingale representation") {
    SUBCASE("W: unit kernel") {
        auto bm = generate_brownian(TimeGrid(64, 1.0), 5000, 5);
        const auto k = martingale_representation(brownian_power(*bm, 1), bm, brownian_features(bm));
        CHECK_FALSE(k.is_zero());
        CHECK(k.reconstruction_error() < 1e-2);
        double out = 0.0;
        for (std::size_t s : {0u, 10u, 40u}) {
            k.evaluate(7, s, 50, &out);
            CHECK(out == doctest::Approx(1.0).epsilon(1e-8));
        }
        k.evaluate(7, 50, 50, &out);
        CHECK(out == 0.0);
    }
    SUBCASE("deterministic processes have the zero kernel") {
        auto bm = generate_brownian(TimeGrid(64, 1.0), 500, 5);
        const auto phi = deterministic(bm->grid, 500, [](double t) { return std::sin(3.0 * t); });
        const auto k = martingale_representation(phi, bm, brownian_features(bm));
        CHECK(k.is_zero());
        CHECK(k.reconstruction_error() < 1e-12);
    }
    SUBCASE("W^2: kernel 2W(s), error at the Ito-sum floor") {
        // sum 2W dW differs from W(t)^2 - t by sum dW^2 - t; relative to Var W(t)^2 this
        // pools to (1.5 dt)^(1/2).
        const std::size_t N = 256;
        auto bm = generate_brownian(TimeGrid(N, 1.0), 10000, 6);
        const auto k = martingale_representation(brownian_power(*bm, 2), bm, brownian_features(bm));
        const double floor = std::sqrt(1.5 / N);
        INFO("error " << k.reconstruction_error() << " floor " << floor);
        CHECK(k.reconstruction_error() > 0.8 * floor);
        CHECK(k.reconstruction_error() < 1.2 * floor);
        double out = 0.0;
        k.evaluate(3, 128, 250, &out);
        CHECK(out == doctest::Approx(2.0 * bm->W(3, 128)).epsilon(0.05));
    }
}

TEST_CASE("limit kernels") {
    const TimeGrid g(256, 1.0);
    const std::vector<double> ladder{0.25, 0.125, 0.0625};
    SUBCASE("constant one: both ratios are one half") {
        const auto one = deterministic(g, 1, [](double) { return 1.0; });
        const auto r = limit_kernel_check(one, one, g, 0.3, ladder);
        for (const auto& pt : r.tau_variant) CHECK(pt.estimate == doctest::Approx(0.5).epsilon(1e-12));
        for (const auto& pt : r.t_variant) CHECK(pt.estimate == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.limit.mean == doctest::Approx(0.5));
    }
    SUBCASE("Phi(t) = t, Psi = 1 at tau = 0") {
        const auto phi = deterministic(g, 1, [](double t) { return t; });
        const auto psi = deterministic(g, 1, [](double) { return 1.0; });
        const auto r = limit_kernel_check(phi, psi, g, 0.0, ladder);
        for (const auto& pt : r.tau_variant) CHECK(std::abs(pt.estimate) < 1e-12);
        for (const auto& pt : r.t_variant) CHECK(pt.estimate == doctest::Approx(pt.theta / 3.0).epsilon(1e-12));
        CHECK(r.limit.mean == 0.0);
    }
    SUBCASE("Phi = Psi = W at tau = 1/2") {
        auto bm = generate_brownian(g, 20000, 8);
        const auto w = brownian_power(*bm, 1);
        const auto r = limit_kernel_check(w, w, g, 0.5, ladder);
        for (const auto& pt : r.tau_variant) CHECK(std::abs(pt.estimate - 0.25) <= 3.0 * pt.std_error);
        for (const auto& pt : r.t_variant)
            CHECK(std::abs(pt.estimate - 0.25 - pt.theta / 6.0) <= 3.0 * pt.std_error);
        CHECK(std::abs(r.limit.mean - 0.25) <= 3.0 * r.limit.std_error);
    }
}

TEST_CASE("counterexample ratios") {
    const auto hi = counterexample_ratio(Counterexample::Oscillating, 0.0, oscillating_thetas(true, 8));
    const auto lo = counterexample_ratio(Counterexample::Oscillating, 0.0, oscillating_thetas(false, 8));
    CHECK(std::abs(hi.back() - 1.0 / 8.0) < 1e-6);
    CHECK(std::abs(lo.back() - 5.0 / 32.0) < 1e-6);
    CHECK(std::abs(hi.back() - lo.back()) > 0.03);
    for (double th : {1e-1, 1e-2, 1e-3}) {
        const double r = counterexample_ratio(Counterexample::Singular, 0.0, {th})[0];
        CHECK(r == doctest::Approx(-4.0 / (3.0 * std::sqrt(th))).epsilon(1e-6));
    }
    CHECK(counterexample_ratio(Counterexample::Singular, 0.0, {0.01})[0] == doctest::Approx(-13.3333333333));
    CHECK(counterexample_horizon(Counterexample::Oscillating) == doctest::Approx(std::sqrt(2.0)));
    CHECK_THROWS_AS(counterexample_ratio(Counterexample::Singular, 0.5, {0.6}), DomainError);
    CHECK(counterexample_from_string("osc") == Counterexample::Oscillating);
    CHECK_THROWS_AS(counterexample_from_string("wavy"), ConfigError);
}

TEST_CASE("vertex rule on the triangle") {
    for (std::size_t L : {1u, 2u, 5u, 16u}) {
        const Mat w = triangle_weights(L);
        double sum = 0.0, ms = 0.0, mt = 0.0;
        for (std::size_t t = 0; t <= L; ++t)
            for (std::size_t s = 0; s <= t; ++s) {
                const double ww = w(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
                sum += ww;
                ms += ww * static_cast<double>(s);
                mt += ww * static_cast<double>(t);
            }
        const double l = static_cast<double>(L);
        CHECK(sum == doctest::Approx(l * l / 2.0).epsilon(1e-14));
        CHECK(ms == doctest::Approx(l * l * l / 6.0).epsilon(1e-14));
        CHECK(mt == doctest::Approx(l * l * l / 3.0).epsilon(1e-14));
    }
}

TEST_CASE("needle cross term decays faster than theta^(3/2)") {
    auto bm = generate_brownian(TimeGrid(512, 1.0), 20000, 9);
    const auto a = brownian_power(*bm, 1);
    const PathTensor c(bm->paths, bm->grid.nodes(), 1, 1, 1.0);
    const auto r = needle_cross_term(a, c, *bm, 0.25, {0.25, 0.125, 0.0625, 0.03125});
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i].estimate < r[i - 1].estimate);
    for (const auto& pt : r) CHECK(std::abs(pt.estimate - std::sqrt(pt.theta) / 2.0) <= 3.0 * pt.std_error + 0.05 * std::sqrt(pt.theta));
}

TEST_CASE("ladder csv") {
    const std::string file = "test_ladder.csv";
    write_ladder_csv(file, {{0.1, 1.0, 0.01}, {0.05, 0.5, 0.02}});
    std::ifstream is(file);
    std::string line;
    std::getline(is, line);
    CHECK(line == "theta,estimate,stderr");
    std::remove(file.c_str());
}
