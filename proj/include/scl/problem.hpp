#pragma once

#include "scl/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scl {

// What a coefficient oracle sees of the driving noise at time t_k: the
// Brownian increments dW_0..dW_{k-1} and the current value W(t_k).
struct Noise {
    std::span<const double> increments;
    double w = 0.0;
};

enum class JetOrder { Value = 0, First = 1, Second = 2 };

// Value and derivatives of a vector coefficient g: R^n x R^m -> R^n.
// dxx[i], dxu[i], duu[i] are the Hessian blocks of component i; dxu[i] is
// m x n with entry (j, l) = d^2 g_i / du_j dx_l.
struct VectorJet {
    Vec value;
    Mat dx;
    Mat du;
    std::vector<Mat> dxx;
    std::vector<Mat> dxu;
    std::vector<Mat> duu;

    void resize(int n, int m);
};

// Value and derivatives of a scalar cost; dxu is m x n.
struct ScalarJet {
    double value = 0.0;
    Vec dx;
    Vec du;
    Mat dxx;
    Mat dxu;
    Mat duu;

    void resize(int n, int m);
};

// Oracles fill a caller-owned jet up to the requested order. Blocks above the
// order may be left untouched.
using VectorOracle =
    std::function<void(double t, const Vec& x, const Vec& u, const Noise& noise, JetOrder, VectorJet&)>;
using ScalarOracle =
    std::function<void(double t, const Vec& x, const Vec& u, const Noise& noise, JetOrder, ScalarJet&)>;
// Terminal cost h(x); only value, dx, dxx are used.
using TerminalOracle = std::function<void(const Vec& x, const Noise& noise, JetOrder, ScalarJet&)>;

class ControlSet {
public:
    enum class Kind { Box, Polytope };

    static ControlSet box(Vec lower, Vec upper);
    static ControlSet polytope(std::vector<Vec> vertices);

    Kind kind() const noexcept { return kind_; }
    int dim() const noexcept { return dim_; }
    const Vec& lower() const noexcept { return lower_; }
    const Vec& upper() const noexcept { return upper_; }
    const std::vector<Vec>& vertices() const noexcept { return vertices_; }

    Vec project(const Vec& u) const;
    double distance(const Vec& u) const;
    bool contains(const Vec& u, double tol = 1e-12) const { return distance(u) <= tol; }

    // Box: {lower, mid, upper}^m. Polytope: vertices, pairwise midpoints, centroid.
    const std::vector<Vec>& sample_grid() const noexcept { return grid_; }
    void set_sample_grid(std::vector<Vec> grid);

private:
    Kind kind_ = Kind::Box;
    int dim_ = 0;
    Vec lower_;
    Vec upper_;
    std::vector<Vec> vertices_;
    std::vector<Vec> grid_;
};

// Minimum-norm point of the convex hull of the given points (Wolfe).
Vec min_norm_point(const std::vector<Vec>& points);

// A control process u(t) evaluated at grid node k of a path. Adaptedness is
// by construction: path functionals only see the increments before node k.
class AdmissibleControl {
public:
    enum class Kind { Constant, TimeFunction, Sampled, PathFunctional, Composite };
    using Evaluator =
        std::function<void(std::size_t path, std::size_t node, double t, const Noise& noise, Vec& out)>;

    AdmissibleControl() = default;

    static AdmissibleControl constant(Vec value);
    static AdmissibleControl time_function(std::function<Vec(double)> fn, int dim);
    // values: paths x nodes x m
    static AdmissibleControl sampled(std::shared_ptr<const PathTensor> values);
    static AdmissibleControl path_functional(std::function<void(double t, const Noise&, Vec&)> fn, int dim);
    // a + scale * (b - a) or, with mask, a + (b - a) on nodes [from, to).
    static AdmissibleControl blend(const AdmissibleControl& a, const AdmissibleControl& b, double scale);
    static AdmissibleControl window(const AdmissibleControl& a, const AdmissibleControl& b,
                                    std::size_t from, std::size_t to);

    Kind kind() const noexcept { return kind_; }
    int dim() const noexcept { return dim_; }
    bool deterministic() const noexcept { return deterministic_; }
    bool valid() const noexcept { return static_cast<bool>(eval_); }

    void value(std::size_t path, std::size_t node, double t, const Noise& noise, Vec& out) const {
        eval_(path, node, t, noise, out);
    }
    // Value at an arbitrary time; only meaningful for deterministic controls.
    Vec at_time(double t) const;
    const Vec& constant_value() const noexcept { return constant_; }

private:
    Kind kind_ = Kind::Constant;
    int dim_ = 0;
    bool deterministic_ = true;
    Vec constant_;
    Evaluator eval_;
    std::function<Vec(double)> time_fn_;
};

enum class CoefficientClass { Deterministic, Random };

// Linear-quadratic data; G is constant, the rest may depend on time. M is m x n.
struct LqData {
    std::function<Mat(double)> A, B, C, D, R, M, N;
    Mat G;
    bool time_invariant = true;
};

struct ControlProblem {
    std::string name;
    int state_dim = 0;
    int control_dim = 0;
    double horizon = 1.0;
    Vec initial_state;
    VectorOracle drift;
    VectorOracle diffusion;
    ScalarOracle running_cost;
    TerminalOracle terminal_cost;
    ControlSet control_set;
    CoefficientClass coefficient_class = CoefficientClass::Deterministic;
    std::optional<LqData> lq;
    double lipschitz_bound = 0.0;  // declared bound on first derivatives, 0 when undeclared
};

struct LqMatrices {
    Mat A, B, C, D, R, M, N, G;
};

ControlProblem make_lq_problem(const LqMatrices& data, double horizon, Vec x0, ControlSet set);
ControlProblem make_lq_problem(const LqData& data, int n, int m, double horizon, Vec x0, ControlSet set);

// Problem from expression strings over t, x[i], u[j], w. Derivatives are symbolic.
struct ExpressionProblemSpec {
    std::string name = "custom";
    int n = 1;
    int m = 1;
    double horizon = 1.0;
    Vec x0;
    std::vector<std::string> drift;
    std::vector<std::string> diffusion;
    std::string running_cost = "0";
    std::string terminal_cost = "0";
    ControlSet control_set;
    double lipschitz_bound = 0.0;
};
ControlProblem make_expression_problem(const ExpressionProblemSpec& spec);

namespace presets {
// b=u, sigma=u, f=u^2/2, h=-x^2/2, U=[-1,1], x0=0, T=1.
ControlProblem example33();
// Two states, two controls: B=diag(1,0), D=diag(0,1), G=diag(1,0), U=[-1,1]^2.
ControlProblem example34();
// b=sin(x)+u, sigma=u, f=u^2/2, h=x^2/2, x0=0.5, U=[-1,1].
ControlProblem sine();
// example33 with h=0.
ControlProblem example33_no_terminal();
}  // namespace presets

struct ValidationOptions {
    double fd_step = 1e-5;
    double tolerance = 1e-6;
    int probes = 16;
    std::uint64_t seed = 7;
};

struct OracleResidual {
    std::string oracle;  // "b", "sigma", "f", "h"
    std::string block;   // "x", "u", "xx", "xu", "uu"
    double max_error = 0.0;
    bool pass = true;
};

struct ValidationReport {
    std::vector<OracleResidual> residuals;
    std::vector<std::string> issues;
    double tolerance = 0.0;
    double max_symmetry_defect = 0.0;
    double max_first_derivative = 0.0;
    bool control_set_ok = true;
    bool pass = true;
};

ValidationReport validate_problem(const ControlProblem& p, const ValidationOptions& opts = {});

// Jet evaluation with shape checks; throws StructuralError / OracleError.
void eval_vector_jet(const ControlProblem& p, const VectorOracle& g, const char* name, double t,
                     const Vec& x, const Vec& u, const Noise& noise, JetOrder order, VectorJet& jet);
void eval_scalar_jet(const ControlProblem& p, double t, const Vec& x, const Vec& u, const Noise& noise,
                     JetOrder order, ScalarJet& jet);
void eval_terminal_jet(const ControlProblem& p, const Vec& x, const Noise& noise, JetOrder order,
                       ScalarJet& jet);

}  // namespace scl
