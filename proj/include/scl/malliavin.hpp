#pragma once

#include "scl/forward_sim.hpp"
#include "scl/regression.hpp"
#include "scl/stats.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace scl {

// An adapted process phi with analytic Malliavin derivatives, all on grid nodes.
// derivative(s, t) is D_{t_s} phi(t_t) and must vanish for s > t; diagonal(k) is
// the diagonal limit D+ phi(t_k). The optional minus-limit must be identically zero
// for adapted processes; a nonzero value is reported by the audit.
struct MalliavinPlugin {
    using NodeFn = std::function<void(const BrownianSample&, std::size_t path, std::size_t node, Mat&)>;
    using PairFn =
        std::function<void(const BrownianSample&, std::size_t path, std::size_t s, std::size_t t, Mat&)>;

    std::string label;
    int rows = 1;
    int cols = 1;
    NodeFn value;
    PairFn derivative;
    NodeFn diagonal;
    NodeFn minus;  // may be empty
};

namespace plugins {
MalliavinPlugin brownian();           // W(t)
MalliavinPlugin brownian_squared();   // W(t)^2
MalliavinPlugin constant(Mat value);  // deterministic
MalliavinPlugin zero(int rows, int cols);
}  // namespace plugins

struct PluginAudit {
    double max_future_derivative = 0.0;  // max |D_s phi(t)| over probes with s > t
    double max_minus = 0.0;              // max |D- phi| over probes
    bool ok = false;
};
PluginAudit audit_plugin(const MalliavinPlugin& plugin, const BrownianSample& brownian, std::size_t probes = 256,
                         std::uint64_t seed = 11);

// One rung of a window ladder; theta is snapped to a whole number of steps.
struct LadderPoint {
    double theta = 0.0;
    double estimate = 0.0;
    double std_error = 0.0;
};

struct ClarkOconeReport {
    double mean = 0.0;
    double relative_error = 0.0;  // ||zeta - recon||_2 / ||zeta - E zeta||_2, absolute when zeta is constant
};
// Reconstructs zeta = phi(T) as E zeta + sum E(D_s zeta | F_s) dW_s, conditional
// expectations by regression on W(s).
ClarkOconeReport clark_ocone_check(const MalliavinPlugin& zeta, const BrownianSample& brownian, int degree = 2);

// phi_v(s, t) for s < t on grid nodes, stored as regression coefficients on the
// path prefix at s. The kernel of a constant component is exactly zero.
class MartingaleKernel {
public:
    MartingaleKernel() = default;
    // Zero kernel for a deterministic process.
    static MartingaleKernel zero(const TimeGrid& grid, int dim, std::string label = "zero");

    const std::string& label() const noexcept { return label_; }
    int dim() const noexcept { return dim_; }
    const TimeGrid& grid() const noexcept { return grid_; }
    bool is_zero() const noexcept { return zero_; }
    double reconstruction_error() const noexcept { return recon_error_; }

    // Fills out[0..dim) with phi_v(t_s, t_t) on the given path; zero unless s < t.
    void evaluate(std::size_t path, std::size_t s, std::size_t t, double* out) const;

private:
    friend MartingaleKernel martingale_representation(const PathTensor&, std::shared_ptr<const BrownianSample>,
                                                      const FeatureSource&, int, std::string);
    std::string label_;
    TimeGrid grid_;
    int dim_ = 0;
    bool zero_ = true;
    double recon_error_ = 0.0;
    FeatureSource features_;
    std::vector<NodeDesign> designs_;  // per s
    std::vector<Mat> coef_;            // per s: basis x (dim * (nodes - 1 - s)), already divided by sqrt(dt)
};

// phi: paths x nodes x dim samples. Targets are nodes 1..nodes-1.
MartingaleKernel martingale_representation(const PathTensor& phi, std::shared_ptr<const BrownianSample> brownian,
                                           const FeatureSource& features, int degree = 2,
                                           std::string label = "phi");

// Window integrals (1/theta^2) int int E|D_s phi(t) - D+ phi(s)|^2 ds dt, averaged over taus.
std::vector<LadderPoint> window_diagonal_check(const MalliavinPlugin& plugin, const BrownianSample& brownian,
                                               const std::vector<double>& taus,
                                               const std::vector<double>& theta_ladder);

struct LimitKernelReport {
    std::vector<LadderPoint> tau_variant;  // <Phi(tau), int Psi>
    std::vector<LadderPoint> t_variant;    // <Phi(t), int Psi>
    SampleStats limit;                     // 1/2 E<Phi(tau), Psi(tau)>
};
// phi, psi: paths x nodes x (any block shape); inner products are Frobenius.
LimitKernelReport limit_kernel_check(const PathTensor& phi, const PathTensor& psi, const TimeGrid& grid, double tau,
                                     const std::vector<double>& theta_ladder);

enum class Counterexample { Oscillating, Singular };
Counterexample counterexample_from_string(const std::string& s);
double counterexample_horizon(Counterexample which);
// r(theta) = (1/theta^2) int_tau^{tau+theta} int_tau^t phi(s, t) ds dt, in closed form.
std::vector<double> counterexample_ratio(Counterexample which, double tau, const std::vector<double>& thetas);
// The two oscillating subsequences: sqrt2 a_{n-1} / 2 and sqrt2 a_n with a_n = 2 / 3^n, n = 1..count.
std::vector<double> oscillating_thetas(bool half_previous, int count);

// E sum_k <a_k, sum_{k0 <= j < k} c_j dW_j> dt over the needle window, divided by theta^{3/2}.
std::vector<LadderPoint> needle_cross_term(const PathTensor& a, const PathTensor& c, const BrownianSample& brownian,
                                           double tau, const std::vector<double>& theta_ladder);

// Node weights of the vertex rule on the triangle {0 <= s <= t <= L} in units of dt^2;
// exact for integrands affine in (s, t). Entry (s, t) with s <= t.
Mat triangle_weights(std::size_t L);

void write_ladder_csv(const std::string& file, const std::vector<LadderPoint>& points);

}  // namespace scl
