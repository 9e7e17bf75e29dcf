#pragma once

#include "scl/forward_sim.hpp"
#include "scl/hamiltonian.hpp"
#include "scl/malliavin.hpp"
#include "scl/stats.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace scl {

enum class Verdict { Satisfied, Violated, Inconclusive, NotApplicable };
const char* to_string(Verdict v);

// <= tol: satisfied; > k*se + tol: violated; otherwise inconclusive.
Verdict classify(double value, double std_error, double k_sigma, double tol);

struct ConditionCell {
    double tau = 0.0;
    Vec v;
    double value = 0.0;
    double std_error = 0.0;
    double max = std::numeric_limits<double>::quiet_NaN();  // pathwise maximum where meaningful
    Verdict verdict = Verdict::Inconclusive;
};

struct ConditionReport {
    std::string condition;
    std::vector<double> tau_grid;
    std::vector<Vec> v_grid;
    std::vector<ConditionCell> cells;
    Verdict global_verdict = Verdict::Satisfied;
    std::string note;
};

// Violated if any cell is, else inconclusive if any cell is, else satisfied.
Verdict aggregate(const std::vector<ConditionCell>& cells);

// theta_k = theta0 2^-k, k = 0..count-1
std::vector<double> geometric_ladder(double theta0, int count);

struct ConditionOptions {
    double k_sigma = 3.0;
    double tolerance = 1e-12;
    std::vector<double> theta_ladder;  // empty: geometric_ladder(T / 8, 9)
    std::size_t dplus_tail = 4;
    std::vector<double> taus;  // empty: tau_count nodes before the terminal margin
    std::size_t tau_count = 8;
    std::vector<Vec> v_grid;  // empty: the control-set sample grid
    int degree = 2;           // martingale-kernel regression degree
};

// tau nodes in [0, T - max theta - dt] and the effective theta ladder.
std::vector<double> tau_grid(const TimeGrid& grid, const ConditionOptions& opts);
std::vector<double> effective_ladder(const TimeGrid& grid, const ConditionOptions& opts);

// ---------------------------------------------------------------- expansion

struct ExpansionRow {
    double eps = 0.0;
    double delta_J = 0.0;
    double delta_J_se = 0.0;
    double prediction = 0.0;
    double residual = 0.0;  // mean of per-path delta_J - prediction
    double residual_se = 0.0;
};
struct ExpansionReport {
    std::vector<ExpansionRow> rows;
    bool converging = false;  // |residual| / eps^2 non-increasing within k se, or within k se of 0
};

// Common noise: every rung reuses the Brownian sample of ubar.
ExpansionReport cost_expansion_check(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& frames,
                                     const PerturbationSpec& pert, const std::vector<double>& eps_ladder,
                                     double k_sigma = 3.0);

// ------------------------------------------------------------ integral form

// E int <S y1, v> dt for a convex direction. Not applicable unless the reference is singular.
ConditionReport integral_type_test(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& frames,
                                   const PerturbationSpec& pert, const SingularityReport* singular = nullptr,
                                   const ConditionOptions& opts = {});

// ------------------------------------------------------------------ d-plus

struct DplusReport {
    std::vector<LadderPoint> trace;  // ratio per rung
    double value = 0.0;              // 2 * max of the last `tail` rungs
    double std_error = 0.0;
};

// Integrand g(path, s, t) at s-node s and t-node t; the cell rule covers
// cells k0 <= s <= k < k0 + L with t = k + 1 and half weight on the diagonal.
using DplusIntegrand = std::function<double(std::size_t path, std::size_t s, std::size_t t)>;
DplusReport dplus_estimate(const TimeGrid& grid, std::size_t paths, double tau, const std::vector<double>& ladder,
                           const DplusIntegrand& g, std::size_t tail = 4);

// Kernel of the process S^T (v - ubar) from the component kernel built by direction_kernel.
// fmp may be null when the kernel is zero.
DplusReport dplus_estimate(const KernelFrames& frames, const FundamentalMatrixPath* fmp,
                           const MartingaleKernel& kernel, double tau, const Vec& v,
                           const std::vector<double>& ladder, std::size_t tail = 4);

// Martingale kernel of [S^T e_1, ..., S^T e_m, S^T ubar] (n (m + 1) components).
// Deterministic frames give the zero kernel without regression.
MartingaleKernel direction_kernel(const KernelFrames& frames, const PathBundle& ubar, int degree = 2);

// --------------------------------------------------------------- pointwise

ConditionReport pointwise_martingale_test(const ControlProblem& p, const KernelFrames& frames,
                                          const FundamentalMatrixPath* fmp, const MartingaleKernel& kernel,
                                          const SingularityReport* singular = nullptr,
                                          const ConditionOptions& opts = {});

// grad_S: m x n diagonal derivative of S, grad_ubar: m x 1 diagonal derivative of ubar.
ConditionReport pointwise_malliavin_test(const ControlProblem& p, const KernelFrames& frames,
                                         const BrownianSample& brownian, const MalliavinPlugin* grad_S,
                                         const MalliavinPlugin* grad_ubar,
                                         const SingularityReport* singular = nullptr,
                                         const ConditionOptions& opts = {});

// ----------------------------------------------------------------- others

// E int [<H_xx y1, y1> + 2 <H_xu y1, w> + <H_uu w, w>] dt + E <h_xx y1(T), y1(T)>.
SampleStats bonnans_quadratic_form(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& frames,
                                   const PerturbationSpec& w);

// E <H_u(tau), v - ubar(tau)>; significantly positive entries are violations.
ConditionReport needle_first_order_test(const ControlProblem& p, const KernelFrames& frames,
                                        const ConditionOptions& opts = {});

}  // namespace scl
