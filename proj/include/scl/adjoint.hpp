#pragma once

#include "scl/forward_sim.hpp"
#include "scl/problem.hpp"
#include "scl/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace scl {

enum class AdjointMethod { Auto, Analytic, Regression };

const char* to_string(AdjointMethod m);
AdjointMethod adjoint_method_from_string(const std::string& s);

struct AdjointOptions {
    AdjointMethod method = AdjointMethod::Auto;
    int degree = 2;
};

struct FirstAdjoint {
    PathTensor p1;  // paths x (N+1) x n
    PathTensor q1;  // paths x N x n
    AdjointMethod method = AdjointMethod::Analytic;
    // Largest regression standard errors of the level and of Q (0 on the analytic branch).
    double level_stderr = 0.0;
    double slope_stderr = 0.0;
};

struct SecondAdjoint {
    PathTensor p2;  // paths x (N+1) x n x n
    PathTensor q2;  // paths x N x n x n
    AdjointMethod method = AdjointMethod::Analytic;
    double symmetry_defect = 0.0;  // largest |P2 - P2^T| before symmetrization
    double level_stderr = 0.0;
    double slope_stderr = 0.0;
};

struct AdjointSolution {
    PathTensor p1, q1, p2, q2;
    AdjointMethod method = AdjointMethod::Analytic;
    int degree = 0;
    double symmetry_defect = 0.0;
    double level_stderr = 0.0;
    double slope_stderr = 0.0;
};

// LQ data, deterministic coefficients and a deterministic reference control.
bool analytic_branch_applies(const ControlProblem& p, const PathBundle& ubar);

// Backward RK4 for the Riccati equation; P2 at every grid node, Q2 = 0.
std::vector<Mat> solve_lq_riccati(const ControlProblem& lq, const TimeGrid& grid);

FirstAdjoint solve_first_adjoint(const ControlProblem& p, const PathBundle& ubar, const AdjointOptions& opts = {});
SecondAdjoint solve_second_adjoint(const ControlProblem& p, const PathBundle& ubar, const FirstAdjoint& first,
                                   const AdjointOptions& opts = {});
AdjointSolution solve_adjoints(const ControlProblem& p, const PathBundle& ubar, const AdjointOptions& opts = {});

// Per-node mean/std of every adjoint component, one row per node.
void write_adjoint_csv(const std::string& file, const AdjointSolution& adj, const TimeGrid& grid);

struct DualityResidual {
    std::string identity;
    double lhs = 0.0;        // E of the terminal pairing
    double integral = 0.0;   // E of the time integral
    double residual = 0.0;   // E[lhs + integral]
    double std_error = 0.0;  // paired standard error of the residual
    double bias_allowance = 0.0;
    bool pass = false;
};

struct DualityOptions {
    double k_sigma = 3.0;
    double bias_factor = 1.0;  // allowance = bias_factor * dt * (E|lhs| + E int |integrand|)
};

// The three Ito identities pairing (P1, Q1) with y1 and y2 and (P2, Q2) with y1 y1^T.
std::array<DualityResidual, 3> adjoint_duality_check(const ControlProblem& p, const PathBundle& ubar,
                                                      const AdjointSolution& adj, const VariationalPaths& y,
                                                      const DualityOptions& opts = {});

// H_xx = sum_i P1_i b_xx^i + Q1_i sigma_xx^i - f_xx and the analogous H_xu (m x n), H_uu.
void hamiltonian_hessians(const VectorJet& b, const VectorJet& sigma, const ScalarJet& f, const Vec& p1,
                          const Vec& q1, Mat& hxx, Mat& hxu, Mat& huu);

}  // namespace scl
