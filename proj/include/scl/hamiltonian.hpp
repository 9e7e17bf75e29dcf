#pragma once

#include "scl/adjoint.hpp"
#include "scl/forward_sim.hpp"
#include "scl/problem.hpp"
#include "scl/stats.hpp"

#include <string>

namespace scl {

// <y1, b> + <z1, sigma> - f at (t, x, u). Throws DomainError when u is outside U.
double evaluate_hamiltonian(const ControlProblem& p, double t, const Vec& x, const Vec& u, const Vec& y1,
                            const Vec& z1, const Noise& noise = {});

// Reference pair and adjoints at one (path, time) for the script-H function.
struct ReferenceContext {
    Vec x, u;
    Vec p1, q1;
    Mat p2;
    Noise noise;
};

// H(t,x,u,P1,Q1) - 1/2 <P2 s~, s~> + 1/2 <P2 (s - s~), s - s~> with s~ = sigma(x~, u~).
double evaluate_calligraphic_H(const ControlProblem& p, double t, const Vec& x, const Vec& u,
                               const ReferenceContext& ref);

// Central-difference gradient and Hessian in u of the script-H function at u = ref.u, x = ref.x.
// Probes may leave U slightly; the coefficients are evaluated there regardless.
void calligraphic_H_derivatives(const ControlProblem& p, double t, const ReferenceContext& ref, double step,
                                Vec& grad, Mat& hess);

// Kernel quantities along the reference pair at nodes 0..N-1. When the reference and
// its adjoints coincide on every path only one path is stored (shared = true).
struct KernelFrames {
    TimeGrid grid;
    std::size_t paths = 0;  // paths of the underlying bundle
    bool shared = false;
    int n = 0;
    int m = 0;
    AdjointMethod method = AdjointMethod::Analytic;
    double level_stderr = 0.0;
    double slope_stderr = 0.0;

    PathTensor H_u;                 // m
    PathTensor H_uu;                // m x m
    PathTensor H_xx;                // n x n
    PathTensor H_xu;                // m x n
    PathTensor S;                   // m x n
    PathTensor sigma_u_P2_sigma_u;  // m x m
    PathTensor b_u;                 // n x m
    PathTensor sigma_u;             // n x m
    PathTensor ubar;                // m

    std::size_t stored_paths() const noexcept { return shared ? 1 : paths; }
    std::size_t index(std::size_t path) const noexcept { return shared ? 0 : path; }
    std::size_t steps() const noexcept { return grid.steps; }
};

KernelFrames build_kernel_frames(const ControlProblem& p, const PathBundle& ubar, const AdjointSolution& adj);

struct SingularityOptions {
    double analytic_tolerance = 1e-10;
    double quantile = 0.99;  // regression branch only
    double k_sigma = 3.0;
};

struct SingularityReport {
    double sup_Hu = 0.0;
    double sup_Huu_plus = 0.0;  // |H_uu + sigma_u^T P2 sigma_u|
    double tolerance = 0.0;
    double quantile = 1.0;  // 1 means the supremum
    AdjointMethod method = AdjointMethod::Analytic;
    bool singular = false;
};

// On the regression branch the per-node quantile over paths is taken, then the max over nodes.
SingularityReport classical_singularity_check(const KernelFrames& frames, const SingularityOptions& opts = {});

// E[(int |S|^2 dt)^2] with its standard error.
SampleStats s_integrability_diagnostic(const KernelFrames& frames);

}  // namespace scl
