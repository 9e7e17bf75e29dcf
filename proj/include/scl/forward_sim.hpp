#pragma once

#include "scl/problem.hpp"
#include "scl/tensor.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace scl {

struct TimeGrid {
    std::size_t steps = 0;
    double horizon = 1.0;

    TimeGrid() = default;
    TimeGrid(std::size_t steps, double horizon);

    std::size_t nodes() const noexcept { return steps + 1; }
    double dt() const noexcept { return horizon / static_cast<double>(steps); }
    double t(std::size_t k) const noexcept {
        return horizon * static_cast<double>(k) / static_cast<double>(steps);
    }
    std::size_t nearest_node(double time) const;
};

// Brownian increments and values on a uniform grid, one counter-based stream per path.
struct BrownianSample {
    TimeGrid grid;
    std::size_t paths = 0;
    std::uint64_t seed = 0;
    PathTensor dW;  // paths x steps
    PathTensor W;   // paths x nodes

    Noise noise(std::size_t path, std::size_t node) const {
        const double* base = dW.raw().data() + path * grid.steps;
        return Noise{std::span<const double>(base, node), W(path, node)};
    }
    // Same paths on a grid with steps/factor steps.
    std::shared_ptr<const BrownianSample> coarsen(std::size_t factor) const;
};

std::shared_ptr<const BrownianSample> generate_brownian(const TimeGrid& grid, std::size_t paths,
                                                        std::uint64_t seed);

struct PathBundle {
    std::shared_ptr<const BrownianSample> brownian;
    AdmissibleControl control;
    std::shared_ptr<const PathTensor> state;  // paths x nodes x n
    // Coefficients, control and state coincide on every path.
    bool path_invariant = false;

    const TimeGrid& grid() const noexcept { return brownian->grid; }
    std::size_t paths() const noexcept { return brownian->paths; }
    const PathTensor& x() const noexcept { return *state; }
    Noise noise(std::size_t path, std::size_t node) const { return brownian->noise(path, node); }
    void control_at(std::size_t path, std::size_t node, Vec& out) const {
        control.value(path, node, grid().t(node), noise(path, node), out);
    }
};

PathBundle simulate_state(const ControlProblem& p, const AdmissibleControl& u,
                          std::shared_ptr<const BrownianSample> noise);
PathBundle simulate_state(const ControlProblem& p, const AdmissibleControl& u, const TimeGrid& grid,
                          std::size_t paths, std::uint64_t seed);

// Expected cost J with its Monte Carlo error, left-point rule for the running cost.
struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::vector<double> per_path;
};
CostEstimate evaluate_cost(const ControlProblem& p, const PathBundle& bundle);

struct PerturbationSpec {
    enum class Mode { Convex, Needle };
    Mode mode = Mode::Convex;
    AdmissibleControl target;  // u in convex mode, the constant v in needle mode
    double tau = 0.0;
    double theta = 0.0;

    static PerturbationSpec convex(AdmissibleControl target);
    static PerturbationSpec needle(Vec v, double tau, double theta);
};

// Needle window snapped to grid nodes: [begin, end).
struct NeedleWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
};
NeedleWindow snap_needle(const TimeGrid& grid, double tau, double theta);

// Evaluates v(t_k) = u(t_k) - ubar(t_k) (convex) or (v - ubar(t_k)) on the window.
class DirectionField {
public:
    DirectionField(const PathBundle& ubar, const PerturbationSpec& pert);
    // Fills ubar and v at (path, node).
    void at(std::size_t path, std::size_t node, Vec& ubar, Vec& v) const;
    const PerturbationSpec& spec() const noexcept { return pert_; }
    NeedleWindow window() const noexcept { return window_; }

private:
    const PathBundle& ubar_;
    PerturbationSpec pert_;
    NeedleWindow window_;
};

// The perturbed control ubar + eps * v.
AdmissibleControl perturbed_control(const PathBundle& ubar, const PerturbationSpec& pert, double eps);

// Coefficient jets along the reference pair, cached per node when the
// reference is path invariant. One instance per worker.
class TrajectoryEvaluator {
public:
    TrajectoryEvaluator(const ControlProblem& p, const PathBundle& bundle, JetOrder order, bool with_cost);
    void load(std::size_t path, std::size_t node);

    double t = 0.0;
    Vec x;
    Vec u;
    VectorJet b;
    VectorJet sigma;
    ScalarJet f;

private:
    struct NodeCache {
        Vec x, u;
        VectorJet b, sigma;
        ScalarJet f;
    };
    const ControlProblem& p_;
    const PathBundle& bundle_;
    JetOrder order_;
    bool with_cost_;
    std::vector<NodeCache> cache_;
};

struct VariationalPaths {
    PathTensor y1;  // paths x nodes x n
    PathTensor y2;  // empty when not requested
    PerturbationSpec perturbation;
};

VariationalPaths simulate_variational(const ControlProblem& p, const PathBundle& ubar, const PerturbationSpec& pert,
                                      bool second_order = true);

// Monte Carlo (E sup_k |z_k|^kappa)^(1/kappa) with a delta-method standard error.
struct NormEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct SlopeReport {
    std::vector<double> eps;
    // [0]: |dx|, [1]: |dx - eps y1|, [2]: |dx - eps y1 - eps^2/2 y2|, kappa = 2
    std::array<std::vector<NormEstimate>, 3> norms;
    std::array<std::vector<double>, 3> norms_kappa4;
    std::array<double, 3> slopes{};
};

SlopeReport perturbation_order_check(const ControlProblem& p, const PathBundle& ubar, const PerturbationSpec& pert,
                                     const std::vector<double>& eps_ladder);

struct FundamentalOptions {
    enum class Scheme { Neumann, Euler };
    Scheme scheme = Scheme::Neumann;
    int order = 6;            // Neumann terms beyond the identity
    double tolerance = 1e-4;  // max Frobenius defect of Phi Psi - I
};

struct FundamentalMatrixPath {
    PathTensor phi;  // paths x nodes x n x n
    PathTensor psi;
    double max_defect = 0.0;
};

FundamentalMatrixPath simulate_fundamental(const ControlProblem& p, const PathBundle& ubar,
                                           const FundamentalOptions& opts = {});

// y1 from Phi(t) [ int Psi (b_u - sigma_x sigma_u) v ds + int Psi sigma_u v dW ].
VariationalPaths explicit_y1(const ControlProblem& p, const PathBundle& ubar, const FundamentalMatrixPath& fmp,
                             const PerturbationSpec& pert);

// (E sup_k |a_k - b_k|^2)^(1/2) over all paths.
NormEstimate sup_norm_difference(const PathTensor& a, const PathTensor& b);

// Binary cache: "SCLB", version, n, m, N, P, seed, T, dW, W, state.
void write_bundle(const std::string& file, const PathBundle& bundle, int control_dim);
struct CachedBundle {
    std::shared_ptr<const BrownianSample> brownian;
    std::shared_ptr<const PathTensor> state;
    int state_dim = 0;
    int control_dim = 0;
};
CachedBundle read_bundle(const std::string& file);

}  // namespace scl
