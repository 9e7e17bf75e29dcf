#include "scl/forward_sim.hpp"

#include "scl/errors.hpp"
#include "scl/parallel.hpp"
#include "scl/rng.hpp"
#include "scl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace scl {

TimeGrid::TimeGrid(std::size_t steps_, double horizon_) : steps(steps_), horizon(horizon_) {
    if (steps == 0) throw ConfigError("time grid needs at least one step");
    if (!(horizon > 0.0)) throw ConfigError("time grid horizon must be positive");
}

std::size_t TimeGrid::nearest_node(double time) const {
    const double pos = std::round(time / horizon * static_cast<double>(steps));
    return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(steps)));
}

// ------------------------------------------------------------------ Brownian

std::shared_ptr<const BrownianSample> generate_brownian(const TimeGrid& grid, std::size_t paths,
                                                        std::uint64_t seed) {
    if (paths == 0) throw ConfigError("need at least one path");
    auto out = std::make_shared<BrownianSample>();
    out->grid = grid;
    out->paths = paths;
    out->seed = seed;
    out->dW = PathTensor(paths, grid.steps, 1);
    out->W = PathTensor(paths, grid.nodes(), 1);
    const double scale = std::sqrt(grid.dt());
    parallel_for(paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const PathNormalStream stream(seed, p);
            double* dw = out->dW.raw().data() + p * grid.steps;
            for (std::size_t block = 0; 2 * block < grid.steps; ++block) {
                const auto z = stream.pair(block);
                dw[2 * block] = scale * z[0];
                if (2 * block + 1 < grid.steps) dw[2 * block + 1] = scale * z[1];
            }
            double w = 0.0;
            out->W(p, 0) = 0.0;
            for (std::size_t k = 0; k < grid.steps; ++k) {
                w += dw[k];
                out->W(p, k + 1) = w;
            }
        }
    });
    return out;
}

std::shared_ptr<const BrownianSample> BrownianSample::coarsen(std::size_t factor) const {
    if (factor == 0 || grid.steps % factor != 0) throw ConfigError("coarsening factor must divide the step count");
    auto out = std::make_shared<BrownianSample>();
    out->grid = TimeGrid(grid.steps / factor, grid.horizon);
    out->paths = paths;
    out->seed = seed;
    out->dW = PathTensor(paths, out->grid.steps, 1);
    out->W = PathTensor(paths, out->grid.nodes(), 1);
    for (std::size_t p = 0; p < paths; ++p) {
        for (std::size_t k = 0; k < out->grid.steps; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < factor; ++j) s += dW(p, k * factor + j);
            out->dW(p, k) = s;
        }
        for (std::size_t k = 0; k < out->grid.nodes(); ++k) out->W(p, k) = W(p, k * factor);
    }
    return out;
}

// ----------------------------------------------------------------------- state

namespace {

bool state_is_path_invariant(const PathTensor& x) {
    const std::size_t block = x.nodes() * x.block_size();
    const double* first = x.raw().data();
    for (std::size_t p = 1; p < x.paths(); ++p) {
        if (std::memcmp(first, first + p * block, block * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace

PathBundle simulate_state(const ControlProblem& p, const AdmissibleControl& u,
                          std::shared_ptr<const BrownianSample> noise) {
    if (!u.valid()) throw ConfigError("control process is not set");
    if (u.dim() != p.control_dim) throw StructuralError("control dimension does not match the problem");
    if (p.initial_state.size() != p.state_dim) throw StructuralError("initial state has the wrong length");
    const auto& grid = noise->grid;
    const int n = p.state_dim;
    auto state = std::make_shared<PathTensor>(noise->paths, grid.nodes(), static_cast<std::size_t>(n));
    const double dt = grid.dt();

    parallel_for(noise->paths, [&](std::size_t begin, std::size_t end) {
        VectorJet b, s;
        Vec x(n), uk(p.control_dim);
        for (std::size_t path = begin; path < end; ++path) {
            x = p.initial_state;
            state->vec(path, 0) = x;
            for (std::size_t k = 0; k < grid.steps; ++k) {
                const double t = grid.t(k);
                const Noise nz = noise->noise(path, k);
                u.value(path, k, t, nz, uk);
                p.drift(t, x, uk, nz, JetOrder::Value, b);
                p.diffusion(t, x, uk, nz, JetOrder::Value, s);
                if (b.value.size() != n || s.value.size() != n)
                    throw StructuralError("drift or diffusion returned a vector of the wrong length");
                x += b.value * dt + s.value * noise->dW(path, k);
                if (!x.allFinite()) throw IntegrationError("state became non-finite", path, k + 1);
                state->vec(path, k + 1) = x;
            }
        }
    });

    PathBundle out;
    out.brownian = std::move(noise);
    out.control = u;
    out.path_invariant = p.coefficient_class == CoefficientClass::Deterministic && u.deterministic() &&
                         state_is_path_invariant(*state);
    out.state = std::move(state);
    return out;
}

PathBundle simulate_state(const ControlProblem& p, const AdmissibleControl& u, const TimeGrid& grid,
                          std::size_t paths, std::uint64_t seed) {
    return simulate_state(p, u, generate_brownian(grid, paths, seed));
}

CostEstimate evaluate_cost(const ControlProblem& p, const PathBundle& bundle) {
    const auto& grid = bundle.grid();
    CostEstimate out;
    out.per_path.resize(bundle.paths());
    parallel_for(bundle.paths(), [&](std::size_t begin, std::size_t end) {
        ScalarJet f;
        Vec u(p.control_dim), x(p.state_dim);
        for (std::size_t path = begin; path < end; ++path) {
            double running = 0.0;
            for (std::size_t k = 0; k < grid.steps; ++k) {
                const Noise nz = bundle.noise(path, k);
                bundle.control.value(path, k, grid.t(k), nz, u);
                x = bundle.x().vec(path, k);
                p.running_cost(grid.t(k), x, u, nz, JetOrder::Value, f);
                running += f.value;
            }
            x = bundle.x().vec(path, grid.steps);
            p.terminal_cost(x, bundle.noise(path, grid.steps), JetOrder::Value, f);
            out.per_path[path] = running * grid.dt() + f.value;
        }
    });
    const auto stats = sample_stats(out.per_path);
    out.mean = stats.mean;
    out.std_error = stats.std_error;
    return out;
}

// ---------------------------------------------------------------- perturbations

PerturbationSpec PerturbationSpec::convex(AdmissibleControl target) {
    PerturbationSpec s;
    s.mode = Mode::Convex;
    s.target = std::move(target);
    return s;
}

PerturbationSpec PerturbationSpec::needle(Vec v, double tau, double theta) {
    PerturbationSpec s;
    s.mode = Mode::Needle;
    s.target = AdmissibleControl::constant(std::move(v));
    s.tau = tau;
    s.theta = theta;
    return s;
}

NeedleWindow snap_needle(const TimeGrid& grid, double tau, double theta) {
    if (!(theta > 0.0) || tau < 0.0) throw DomainError("forward_sim", "needle window needs tau >= 0 and theta > 0");
    if (tau + theta > grid.horizon * (1.0 + 1e-12))
        throw DomainError("forward_sim", "needle window extends past the horizon");
    NeedleWindow w;
    w.begin = grid.nearest_node(tau);
    w.end = grid.nearest_node(tau + theta);
    if (w.end < w.begin + 2) throw DomainError("forward_sim", "needle window must cover at least two grid steps");
    return w;
}

DirectionField::DirectionField(const PathBundle& ubar, const PerturbationSpec& pert) : ubar_(ubar), pert_(pert) {
    if (!pert_.target.valid()) throw ConfigError("perturbation target control is not set");
    if (pert_.mode == PerturbationSpec::Mode::Needle) window_ = snap_needle(ubar.grid(), pert_.tau, pert_.theta);
}

void DirectionField::at(std::size_t path, std::size_t node, Vec& ubar, Vec& v) const {
    const double t = ubar_.grid().t(node);
    const Noise nz = ubar_.noise(path, node);
    ubar_.control.value(path, node, t, nz, ubar);
    if (pert_.mode == PerturbationSpec::Mode::Needle && (node < window_.begin || node >= window_.end)) {
        v.setZero(ubar.size());
        return;
    }
    pert_.target.value(path, node, t, nz, v);
    v -= ubar;
}

AdmissibleControl perturbed_control(const PathBundle& ubar, const PerturbationSpec& pert, double eps) {
    if (pert.mode == PerturbationSpec::Mode::Convex) return AdmissibleControl::blend(ubar.control, pert.target, eps);
    const auto w = snap_needle(ubar.grid(), pert.tau, pert.theta);
    return AdmissibleControl::window(ubar.control, pert.target, w.begin, w.end);
}

// ------------------------------------------------------------ trajectory jets

TrajectoryEvaluator::TrajectoryEvaluator(const ControlProblem& p, const PathBundle& bundle, JetOrder order,
                                         bool with_cost)
    : p_(p), bundle_(bundle), order_(order), with_cost_(with_cost) {
    x.resize(p.state_dim);
    u.resize(p.control_dim);
    if (!bundle.path_invariant) return;
    cache_.resize(bundle.grid().nodes());
    for (std::size_t k = 0; k < cache_.size(); ++k) {
        load(0, k);
        cache_[k] = NodeCache{x, u, b, sigma, f};
    }
}

void TrajectoryEvaluator::load(std::size_t path, std::size_t node) {
    t = bundle_.grid().t(node);
    if (!cache_.empty() && cache_.size() == bundle_.grid().nodes() && cache_[node].x.size() == p_.state_dim) {
        const auto& c = cache_[node];
        x = c.x;
        u = c.u;
        b = c.b;
        sigma = c.sigma;
        if (with_cost_) f = c.f;
        return;
    }
    const Noise nz = bundle_.noise(path, node);
    x = bundle_.x().vec(path, node);
    bundle_.control.value(path, node, t, nz, u);
    p_.drift(t, x, u, nz, order_, b);
    p_.diffusion(t, x, u, nz, order_, sigma);
    if (with_cost_) p_.running_cost(t, x, u, nz, order_, f);
}

// ------------------------------------------------------------ variational paths

VariationalPaths simulate_variational(const ControlProblem& p, const PathBundle& ubar, const PerturbationSpec& pert,
                                      bool second_order) {
    const auto& grid = ubar.grid();
    const int n = p.state_dim;
    const int m = p.control_dim;
    const DirectionField field(ubar, pert);
    VariationalPaths out;
    out.perturbation = pert;
    out.y1 = PathTensor(ubar.paths(), grid.nodes(), static_cast<std::size_t>(n));
    if (second_order) out.y2 = PathTensor(ubar.paths(), grid.nodes(), static_cast<std::size_t>(n));
    const double dt = grid.dt();

    parallel_for(ubar.paths(), [&](std::size_t begin, std::size_t end) {
        TrajectoryEvaluator ev(p, ubar, second_order ? JetOrder::Second : JetOrder::First, false);
        Vec y1(n), y2(n), ub(m), v(m), qb(n), qs(n), next1(n), next2(n);
        for (std::size_t path = begin; path < end; ++path) {
            y1.setZero();
            y2.setZero();
            for (std::size_t k = 0; k < grid.steps; ++k) {
                ev.load(path, k);
                field.at(path, k, ub, v);
                const double dw = ubar.brownian->dW(path, k);
                next1 = y1 + (ev.b.dx * y1 + ev.b.du * v) * dt + (ev.sigma.dx * y1 + ev.sigma.du * v) * dw;
                if (second_order) {
                    for (int i = 0; i < n; ++i) {
                        const auto ii = static_cast<std::size_t>(i);
                        qb(i) = y1.dot(ev.b.dxx[ii] * y1) + 2.0 * v.dot(ev.b.dxu[ii] * y1) + v.dot(ev.b.duu[ii] * v);
                        qs(i) = y1.dot(ev.sigma.dxx[ii] * y1) + 2.0 * v.dot(ev.sigma.dxu[ii] * y1) +
                                v.dot(ev.sigma.duu[ii] * v);
                    }
                    next2 = y2 + (ev.b.dx * y2 + qb) * dt + (ev.sigma.dx * y2 + qs) * dw;
                    if (!next2.allFinite()) throw IntegrationError("y2 became non-finite", path, k + 1);
                    y2 = next2;
                    out.y2.vec(path, k + 1) = y2;
                }
                if (!next1.allFinite()) throw IntegrationError("y1 became non-finite", path, k + 1);
                y1 = next1;
                out.y1.vec(path, k + 1) = y1;
            }
        }
    });
    return out;
}

// --------------------------------------------------------------- order check

namespace {

NormEstimate norm_from_sup_squares(const std::vector<double>& sup2) {
    const auto stats = sample_stats(sup2);
    NormEstimate e;
    e.value = std::sqrt(std::max(0.0, stats.mean));
    e.std_error = e.value > 0.0 ? stats.std_error / (2.0 * e.value) : 0.0;
    return e;
}

}  // namespace

NormEstimate sup_norm_difference(const PathTensor& a, const PathTensor& b) {
    if (a.paths() != b.paths() || a.nodes() != b.nodes() || a.block_size() != b.block_size())
        throw StructuralError("sup_norm_difference: tensor shapes differ");
    std::vector<double> sup2(a.paths(), 0.0);
    for (std::size_t p = 0; p < a.paths(); ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.nodes(); ++k) s = std::max(s, (a.vec(p, k) - b.vec(p, k)).squaredNorm());
        sup2[p] = s;
    }
    return norm_from_sup_squares(sup2);
}

SlopeReport perturbation_order_check(const ControlProblem& p, const PathBundle& ubar, const PerturbationSpec& pert,
                                     const std::vector<double>& eps_ladder) {
    if (eps_ladder.size() < 3) throw ConfigError("epsilon ladder needs at least three rungs");
    for (double e : eps_ladder) {
        if (!(e > 0.0)) throw ConfigError("epsilon ladder entries must be positive");
    }
    if (pert.mode != PerturbationSpec::Mode::Convex)
        throw ConfigError("perturbation order check requires a convex perturbation");
    const auto var = simulate_variational(p, ubar, pert, true);
    SlopeReport report;
    report.eps = eps_ladder;
    const std::size_t P = ubar.paths();
    const std::size_t nodes = ubar.grid().nodes();
    for (double eps : eps_ladder) {
        const auto bundle = simulate_state(p, perturbed_control(ubar, pert, eps), ubar.brownian);
        std::array<std::vector<double>, 3> sup2;
        std::array<std::vector<double>, 3> sup4;
        for (auto& s : sup2) s.assign(P, 0.0);
        for (auto& s : sup4) s.assign(P, 0.0);
        for (std::size_t path = 0; path < P; ++path) {
            for (std::size_t k = 0; k < nodes; ++k) {
                const Vec dx = bundle.x().vec(path, k) - ubar.x().vec(path, k);
                const Vec r1 = dx - eps * var.y1.vec(path, k);
                const Vec r2 = r1 - 0.5 * eps * eps * var.y2.vec(path, k);
                const double q[3] = {dx.squaredNorm(), r1.squaredNorm(), r2.squaredNorm()};
                for (int j = 0; j < 3; ++j) {
                    sup2[static_cast<std::size_t>(j)][path] = std::max(sup2[static_cast<std::size_t>(j)][path], q[j]);
                    sup4[static_cast<std::size_t>(j)][path] =
                        std::max(sup4[static_cast<std::size_t>(j)][path], q[j] * q[j]);
                }
            }
        }
        for (std::size_t j = 0; j < 3; ++j) {
            report.norms[j].push_back(norm_from_sup_squares(sup2[j]));
            report.norms_kappa4[j].push_back(std::pow(std::max(0.0, sample_stats(sup4[j]).mean), 0.25));
        }
    }
    for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> values;
        for (const auto& e : report.norms[j]) values.push_back(e.value);
        report.slopes[j] = loglog_slope(report.eps, values);
    }
    return report;
}

// ---------------------------------------------------------- fundamental matrix

FundamentalMatrixPath simulate_fundamental(const ControlProblem& p, const PathBundle& ubar,
                                           const FundamentalOptions& opts) {
    const auto& grid = ubar.grid();
    const int n = p.state_dim;
    const auto nn = static_cast<std::size_t>(n);
    FundamentalMatrixPath out;
    out.phi = PathTensor(ubar.paths(), grid.nodes(), nn, nn);
    out.psi = PathTensor(ubar.paths(), grid.nodes(), nn, nn);
    const double dt = grid.dt();
    const Mat I = Mat::Identity(n, n);

    // Static chunks of fixed size keep the max reduction independent of the worker count.
    const std::size_t chunk = 256;
    const std::size_t chunks = (ubar.paths() + chunk - 1) / chunk;
    std::vector<double> chunk_defect(chunks, 0.0);
    parallel_for(chunks, [&](std::size_t cb, std::size_t ce) {
        TrajectoryEvaluator ev(p, ubar, JetOrder::First, false);
        Mat phi(n, n), psi(n, n), A(n, n), term(n, n), inv(n, n);
        for (std::size_t c = cb; c < ce; ++c) {
            double defect = 0.0;
            for (std::size_t path = c * chunk; path < std::min(ubar.paths(), (c + 1) * chunk); ++path) {
                phi = I;
                psi = I;
                out.phi.at(path, 0) = phi;
                out.psi.at(path, 0) = psi;
                for (std::size_t k = 0; k < grid.steps; ++k) {
                    ev.load(path, k);
                    const double dw = ubar.brownian->dW(path, k);
                    A = ev.b.dx * dt + ev.sigma.dx * dw;
                    if (opts.scheme == FundamentalOptions::Scheme::Neumann) {
                        inv = I;
                        term = I;
                        for (int j = 0; j < opts.order; ++j) {
                            term = -(term * A);
                            inv += term;
                        }
                        psi = psi * inv;
                    } else {
                        psi = psi + psi * ((ev.sigma.dx * ev.sigma.dx - ev.b.dx) * dt - ev.sigma.dx * dw);
                    }
                    phi = phi + A * phi;
                    if (!phi.allFinite() || !psi.allFinite())
                        throw IntegrationError("fundamental matrix became non-finite", path, k + 1);
                    out.phi.at(path, k + 1) = phi;
                    out.psi.at(path, k + 1) = psi;
                    defect = std::max(defect, (phi * psi - I).norm());
                }
            }
            chunk_defect[c] = defect;
        }
    });
    for (double d : chunk_defect) out.max_defect = std::max(out.max_defect, d);
    if (out.max_defect > opts.tolerance)
        throw ConditioningError("fundamental matrix defect " + std::to_string(out.max_defect) +
                                " exceeds tolerance " + std::to_string(opts.tolerance));
    return out;
}

VariationalPaths explicit_y1(const ControlProblem& p, const PathBundle& ubar, const FundamentalMatrixPath& fmp,
                             const PerturbationSpec& pert) {
    const auto& grid = ubar.grid();
    const int n = p.state_dim;
    const int m = p.control_dim;
    const DirectionField field(ubar, pert);
    VariationalPaths out;
    out.perturbation = pert;
    out.y1 = PathTensor(ubar.paths(), grid.nodes(), static_cast<std::size_t>(n));
    const double dt = grid.dt();
    parallel_for(ubar.paths(), [&](std::size_t begin, std::size_t end) {
        TrajectoryEvaluator ev(p, ubar, JetOrder::First, false);
        Vec acc(n), ub(m), v(m);
        for (std::size_t path = begin; path < end; ++path) {
            acc.setZero();
            for (std::size_t k = 0; k < grid.steps; ++k) {
                ev.load(path, k);
                field.at(path, k, ub, v);
                const double dw = ubar.brownian->dW(path, k);
                const Vec sv = ev.sigma.du * v;
                acc += fmp.psi.at(path, k) * ((ev.b.du * v - ev.sigma.dx * sv) * dt + sv * dw);
                out.y1.vec(path, k + 1) = fmp.phi.at(path, k + 1) * acc;
            }
        }
    });
    return out;
}

// ------------------------------------------------------------------ bundle cache

namespace {

constexpr char kMagic[4] = {'S', 'C', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ConfigError("bundle cache is truncated");
    return v;
}

void put_array(std::ofstream& os, const std::vector<double>& a) {
    os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
}

void get_array(std::ifstream& is, std::vector<double>& a) {
    is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    if (!is) throw ConfigError("bundle cache is truncated");
}

}  // namespace

void write_bundle(const std::string& file, const PathBundle& bundle, int control_dim) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    os.write(kMagic, 4);
    put(os, kVersion);
    put(os, static_cast<std::uint32_t>(bundle.x().rows()));
    put(os, static_cast<std::uint32_t>(control_dim));
    put(os, static_cast<std::uint64_t>(bundle.grid().steps));
    put(os, static_cast<std::uint64_t>(bundle.paths()));
    put(os, bundle.brownian->seed);
    put(os, bundle.grid().horizon);
    put_array(os, bundle.brownian->dW.raw());
    put_array(os, bundle.brownian->W.raw());
    put_array(os, bundle.x().raw());
    if (!os) throw ConfigError("failed writing " + file);
}

CachedBundle read_bundle(const std::string& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + file);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw ConfigError(file + " is not a bundle cache");
    if (get<std::uint32_t>(is) != kVersion) throw ConfigError(file + " has an unsupported cache version");
    CachedBundle out;
    out.state_dim = static_cast<int>(get<std::uint32_t>(is));
    out.control_dim = static_cast<int>(get<std::uint32_t>(is));
    const auto steps = get<std::uint64_t>(is);
    const auto paths = get<std::uint64_t>(is);
    const auto seed = get<std::uint64_t>(is);
    const auto horizon = get<double>(is);
    auto b = std::make_shared<BrownianSample>();
    b->grid = TimeGrid(steps, horizon);
    b->paths = paths;
    b->seed = seed;
    b->dW = PathTensor(paths, steps, 1);
    b->W = PathTensor(paths, steps + 1, 1);
    auto state = std::make_shared<PathTensor>(paths, steps + 1, static_cast<std::size_t>(out.state_dim));
    get_array(is, b->dW.raw());
    get_array(is, b->W.raw());
    get_array(is, state->raw());
    out.brownian = std::move(b);
    out.state = std::move(state);
    return out;
}

}  // namespace scl
