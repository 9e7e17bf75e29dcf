#include "scl/conditions.hpp"

#include "scl/errors.hpp"
#include "scl/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace scl {

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Satisfied: return "satisfied";
        case Verdict::Violated: return "violated";
        case Verdict::Inconclusive: return "inconclusive";
        case Verdict::NotApplicable: return "not_applicable";
    }
    return "inconclusive";
}

Verdict classify(double value, double std_error, double k_sigma, double tol) {
    if (value <= tol) return Verdict::Satisfied;
    if (value > k_sigma * std_error + tol) return Verdict::Violated;
    return Verdict::Inconclusive;
}

Verdict aggregate(const std::vector<ConditionCell>& cells) {
    bool inconclusive = false;
    for (const auto& c : cells) {
        if (c.verdict == Verdict::Violated) return Verdict::Violated;
        if (c.verdict == Verdict::Inconclusive) inconclusive = true;
    }
    return inconclusive ? Verdict::Inconclusive : Verdict::Satisfied;
}

std::vector<double> geometric_ladder(double theta0, int count) {
    std::vector<double> out;
    for (int k = 0; k < count; ++k) out.push_back(theta0 * std::ldexp(1.0, -k));
    return out;
}

std::vector<double> effective_ladder(const TimeGrid& grid, const ConditionOptions& opts) {
    auto ladder = opts.theta_ladder.empty() ? geometric_ladder(grid.horizon / 8.0, 9) : opts.theta_ladder;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!(ladder[i] > 0.0)) throw ConfigError("theta ladder entries must be positive");
        if (i > 0 && !(ladder[i] < ladder[i - 1])) throw ConfigError("theta ladder must be strictly decreasing");
    }
    return ladder;
}

std::vector<double> tau_grid(const TimeGrid& grid, const ConditionOptions& opts) {
    const auto ladder = effective_ladder(grid, opts);
    const double margin = ladder.empty() ? 0.0 : ladder.front();
    const double upper = grid.horizon - margin - grid.dt();
    if (upper < 0.0) throw ConfigError("theta ladder leaves no room for tau in [0, T]");
    std::vector<double> out;
    if (!opts.taus.empty()) {
        for (double tau : opts.taus) {
            if (tau < 0.0 || tau > upper + 1e-12)
                throw ConfigError("tau " + std::to_string(tau) + " outside [0, T - max theta - dt]");
            out.push_back(grid.t(grid.nearest_node(tau)));
        }
        return out;
    }
    const auto k_max = static_cast<std::size_t>(std::floor(upper / grid.dt() + 1e-9));
    const std::size_t count = std::max<std::size_t>(opts.tau_count, 1);
    std::size_t last = static_cast<std::size_t>(-1);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t k =
            count == 1 ? 0 : static_cast<std::size_t>(std::llround(static_cast<double>(i * k_max) / static_cast<double>(count - 1)));
        if (k == last) continue;
        last = k;
        out.push_back(grid.t(k));
    }
    return out;
}

namespace {

std::vector<Vec> base_v_grid(const ControlProblem& p, const ConditionOptions& opts) {
    const auto& g = opts.v_grid.empty() ? p.control_set.sample_grid() : opts.v_grid;
    for (const auto& v : g) {
        if (v.size() != p.control_dim) throw ConfigError("v grid entry has the wrong dimension");
        if (!p.control_set.contains(v, 1e-9)) throw ConfigError("v grid entry lies outside the control set");
    }
    return g;
}

// Base grid plus ubar(t_k) when ubar is the same on every stored path.
std::vector<Vec> cell_v_grid(const std::vector<Vec>& base, const KernelFrames& fr, std::size_t k) {
    std::vector<Vec> out = base;
    const Vec u0 = fr.ubar.vec(0, k);
    for (std::size_t p = 1; p < fr.stored_paths(); ++p)
        if (fr.ubar.vec(p, k) != u0) return out;
    for (const auto& v : out)
        if ((v - u0).cwiseAbs().maxCoeff() < 1e-14) return out;
    out.push_back(u0);
    return out;
}

ConditionReport not_applicable(const std::string& name, const SingularityReport* s) {
    ConditionReport r;
    r.condition = name;
    r.global_verdict = Verdict::NotApplicable;
    r.note = "reference control is not singular (|H_u| = " + std::to_string(s->sup_Hu) +
             ", |H_uu + sigma_u^T P2 sigma_u| = " + std::to_string(s->sup_Huu_plus) + ")";
    return r;
}

std::size_t node_of(const TimeGrid& g, double tau) { return g.nearest_node(tau); }

// Regression error of the adjoints carried into kernel quantities at node k; it is
// common to all paths, so path standard errors miss it. Zero on the analytic branch.
double adjoint_se(const KernelFrames& fr, std::size_t k) {
    if (fr.level_stderr == 0.0 && fr.slope_stderr == 0.0) return 0.0;
    double scale = 0.0;
    for (std::size_t p = 0; p < fr.stored_paths(); ++p)
        scale = std::max(scale, fr.b_u.at(p, k).norm() + fr.sigma_u.at(p, k).norm());
    return (fr.level_stderr + fr.slope_stderr) * (1.0 + scale) * (1.0 + scale);
}

}  // namespace

// ---------------------------------------------------------------- expansion

ExpansionReport cost_expansion_check(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& fr,
                                     const PerturbationSpec& pert, const std::vector<double>& eps_ladder,
                                     double k_sigma) {
    if (pert.mode != PerturbationSpec::Mode::Convex) throw ConfigError("cost expansion needs a convex perturbation");
    for (std::size_t i = 0; i < eps_ladder.size(); ++i) {
        if (!(eps_ladder[i] > 0.0) || (i > 0 && !(eps_ladder[i] < eps_ladder[i - 1])))
            throw ConfigError("eps ladder must be positive and strictly decreasing");
    }
    const auto& grid = ubar.grid();
    const std::size_t P = ubar.paths();
    const double dt = grid.dt();
    const int m = p.control_dim;
    const auto y = simulate_variational(p, ubar, pert, false);
    const DirectionField field(ubar, pert);

    // Per path: first-order and second-order parts of the prediction.
    std::vector<double> lin(P, 0.0), quad(P, 0.0);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        Vec ub(m), v(m);
        for (std::size_t path = begin; path < end; ++path) {
            const std::size_t i = fr.index(path);
            for (std::size_t k = 0; k < grid.steps; ++k) {
                field.at(path, k, ub, v);
                lin[path] += fr.H_u.vec(i, k).dot(v) * dt;
                const double q = 0.5 * v.dot(fr.H_uu.at(i, k) * v) + 0.5 * v.dot(fr.sigma_u_P2_sigma_u.at(i, k) * v) +
                                 (fr.S.at(i, k) * y.y1.vec(path, k)).dot(v);
                quad[path] += q * dt;
            }
        }
    });

    const auto base = evaluate_cost(p, ubar);
    ExpansionReport rep;
    std::vector<double> dj(P), res(P);
    for (double eps : eps_ladder) {
        const auto bundle = simulate_state(p, perturbed_control(ubar, pert, eps), ubar.brownian);
        const auto cost = evaluate_cost(p, bundle);
        ExpansionRow row;
        row.eps = eps;
        std::vector<double> pred(P);
        for (std::size_t path = 0; path < P; ++path) {
            dj[path] = cost.per_path[path] - base.per_path[path];
            pred[path] = -(eps * lin[path] + eps * eps * quad[path]);
            res[path] = dj[path] - pred[path];
        }
        const auto sd = sample_stats(dj), sp = sample_stats(pred), sr = sample_stats(res);
        row.delta_J = sd.mean;
        row.delta_J_se = sd.std_error;
        row.prediction = sp.mean;
        row.residual = sr.mean;
        row.residual_se = sr.std_error;
        rep.rows.push_back(row);
    }
    rep.converging = true;
    for (std::size_t i = 1; i < rep.rows.size(); ++i) {
        const auto& a = rep.rows[i - 1];
        const auto& b = rep.rows[i];
        const double ra = std::abs(a.residual) / (a.eps * a.eps), rb = std::abs(b.residual) / (b.eps * b.eps);
        const double sa = a.residual_se / (a.eps * a.eps), sb = b.residual_se / (b.eps * b.eps);
        const bool decreasing = rb <= ra + k_sigma * (sa + sb);
        const bool at_floor = std::abs(b.residual) <= k_sigma * b.residual_se + 1e-14;
        if (!decreasing && !at_floor) rep.converging = false;
    }
    return rep;
}

// ------------------------------------------------------------ integral form

ConditionReport integral_type_test(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& fr,
                                   const PerturbationSpec& pert, const SingularityReport* singular,
                                   const ConditionOptions& opts) {
    const std::string name = "integral";
    if (singular && !singular->singular) return not_applicable(name, singular);
    if (pert.mode != PerturbationSpec::Mode::Convex) throw ConfigError("integral-type test needs a convex direction");
    const auto& grid = ubar.grid();
    const std::size_t P = ubar.paths();
    const int m = p.control_dim;
    const auto y = simulate_variational(p, ubar, pert, false);
    const DirectionField field(ubar, pert);
    std::vector<double> val(P, 0.0);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        Vec ub(m), v(m);
        for (std::size_t path = begin; path < end; ++path) {
            const std::size_t i = fr.index(path);
            double acc = 0.0;
            for (std::size_t k = 0; k < grid.steps; ++k) {
                field.at(path, k, ub, v);
                acc += (fr.S.at(i, k) * y.y1.vec(path, k)).dot(v);
            }
            val[path] = acc * grid.dt();
        }
    });
    const auto st = sample_stats(val);
    ConditionReport r;
    r.condition = name;
    ConditionCell c;
    c.tau = 0.0;
    if (pert.target.kind() == AdmissibleControl::Kind::Constant) c.v = pert.target.constant_value();
    c.value = st.mean;
    c.std_error = st.std_error;
    c.verdict = classify(st.mean, st.std_error, opts.k_sigma, opts.tolerance);
    if (c.v.size()) r.v_grid.push_back(c.v);
    r.tau_grid.push_back(0.0);
    r.cells.push_back(c);
    r.global_verdict = aggregate(r.cells);
    return r;
}

// ------------------------------------------------------------------ d-plus

namespace {

struct Rung {
    std::size_t k0 = 0;
    std::size_t L = 0;
    double theta = 0.0;
};

std::vector<Rung> dplus_rungs(const TimeGrid& grid, double tau, const std::vector<double>& ladder, std::size_t last_t,
                              std::size_t tail) {
    std::vector<Rung> out;
    const std::size_t k0 = grid.nearest_node(tau);
    for (double theta : ladder) {
        const auto L = static_cast<std::size_t>(std::llround(theta / grid.dt()));
        if (L < 2) continue;
        if (k0 + L > last_t) throw DomainError("necessary_conditions", "d-plus window extends past the horizon");
        out.push_back({k0, L, static_cast<double>(L) * grid.dt()});
    }
    if (out.size() < tail)
        throw ConfigError("theta ladder has " + std::to_string(out.size()) + " rungs of at least two steps; " +
                          std::to_string(tail) + " are required");
    return out;
}

void finish(DplusReport& r, std::size_t tail) {
    const std::size_t start = r.trace.size() - tail;
    std::size_t best = start;
    for (std::size_t i = start; i < r.trace.size(); ++i)
        if (r.trace[i].estimate > r.trace[best].estimate) best = i;
    r.value = 2.0 * r.trace[best].estimate;
    r.std_error = 2.0 * r.trace[best].std_error;
}

}  // namespace

DplusReport dplus_estimate(const TimeGrid& grid, std::size_t paths, double tau, const std::vector<double>& ladder,
                           const DplusIntegrand& g, std::size_t tail) {
    DplusReport r;
    const double dt = grid.dt();
    for (const auto& rung : dplus_rungs(grid, tau, ladder, grid.steps, tail)) {
        std::vector<double> v(paths);
        parallel_for(paths, [&](std::size_t begin, std::size_t end) {
            for (std::size_t path = begin; path < end; ++path) {
                double acc = 0.0;
                for (std::size_t j = rung.k0; j < rung.k0 + rung.L; ++j)
                    for (std::size_t k = j; k < rung.k0 + rung.L; ++k)
                        acc += (k == j ? 0.5 : 1.0) * g(path, j, k + 1);
                v[path] = acc * dt * dt / (rung.theta * rung.theta);
            }
        });
        const auto st = sample_stats(v);
        r.trace.push_back({rung.theta, st.mean, st.std_error});
    }
    finish(r, tail);
    return r;
}

DplusReport dplus_estimate(const KernelFrames& fr, const FundamentalMatrixPath* fmp, const MartingaleKernel& kernel,
                           double tau, const Vec& v, const std::vector<double>& ladder, std::size_t tail) {
    const TimeGrid& grid = fr.grid;
    const int n = fr.n, m = fr.m;
    // Frames (and the kernel targets) stop at node N-1.
    const auto rungs = dplus_rungs(grid, tau, ladder, grid.steps - 1, tail);
    DplusReport r;
    if (kernel.is_zero()) {
        for (const auto& rung : rungs) r.trace.push_back({rung.theta, 0.0, 0.0});
        finish(r, tail);
        return r;
    }
    if (!fmp) throw ConfigError("d-plus estimate with a nonzero kernel needs the fundamental matrix");
    if (kernel.dim() != n * (m + 1)) throw ConfigError("kernel does not match S^T (v - ubar)");
    if (fr.shared) throw ConfigError("nonzero kernel with path-invariant frames");
    const std::size_t P = fr.paths;
    const double dt = grid.dt();
    for (const auto& rung : rungs) {
        std::vector<double> vals(P);
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            std::vector<double> buf(static_cast<std::size_t>(kernel.dim()));
            std::vector<Vec> gj(rung.L, Vec(n));
            Vec phi(n);
            for (std::size_t path = begin; path < end; ++path) {
                const auto phi_tau = fmp->phi.at(path, rung.k0);
                for (std::size_t a = 0; a < rung.L; ++a) {
                    const std::size_t j = rung.k0 + a;
                    const Vec d = v - fr.ubar.vec(path, j);
                    gj[a] = phi_tau * (fmp->psi.at(path, j) * (fr.sigma_u.at(path, j) * d));
                }
                double acc = 0.0;
                for (std::size_t a = 0; a < rung.L; ++a) {
                    const std::size_t j = rung.k0 + a;
                    for (std::size_t k = j; k < rung.k0 + rung.L; ++k) {
                        kernel.evaluate(path, j, k + 1, buf.data());
                        for (int r0 = 0; r0 < n; ++r0) {
                            double s = -buf[static_cast<std::size_t>(m * n + r0)];
                            for (int i = 0; i < m; ++i) s += v(i) * buf[static_cast<std::size_t>(i * n + r0)];
                            phi(r0) = s;
                        }
                        acc += (k == j ? 0.5 : 1.0) * phi.dot(gj[a]);
                    }
                }
                vals[path] = acc * dt * dt / (rung.theta * rung.theta);
            }
        });
        const auto st = sample_stats(vals);
        r.trace.push_back({rung.theta, st.mean, st.std_error});
    }
    finish(r, tail);
    return r;
}

MartingaleKernel direction_kernel(const KernelFrames& fr, const PathBundle& ubar, int degree) {
    const int n = fr.n, m = fr.m;
    const int dim = n * (m + 1);
    if (fr.shared) return MartingaleKernel::zero(fr.grid, dim, "S^T(v-ubar)");
    const std::size_t P = fr.paths;
    PathTensor phi(P, fr.steps(), static_cast<std::size_t>(dim));
    for (std::size_t path = 0; path < P; ++path)
        for (std::size_t k = 0; k < fr.steps(); ++k) {
            const auto S = fr.S.at(path, k);
            auto out = phi.vec(path, k);
            for (int i = 0; i < m; ++i)
                for (int r = 0; r < n; ++r) out(i * n + r) = S(i, r);
            out.tail(n) = S.transpose() * fr.ubar.vec(path, k);
        }
    FeatureSource fs;
    fs.state = ubar.state;
    fs.brownian = ubar.brownian;
    fs.use_state = true;
    fs.use_brownian = true;
    return martingale_representation(phi, ubar.brownian, fs, degree, "S^T(v-ubar)");
}

// --------------------------------------------------------------- pointwise

ConditionReport pointwise_martingale_test(const ControlProblem& p, const KernelFrames& fr,
                                          const FundamentalMatrixPath* fmp, const MartingaleKernel& kernel,
                                          const SingularityReport* singular, const ConditionOptions& opts) {
    const std::string name = "martingale";
    if (singular && !singular->singular) return not_applicable(name, singular);
    ConditionReport r;
    r.condition = name;
    r.tau_grid = tau_grid(fr.grid, opts);
    r.v_grid = base_v_grid(p, opts);
    const auto ladder = effective_ladder(fr.grid, opts);
    const std::size_t P = fr.stored_paths();
    for (double tau : r.tau_grid) {
        const std::size_t k = node_of(fr.grid, tau);
        for (const auto& v : cell_v_grid(r.v_grid, fr, k)) {
            std::vector<double> first(P);
            for (std::size_t path = 0; path < P; ++path) {
                const Vec d = v - fr.ubar.vec(path, k);
                first[path] = (fr.S.at(path, k) * (fr.b_u.at(path, k) * d)).dot(d);
            }
            const auto st = sample_stats(first);
            const auto dp = dplus_estimate(fr, fmp, kernel, tau, v, ladder, opts.dplus_tail);
            const double d2 = (v - fr.ubar.vec(0, k)).squaredNorm();
            ConditionCell c;
            c.tau = tau;
            c.v = v;
            c.value = st.mean + dp.value;
            c.std_error = std::hypot(std::hypot(st.std_error, dp.std_error), adjoint_se(fr, k) * d2);
            c.verdict = classify(c.value, c.std_error, opts.k_sigma, opts.tolerance);
            r.cells.push_back(c);
        }
    }
    r.global_verdict = aggregate(r.cells);
    return r;
}

ConditionReport pointwise_malliavin_test(const ControlProblem& p, const KernelFrames& fr,
                                         const BrownianSample& brownian, const MalliavinPlugin* grad_S,
                                         const MalliavinPlugin* grad_ubar, const SingularityReport* singular,
                                         const ConditionOptions& opts) {
    const std::string name = "malliavin";
    if (!grad_S || !grad_ubar || !grad_S->diagonal || !grad_ubar->diagonal)
        throw ConfigError(
            "the Malliavin-form test needs diagonal-derivative plug-ins for S and ubar (assumption C3)");
    if (singular && !singular->singular) return not_applicable(name, singular);
    if (brownian.paths != fr.paths) throw ConfigError("Brownian sample does not match the frames");
    ConditionReport r;
    r.condition = name;
    r.tau_grid = tau_grid(fr.grid, opts);
    r.v_grid = base_v_grid(p, opts);
    const std::size_t P = brownian.paths;
    const int n = fr.n, m = fr.m;
    for (double tau : r.tau_grid) {
        const std::size_t k = node_of(fr.grid, tau);
        for (const auto& v : cell_v_grid(r.v_grid, fr, k)) {
            std::vector<double> vals(P);
            parallel_for(P, [&](std::size_t begin, std::size_t end) {
                Mat gS, gU;
                for (std::size_t path = begin; path < end; ++path) {
                    const std::size_t i = fr.index(path);
                    grad_S->diagonal(brownian, path, k, gS);
                    grad_ubar->diagonal(brownian, path, k, gU);
                    if (gS.rows() != m || gS.cols() != n || gU.size() != m)
                        throw StructuralError("diagonal plug-in has the wrong shape");
                    const Vec d = v - fr.ubar.vec(i, k);
                    const Vec sd = fr.sigma_u.at(i, k) * d;
                    vals[path] = (fr.S.at(i, k) * (fr.b_u.at(i, k) * d)).dot(d) + (gS * sd).dot(d) -
                                 (fr.S.at(i, k) * sd).dot(gU.reshaped());
                }
            });
            const auto st = sample_stats(vals);
            const double d2 = (v - fr.ubar.vec(0, k)).squaredNorm();
            ConditionCell c;
            c.tau = tau;
            c.v = v;
            c.value = st.mean;
            c.std_error = std::hypot(st.std_error, adjoint_se(fr, k) * d2);
            c.max = *std::max_element(vals.begin(), vals.end());
            if (c.max <= opts.tolerance)
                c.verdict = Verdict::Satisfied;
            else if (c.value > opts.k_sigma * c.std_error + opts.tolerance)
                c.verdict = Verdict::Violated;
            else
                c.verdict = Verdict::Inconclusive;
            r.cells.push_back(c);
        }
    }
    r.global_verdict = aggregate(r.cells);
    return r;
}

// ----------------------------------------------------------------- others

SampleStats bonnans_quadratic_form(const ControlProblem& p, const PathBundle& ubar, const KernelFrames& fr,
                                   const PerturbationSpec& w) {
    const auto& grid = ubar.grid();
    const std::size_t P = ubar.paths();
    const int m = p.control_dim;
    const auto y = simulate_variational(p, ubar, w, false);
    const DirectionField field(ubar, w);
    std::vector<double> val(P, 0.0);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        Vec ub(m), v(m);
        ScalarJet h;
        for (std::size_t path = begin; path < end; ++path) {
            const std::size_t i = fr.index(path);
            double acc = 0.0;
            for (std::size_t k = 0; k < grid.steps; ++k) {
                field.at(path, k, ub, v);
                const auto y1 = y.y1.vec(path, k);
                acc += y1.dot(fr.H_xx.at(i, k) * y1) + 2.0 * (fr.H_xu.at(i, k) * y1).dot(v) +
                       v.dot(fr.H_uu.at(i, k) * v);
            }
            const Vec xT = ubar.x().vec(path, grid.steps);
            eval_terminal_jet(p, xT, ubar.noise(path, grid.steps), JetOrder::Second, h);
            const auto yT = y.y1.vec(path, grid.steps);
            val[path] = acc * grid.dt() + yT.dot(h.dxx * yT);
        }
    });
    return sample_stats(val);
}

ConditionReport needle_first_order_test(const ControlProblem& p, const KernelFrames& fr,
                                        const ConditionOptions& opts) {
    ConditionReport r;
    r.condition = "first_order";
    r.tau_grid = tau_grid(fr.grid, opts);
    r.v_grid = base_v_grid(p, opts);
    const std::size_t P = fr.stored_paths();
    for (double tau : r.tau_grid) {
        const std::size_t k = node_of(fr.grid, tau);
        for (const auto& v : cell_v_grid(r.v_grid, fr, k)) {
            std::vector<double> vals(P);
            for (std::size_t path = 0; path < P; ++path)
                vals[path] = fr.H_u.vec(path, k).dot(v - fr.ubar.vec(path, k));
            const auto st = sample_stats(vals);
            ConditionCell c;
            c.tau = tau;
            c.v = v;
            c.value = st.mean;
            c.std_error = std::hypot(st.std_error, adjoint_se(fr, k) * (v - fr.ubar.vec(0, k)).norm());
            c.verdict = classify(c.value, c.std_error, opts.k_sigma, opts.tolerance);
            r.cells.push_back(c);
        }
    }
    r.global_verdict = aggregate(r.cells);
    return r;
}

}  // namespace scl
