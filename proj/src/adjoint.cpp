#include "scl/adjoint.hpp"

#include "scl/errors.hpp"
#include "scl/parallel.hpp"
#include "scl/regression.hpp"
#include "scl/stats.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace scl {

const char* to_string(AdjointMethod m) {
    switch (m) {
        case AdjointMethod::Auto: return "auto";
        case AdjointMethod::Analytic: return "analytic";
        case AdjointMethod::Regression: return "regression";
    }
    return "auto";
}

AdjointMethod adjoint_method_from_string(const std::string& s) {
    if (s == "auto") return AdjointMethod::Auto;
    if (s == "analytic") return AdjointMethod::Analytic;
    if (s == "regression") return AdjointMethod::Regression;
    throw ConfigError("unknown adjoint method '" + s + "' (expected auto, analytic or regression)");
}

bool analytic_branch_applies(const ControlProblem& p, const PathBundle& ubar) {
    return p.lq.has_value() && p.coefficient_class == CoefficientClass::Deterministic &&
           ubar.control.deterministic();
}

void hamiltonian_hessians(const VectorJet& b, const VectorJet& sigma, const ScalarJet& f, const Vec& p1,
                          const Vec& q1, Mat& hxx, Mat& hxu, Mat& huu) {
    hxx = -f.dxx;
    hxu = -f.dxu;
    huu = -f.duu;
    for (Eigen::Index i = 0; i < p1.size(); ++i) {
        const auto ii = static_cast<std::size_t>(i);
        hxx += p1(i) * b.dxx[ii] + q1(i) * sigma.dxx[ii];
        hxu += p1(i) * b.dxu[ii] + q1(i) * sigma.dxu[ii];
        huu += p1(i) * b.duu[ii] + q1(i) * sigma.duu[ii];
    }
}

// ------------------------------------------------------------- analytic branch

namespace {

struct LqCoefficients {
    Mat A, B, C, D, R, M;
};

LqCoefficients lq_at(const LqData& d, double t) { return {d.A(t), d.B(t), d.C(t), d.D(t), d.R(t), d.M(t)}; }

Mat riccati_rhs(const LqCoefficients& c, const Mat& P) {
    return -c.A.transpose() * P - P * c.A - c.C.transpose() * P * c.C + c.R;
}

Vec kappa_rhs(const LqCoefficients& c, const Mat& P, const Vec& kappa, const Vec& u) {
    return -c.A.transpose() * kappa - P * c.B * u - c.C.transpose() * P * c.D * u + c.M.transpose() * u;
}

// Joint backward RK4 for P2 and the affine part kappa of P1 = P2 x + kappa.
void lq_backward(const ControlProblem& p, const TimeGrid& grid, const AdmissibleControl* ubar, std::vector<Mat>& P2,
                 std::vector<Vec>& kappa, double& defect) {
    const LqData& d = *p.lq;
    const int n = p.state_dim;
    const int m = p.control_dim;
    P2.assign(grid.nodes(), Mat());
    kappa.assign(grid.nodes(), Vec::Zero(n));
    P2[grid.steps] = -d.G;
    defect = 0.0;
    const double h = -grid.dt();
    auto control = [&](double t) { return ubar ? ubar->at_time(t) : Vec(Vec::Zero(m)); };
    for (std::size_t k = grid.steps; k-- > 0;) {
        const double t1 = grid.t(k + 1);
        const double tm = t1 + 0.5 * h;
        const double t0 = grid.t(k);
        const auto c1 = lq_at(d, t1), cm = lq_at(d, tm), c0 = lq_at(d, t0);
        const Vec u1 = control(t1), um = control(tm), u0 = control(t0);
        const Mat& P = P2[k + 1];
        const Vec& z = kappa[k + 1];
        const Mat k1 = riccati_rhs(c1, P);
        const Vec l1 = kappa_rhs(c1, P, z, u1);
        const Mat P_a = P + 0.5 * h * k1;
        const Vec z_a = z + 0.5 * h * l1;
        const Mat k2 = riccati_rhs(cm, P_a);
        const Vec l2 = kappa_rhs(cm, P_a, z_a, um);
        const Mat P_b = P + 0.5 * h * k2;
        const Vec z_b = z + 0.5 * h * l2;
        const Mat k3 = riccati_rhs(cm, P_b);
        const Vec l3 = kappa_rhs(cm, P_b, z_b, um);
        const Mat P_c = P + h * k3;
        const Vec z_c = z + h * l3;
        const Mat k4 = riccati_rhs(c0, P_c);
        const Vec l4 = kappa_rhs(c0, P_c, z_c, u0);
        Mat next = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        defect = std::max(defect, (next - next.transpose()).cwiseAbs().maxCoeff());
        P2[k] = symmetric_part(next);
        kappa[k] = z + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
}

void require_lq(const ControlProblem& p) {
    if (!p.lq) throw ConfigError("problem '" + p.name + "' carries no linear-quadratic data");
}

}  // namespace

std::vector<Mat> solve_lq_riccati(const ControlProblem& lq, const TimeGrid& grid) {
    require_lq(lq);
    std::vector<Mat> P2;
    std::vector<Vec> kappa;
    double defect = 0.0;
    lq_backward(lq, grid, nullptr, P2, kappa, defect);
    return P2;
}

namespace {

AdjointMethod resolve(const ControlProblem& p, const PathBundle& ubar, const AdjointOptions& opts) {
    const bool ok = analytic_branch_applies(p, ubar);
    if (opts.method == AdjointMethod::Analytic && !ok)
        throw ConfigError("analytic adjoints need LQ data, deterministic coefficients and a deterministic control");
    if (opts.method == AdjointMethod::Auto) return ok ? AdjointMethod::Analytic : AdjointMethod::Regression;
    return opts.method;
}

FeatureSource features_for(const ControlProblem& p, const PathBundle& ubar) {
    FeatureSource fs;
    fs.state = ubar.state;
    fs.brownian = ubar.brownian;
    fs.use_state = true;
    fs.use_brownian = p.coefficient_class == CoefficientClass::Random || !ubar.control.deterministic();
    return fs;
}

// Residual RMS of a joint fit, turned into standard errors of the level and of slope / sqrt(dt).
void track_stderr(const Mat& B, const Eigen::Ref<const Vec>& xi, const Mat& y, const JointFit& fit, double dt,
                  double& level, double& slope) {
    const Mat slope_part = ((B * fit.slope).array().colwise() * xi.array()).matrix();
    const Mat resid = y - B * fit.level - slope_part;
    const double P = static_cast<double>(y.rows());
    for (Eigen::Index c = 0; c < resid.cols(); ++c) {
        const double rms = std::sqrt(resid.col(c).squaredNorm() / P);
        level = std::max(level, rms / std::sqrt(P));
        slope = std::max(slope, rms / std::sqrt(P * dt));
    }
}

struct AnalyticAdjoint {
    std::vector<Mat> P2;
    std::vector<Vec> kappa;
    double defect = 0.0;
};

AnalyticAdjoint analytic_solution(const ControlProblem& p, const PathBundle& ubar) {
    AnalyticAdjoint a;
    lq_backward(p, ubar.grid(), &ubar.control, a.P2, a.kappa, a.defect);
    return a;
}

}  // namespace

FirstAdjoint solve_first_adjoint(const ControlProblem& p, const PathBundle& ubar, const AdjointOptions& opts) {
    const auto& grid = ubar.grid();
    const int n = p.state_dim;
    const auto nn = static_cast<std::size_t>(n);
    const std::size_t P = ubar.paths();
    FirstAdjoint out;
    out.method = resolve(p, ubar, opts);
    out.p1 = PathTensor(P, grid.nodes(), nn);
    out.q1 = PathTensor(P, grid.steps, nn);

    if (out.method == AdjointMethod::Analytic) {
        const auto a = analytic_solution(p, ubar);
        const LqData& d = *p.lq;
        std::vector<Mat> C(grid.steps), D(grid.steps);
        for (std::size_t k = 0; k < grid.steps; ++k) {
            C[k] = d.C(grid.t(k));
            D[k] = d.D(grid.t(k));
        }
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            Vec u(p.control_dim);
            for (std::size_t path = begin; path < end; ++path) {
                for (std::size_t k = 0; k <= grid.steps; ++k) {
                    const auto x = ubar.x().vec(path, k);
                    if (k == grid.steps) {
                        // Terminal value -h_x(x) = -G x, exactly.
                        out.p1.vec(path, k) = -(d.G * x);
                        continue;
                    }
                    out.p1.vec(path, k) = a.P2[k] * x + a.kappa[k];
                    ubar.control_at(path, k, u);
                    out.q1.vec(path, k) = a.P2[k] * (C[k] * x + D[k] * u);
                }
            }
        });
        return out;
    }

    const FeatureSource fs = features_for(p, ubar);
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        ScalarJet h;
        for (std::size_t path = begin; path < end; ++path) {
            const Vec x = ubar.x().vec(path, grid.steps);
            p.terminal_cost(x, ubar.noise(path, grid.steps), JetOrder::First, h);
            out.p1.vec(path, grid.steps) = -h.dx;
        }
    });
    Vec xi(static_cast<Eigen::Index>(P));
    Mat y(static_cast<Eigen::Index>(P), n);
    for (std::size_t k = grid.steps; k-- > 0;) {
        const NodeDesign design(fs, P, k, opts.degree);
        const Mat B = design.matrix(fs, P, k);
        for (std::size_t path = 0; path < P; ++path) {
            xi(static_cast<Eigen::Index>(path)) = ubar.brownian->dW(path, k) / sq;
            y.row(static_cast<Eigen::Index>(path)) = out.p1.vec(path, k + 1).transpose();
        }
        const JointFit fit = fit_joint(B, xi, y);
        track_stderr(B, xi, y, fit, dt, out.level_stderr, out.slope_stderr);
        const Mat level = B * fit.level;
        const Mat slope = (B * fit.slope) / sq;
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            TrajectoryEvaluator ev(p, ubar, JetOrder::First, true);
            Vec e(n), z(n);
            for (std::size_t path = begin; path < end; ++path) {
                ev.load(path, k);
                e = level.row(static_cast<Eigen::Index>(path)).transpose();
                z = slope.row(static_cast<Eigen::Index>(path)).transpose();
                out.q1.vec(path, k) = z;
                out.p1.vec(path, k) = e + dt * (ev.b.dx.transpose() * e + ev.sigma.dx.transpose() * z - ev.f.dx);
            }
        });
    }
    return out;
}

namespace {

std::vector<std::pair<int, int>> upper_entries(int n) {
    std::vector<std::pair<int, int>> e;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i) e.emplace_back(i, j);
    return e;
}

}  // namespace

SecondAdjoint solve_second_adjoint(const ControlProblem& p, const PathBundle& ubar, const FirstAdjoint& first,
                                   const AdjointOptions& opts) {
    const auto& grid = ubar.grid();
    const int n = p.state_dim;
    const auto nn = static_cast<std::size_t>(n);
    const std::size_t P = ubar.paths();
    SecondAdjoint out;
    out.method = resolve(p, ubar, opts);
    out.p2 = PathTensor(P, grid.nodes(), nn, nn);
    out.q2 = PathTensor(P, grid.steps, nn, nn);

    if (out.method == AdjointMethod::Analytic) {
        const auto a = analytic_solution(p, ubar);
        out.symmetry_defect = a.defect;
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            for (std::size_t path = begin; path < end; ++path)
                for (std::size_t k = 0; k <= grid.steps; ++k) out.p2.at(path, k) = a.P2[k];
        });
        return out;
    }

    const FeatureSource fs = features_for(p, ubar);
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        ScalarJet h;
        for (std::size_t path = begin; path < end; ++path) {
            const Vec x = ubar.x().vec(path, grid.steps);
            p.terminal_cost(x, ubar.noise(path, grid.steps), JetOrder::Second, h);
            out.p2.at(path, grid.steps) = -symmetric_part(h.dxx);
        }
    });
    const auto entries = upper_entries(n);
    const auto r = static_cast<Eigen::Index>(entries.size());
    Vec xi(static_cast<Eigen::Index>(P));
    Mat y(static_cast<Eigen::Index>(P), r);
    std::vector<double> defects(P, 0.0);
    for (std::size_t k = grid.steps; k-- > 0;) {
        const NodeDesign design(fs, P, k, opts.degree);
        const Mat B = design.matrix(fs, P, k);
        for (std::size_t path = 0; path < P; ++path) {
            const auto row = static_cast<Eigen::Index>(path);
            xi(row) = ubar.brownian->dW(path, k) / sq;
            const auto next = out.p2.at(path, k + 1);
            for (Eigen::Index c = 0; c < r; ++c) {
                const auto [i, j] = entries[static_cast<std::size_t>(c)];
                y(row, c) = 0.5 * (next(i, j) + next(j, i));
            }
        }
        const JointFit fit = fit_joint(B, xi, y);
        track_stderr(B, xi, y, fit, dt, out.level_stderr, out.slope_stderr);
        const Mat level = B * fit.level;
        const Mat slope = (B * fit.slope) / sq;
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            TrajectoryEvaluator ev(p, ubar, JetOrder::Second, true);
            Mat e(n, n), q(n, n), hxx, hxu, huu, next(n, n);
            Vec p1(n), q1(n);
            for (std::size_t path = begin; path < end; ++path) {
                const auto row = static_cast<Eigen::Index>(path);
                for (Eigen::Index c = 0; c < r; ++c) {
                    const auto [i, j] = entries[static_cast<std::size_t>(c)];
                    e(i, j) = e(j, i) = level(row, c);
                    q(i, j) = q(j, i) = slope(row, c);
                }
                ev.load(path, k);
                p1 = first.p1.vec(path, k);
                q1 = first.q1.vec(path, k);
                hamiltonian_hessians(ev.b, ev.sigma, ev.f, p1, q1, hxx, hxu, huu);
                const Mat& bx = ev.b.dx;
                const Mat& sx = ev.sigma.dx;
                next = e + dt * (bx.transpose() * e + e * bx + sx.transpose() * e * sx + sx.transpose() * q +
                                 q * sx + hxx);
                defects[path] = std::max(defects[path], (next - next.transpose()).cwiseAbs().maxCoeff());
                out.p2.at(path, k) = symmetric_part(next);
                out.q2.at(path, k) = q;
            }
        });
    }
    for (double d : defects) out.symmetry_defect = std::max(out.symmetry_defect, d);
    return out;
}

AdjointSolution solve_adjoints(const ControlProblem& p, const PathBundle& ubar, const AdjointOptions& opts) {
    auto first = solve_first_adjoint(p, ubar, opts);
    auto second = solve_second_adjoint(p, ubar, first, opts);
    AdjointSolution out;
    out.method = first.method;
    out.degree = first.method == AdjointMethod::Regression ? opts.degree : 0;
    out.symmetry_defect = second.symmetry_defect;
    out.level_stderr = std::max(first.level_stderr, second.level_stderr);
    out.slope_stderr = std::max(first.slope_stderr, second.slope_stderr);
    out.p1 = std::move(first.p1);
    out.q1 = std::move(first.q1);
    out.p2 = std::move(second.p2);
    out.q2 = std::move(second.q2);
    return out;
}

void write_adjoint_csv(const std::string& file, const AdjointSolution& adj, const TimeGrid& grid) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    const std::size_t n = adj.p1.rows();
    const std::size_t P = adj.p1.paths();
    os << "t";
    for (std::size_t i = 0; i < n; ++i) os << ",p1_" << i << "_mean,p1_" << i << "_std";
    for (std::size_t i = 0; i < n; ++i) os << ",q1_" << i << "_mean,q1_" << i << "_std";
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) os << ",p2_" << i << j << "_mean,p2_" << i << j << "_std";
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) os << ",q2_" << i << j << "_mean,q2_" << i << j << "_std";
    os << "\n" << std::setprecision(17);
    std::vector<double> col(P);
    auto emit = [&](const PathTensor& t, std::size_t k, std::size_t r, std::size_t c) {
        if (k >= t.nodes()) {
            os << ",,";
            return;
        }
        for (std::size_t p = 0; p < P; ++p) col[p] = t(p, k, r, c);
        const auto s = sample_stats(col);
        os << "," << s.mean << "," << s.stddev;
    };
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        os << grid.t(k);
        for (std::size_t i = 0; i < n; ++i) emit(adj.p1, k, i, 0);
        for (std::size_t i = 0; i < n; ++i) emit(adj.q1, k, i, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) emit(adj.p2, k, i, j);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) emit(adj.q2, k, i, j);
        os << "\n";
    }
}

// -------------------------------------------------------------- duality check

std::array<DualityResidual, 3> adjoint_duality_check(const ControlProblem& p, const PathBundle& ubar,
                                                      const AdjointSolution& adj, const VariationalPaths& y,
                                                      const DualityOptions& opts) {
    if (y.y2.empty()) throw ConfigError("duality check needs second-order variational paths");
    const auto& grid = ubar.grid();
    const std::size_t P = ubar.paths();
    const int n = p.state_dim;
    const int m = p.control_dim;
    const double dt = grid.dt();
    const DirectionField field(ubar, y.perturbation);

    // Per path: terminal pairing, integral, integral of |integrand|.
    std::array<std::vector<double>, 3> lhs, integral, magnitude;
    for (std::size_t j = 0; j < 3; ++j) {
        lhs[j].assign(P, 0.0);
        integral[j].assign(P, 0.0);
        magnitude[j].assign(P, 0.0);
    }

    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        TrajectoryEvaluator ev(p, ubar, JetOrder::Second, true);
        ScalarJet h;
        Vec ub(m), v(m), qb(n), qs(n), p1(n), q1(n), y1(n), y2(n), bv(n), sv(n);
        Mat p2(n, n), q2(n, n), hxx, hxu, huu;
        for (std::size_t path = begin; path < end; ++path) {
            for (std::size_t k = 0; k < grid.steps; ++k) {
                ev.load(path, k);
                field.at(path, k, ub, v);
                p1 = adj.p1.vec(path, k);
                q1 = adj.q1.vec(path, k);
                p2 = adj.p2.at(path, k);
                q2 = adj.q2.at(path, k);
                y1 = y.y1.vec(path, k);
                y2 = y.y2.vec(path, k);
                bv = ev.b.du * v;
                sv = ev.sigma.du * v;
                for (int i = 0; i < n; ++i) {
                    const auto ii = static_cast<std::size_t>(i);
                    qb(i) = y1.dot(ev.b.dxx[ii] * y1) + 2.0 * v.dot(ev.b.dxu[ii] * y1) + v.dot(ev.b.duu[ii] * v);
                    qs(i) = y1.dot(ev.sigma.dxx[ii] * y1) + 2.0 * v.dot(ev.sigma.dxu[ii] * y1) +
                            v.dot(ev.sigma.duu[ii] * v);
                }
                hamiltonian_hessians(ev.b, ev.sigma, ev.f, p1, q1, hxx, hxu, huu);
                const double g1 = p1.dot(bv) + q1.dot(sv) + ev.f.dx.dot(y1);
                const double g2 = ev.f.dx.dot(y2) + p1.dot(qb) + q1.dot(qs);
                const double g3 = 2.0 * (p2 * y1).dot(bv) + 2.0 * (p2 * (ev.sigma.dx * y1)).dot(sv) +
                                  (p2 * sv).dot(sv) + 2.0 * (q2 * sv).dot(y1) - y1.dot(hxx * y1);
                const double g[3] = {g1, g2, g3};
                for (std::size_t j = 0; j < 3; ++j) {
                    integral[j][path] += g[j] * dt;
                    magnitude[j][path] += std::abs(g[j]) * dt;
                }
            }
            const Vec xT = ubar.x().vec(path, grid.steps);
            p.terminal_cost(xT, ubar.noise(path, grid.steps), JetOrder::Second, h);
            y1 = y.y1.vec(path, grid.steps);
            y2 = y.y2.vec(path, grid.steps);
            lhs[0][path] = h.dx.dot(y1);
            lhs[1][path] = h.dx.dot(y2);
            lhs[2][path] = y1.dot(h.dxx * y1);
        }
    });

    static const char* names[3] = {"h_x.y1", "h_x.y2", "h_xx.y1.y1"};
    std::array<DualityResidual, 3> out;
    std::vector<double> resid(P), abs_lhs(P);
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t path = 0; path < P; ++path) {
            resid[path] = lhs[j][path] + integral[j][path];
            abs_lhs[path] = std::abs(lhs[j][path]);
        }
        const auto rs = sample_stats(resid);
        auto& r = out[j];
        r.identity = names[j];
        r.lhs = sample_stats(lhs[j]).mean;
        r.integral = sample_stats(integral[j]).mean;
        r.residual = rs.mean;
        r.std_error = rs.std_error;
        r.bias_allowance =
            opts.bias_factor * dt * (sample_stats(abs_lhs).mean + sample_stats(magnitude[j]).mean);
        r.pass = std::abs(r.residual) <= opts.k_sigma * r.std_error + r.bias_allowance + 1e-12;
    }
    return out;
}

}  // namespace scl
