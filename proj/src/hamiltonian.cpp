#include "scl/hamiltonian.hpp"

#include "scl/errors.hpp"
#include "scl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scl {

namespace {

void require_in_set(const ControlProblem& p, const Vec& u) {
    if (u.size() != p.control_dim) throw StructuralError("control has the wrong dimension");
    if (!p.control_set.contains(u, 1e-12)) {
        std::ostringstream os;
        os << "control (" << u.transpose() << ") lies outside the control set";
        throw DomainError("hamiltonian_kernels", os.str());
    }
}

double hamiltonian_unchecked(const ControlProblem& p, double t, const Vec& x, const Vec& u, const Vec& y1,
                             const Vec& z1, const Noise& noise) {
    VectorJet b, s;
    ScalarJet f;
    eval_vector_jet(p, p.drift, "drift", t, x, u, noise, JetOrder::Value, b);
    eval_vector_jet(p, p.diffusion, "diffusion", t, x, u, noise, JetOrder::Value, s);
    eval_scalar_jet(p, t, x, u, noise, JetOrder::Value, f);
    return y1.dot(b.value) + z1.dot(s.value) - f.value;
}

double calligraphic_unchecked(const ControlProblem& p, double t, const Vec& x, const Vec& u,
                              const ReferenceContext& ref) {
    VectorJet s, s_ref;
    eval_vector_jet(p, p.diffusion, "diffusion", t, x, u, ref.noise, JetOrder::Value, s);
    eval_vector_jet(p, p.diffusion, "diffusion", t, ref.x, ref.u, ref.noise, JetOrder::Value, s_ref);
    const Vec d = s.value - s_ref.value;
    return hamiltonian_unchecked(p, t, x, u, ref.p1, ref.q1, ref.noise) -
           0.5 * s_ref.value.dot(ref.p2 * s_ref.value) + 0.5 * d.dot(ref.p2 * d);
}

}  // namespace

double evaluate_hamiltonian(const ControlProblem& p, double t, const Vec& x, const Vec& u, const Vec& y1,
                            const Vec& z1, const Noise& noise) {
    require_in_set(p, u);
    return hamiltonian_unchecked(p, t, x, u, y1, z1, noise);
}

double evaluate_calligraphic_H(const ControlProblem& p, double t, const Vec& x, const Vec& u,
                               const ReferenceContext& ref) {
    require_in_set(p, u);
    return calligraphic_unchecked(p, t, x, u, ref);
}

void calligraphic_H_derivatives(const ControlProblem& p, double t, const ReferenceContext& ref, double step,
                                Vec& grad, Mat& hess) {
    const int m = p.control_dim;
    grad.resize(m);
    hess.resize(m, m);
    auto H = [&](const Vec& u) { return calligraphic_unchecked(p, t, ref.x, u, ref); };
    const double h0 = H(ref.u);
    for (int i = 0; i < m; ++i) {
        Vec up = ref.u, dn = ref.u;
        up(i) += step;
        dn(i) -= step;
        const double fp = H(up), fm = H(dn);
        grad(i) = (fp - fm) / (2.0 * step);
        hess(i, i) = (fp - 2.0 * h0 + fm) / (step * step);
        for (int j = 0; j < i; ++j) {
            Vec pp = ref.u, pm = ref.u, mp = ref.u, mm = ref.u;
            pp(i) += step, pp(j) += step;
            pm(i) += step, pm(j) -= step;
            mp(i) -= step, mp(j) += step;
            mm(i) -= step, mm(j) -= step;
            hess(i, j) = hess(j, i) = (H(pp) - H(pm) - H(mp) + H(mm)) / (4.0 * step * step);
        }
    }
}

KernelFrames build_kernel_frames(const ControlProblem& p, const PathBundle& ubar, const AdjointSolution& adj) {
    KernelFrames fr;
    fr.grid = ubar.grid();
    fr.paths = ubar.paths();
    fr.shared = ubar.path_invariant && adj.method == AdjointMethod::Analytic;
    fr.n = p.state_dim;
    fr.m = p.control_dim;
    fr.method = adj.method;
    fr.level_stderr = adj.level_stderr;
    fr.slope_stderr = adj.slope_stderr;
    const auto n = static_cast<std::size_t>(fr.n);
    const auto m = static_cast<std::size_t>(fr.m);
    const std::size_t P = fr.stored_paths();
    const std::size_t N = fr.grid.steps;
    fr.H_u = PathTensor(P, N, m);
    fr.H_uu = PathTensor(P, N, m, m);
    fr.H_xx = PathTensor(P, N, n, n);
    fr.H_xu = PathTensor(P, N, m, n);
    fr.S = PathTensor(P, N, m, n);
    fr.sigma_u_P2_sigma_u = PathTensor(P, N, m, m);
    fr.b_u = PathTensor(P, N, n, m);
    fr.sigma_u = PathTensor(P, N, n, m);
    fr.ubar = PathTensor(P, N, m);

    parallel_for(P, [&](std::size_t begin, std::size_t end) {
        TrajectoryEvaluator ev(p, ubar, JetOrder::Second, true);
        Mat hxx, hxu, huu;
        Vec p1, q1;
        Mat p2, q2;
        for (std::size_t path = begin; path < end; ++path) {
            for (std::size_t k = 0; k < N; ++k) {
                ev.load(path, k);
                p1 = adj.p1.vec(path, k);
                q1 = adj.q1.vec(path, k);
                p2 = adj.p2.at(path, k);
                q2 = adj.q2.at(path, k);
                hamiltonian_hessians(ev.b, ev.sigma, ev.f, p1, q1, hxx, hxu, huu);
                const Mat& bu = ev.b.du;
                const Mat& su = ev.sigma.du;
                fr.H_u.vec(path, k) = bu.transpose() * p1 + su.transpose() * q1 - ev.f.du;
                fr.H_uu.at(path, k) = symmetric_part(huu);
                fr.H_xx.at(path, k) = symmetric_part(hxx);
                fr.H_xu.at(path, k) = hxu;
                fr.S.at(path, k) = hxu + bu.transpose() * p2 + su.transpose() * q2 + su.transpose() * p2 * ev.sigma.dx;
                fr.sigma_u_P2_sigma_u.at(path, k) = symmetric_part(su.transpose() * p2 * su);
                fr.b_u.at(path, k) = bu;
                fr.sigma_u.at(path, k) = su;
                fr.ubar.vec(path, k) = ev.u;
            }
        }
    });
    return fr;
}

SingularityReport classical_singularity_check(const KernelFrames& fr, const SingularityOptions& opts) {
    SingularityReport r;
    r.method = fr.method;
    const std::size_t P = fr.stored_paths();
    const std::size_t N = fr.steps();
    auto norms = [&](std::size_t path, std::size_t k, double& hu, double& huu) {
        hu = fr.H_u.vec(path, k).norm();
        huu = (fr.H_uu.at(path, k) + fr.sigma_u_P2_sigma_u.at(path, k)).norm();
    };
    if (fr.method == AdjointMethod::Analytic) {
        r.quantile = 1.0;
        r.tolerance = opts.analytic_tolerance;
        for (std::size_t path = 0; path < P; ++path)
            for (std::size_t k = 0; k < N; ++k) {
                double hu = 0.0, huu = 0.0;
                norms(path, k, hu, huu);
                r.sup_Hu = std::max(r.sup_Hu, hu);
                r.sup_Huu_plus = std::max(r.sup_Huu_plus, huu);
            }
    } else {
        r.quantile = opts.quantile;
        // Coefficient scale that turns adjoint standard errors into H_u and H_uu errors.
        double scale = 1.0;
        std::vector<double> a(P), b(P);
        for (std::size_t k = 0; k < N; ++k) {
            for (std::size_t path = 0; path < P; ++path) {
                norms(path, k, a[path], b[path]);
                const double bu = fr.b_u.at(path, k).norm();
                const double su = fr.sigma_u.at(path, k).norm();
                scale = std::max(scale, 1.0 + bu + su + su * su);
            }
            r.sup_Hu = std::max(r.sup_Hu, quantile(a, opts.quantile));
            r.sup_Huu_plus = std::max(r.sup_Huu_plus, quantile(b, opts.quantile));
        }
        r.tolerance = opts.analytic_tolerance + opts.k_sigma * (fr.level_stderr + fr.slope_stderr) * scale;
    }
    r.singular = r.sup_Hu <= r.tolerance && r.sup_Huu_plus <= r.tolerance;
    return r;
}

SampleStats s_integrability_diagnostic(const KernelFrames& fr) {
    const std::size_t P = fr.stored_paths();
    const double dt = fr.grid.dt();
    std::vector<double> v(P, 0.0);
    for (std::size_t path = 0; path < P; ++path) {
        double acc = 0.0;
        for (std::size_t k = 0; k < fr.steps(); ++k) acc += fr.S.at(path, k).squaredNorm() * dt;
        v[path] = acc * acc;
    }
    return sample_stats(v);
}

}  // namespace scl
