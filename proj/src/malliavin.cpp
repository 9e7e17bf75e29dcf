#include "scl/malliavin.hpp"

#include "scl/errors.hpp"
#include "scl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace scl {

namespace plugins {

MalliavinPlugin brownian() {
    MalliavinPlugin p;
    p.label = "W";
    p.value = [](const BrownianSample& b, std::size_t path, std::size_t k, Mat& out) {
        out.setConstant(1, 1, b.W(path, k));
    };
    p.derivative = [](const BrownianSample&, std::size_t, std::size_t s, std::size_t t, Mat& out) {
        out.setConstant(1, 1, s <= t ? 1.0 : 0.0);
    };
    p.diagonal = [](const BrownianSample&, std::size_t, std::size_t, Mat& out) { out.setConstant(1, 1, 1.0); };
    return p;
}

MalliavinPlugin brownian_squared() {
    MalliavinPlugin p;
    p.label = "W^2";
    p.value = [](const BrownianSample& b, std::size_t path, std::size_t k, Mat& out) {
        const double w = b.W(path, k);
        out.setConstant(1, 1, w * w);
    };
    p.derivative = [](const BrownianSample& b, std::size_t path, std::size_t s, std::size_t t, Mat& out) {
        out.setConstant(1, 1, s <= t ? 2.0 * b.W(path, t) : 0.0);
    };
    p.diagonal = [](const BrownianSample& b, std::size_t path, std::size_t k, Mat& out) {
        out.setConstant(1, 1, 2.0 * b.W(path, k));
    };
    return p;
}

MalliavinPlugin constant(Mat value) {
    MalliavinPlugin p;
    p.label = "constant";
    p.rows = static_cast<int>(value.rows());
    p.cols = static_cast<int>(value.cols());
    const auto r = value.rows(), c = value.cols();
    p.value = [value](const BrownianSample&, std::size_t, std::size_t, Mat& out) { out = value; };
    p.derivative = [r, c](const BrownianSample&, std::size_t, std::size_t, std::size_t, Mat& out) {
        out.setZero(r, c);
    };
    p.diagonal = [r, c](const BrownianSample&, std::size_t, std::size_t, Mat& out) { out.setZero(r, c); };
    return p;
}

MalliavinPlugin zero(int rows, int cols) {
    auto p = constant(Mat::Zero(rows, cols));
    p.label = "zero";
    return p;
}

}  // namespace plugins

PluginAudit audit_plugin(const MalliavinPlugin& plugin, const BrownianSample& brownian, std::size_t probes,
                         std::uint64_t seed) {
    if (!plugin.derivative) throw ConfigError("plugin '" + plugin.label + "' has no derivative");
    PluginAudit a;
    const std::size_t N = brownian.grid.steps;
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<std::size_t> path_dist(0, brownian.paths - 1);
    std::uniform_int_distribution<std::size_t> node_dist(0, N - 1);
    Mat out;
    for (std::size_t i = 0; i < probes; ++i) {
        const std::size_t path = path_dist(gen);
        const std::size_t t = node_dist(gen);
        std::uniform_int_distribution<std::size_t> s_dist(t + 1, N);
        plugin.derivative(brownian, path, s_dist(gen), t, out);
        a.max_future_derivative = std::max(a.max_future_derivative, out.cwiseAbs().maxCoeff());
        if (plugin.minus) {
            plugin.minus(brownian, path, t, out);
            a.max_minus = std::max(a.max_minus, out.cwiseAbs().maxCoeff());
        }
    }
    a.ok = a.max_future_derivative == 0.0 && a.max_minus == 0.0;
    return a;
}

namespace {

struct Window {
    std::size_t k0 = 0;
    std::size_t L = 0;
    double theta = 0.0;
};

Window snap_window(const TimeGrid& g, double tau, double theta) {
    if (!(theta > 0.0)) throw DomainError("malliavin_kernels", "window length must be positive");
    Window w;
    w.k0 = g.nearest_node(tau);
    w.L = static_cast<std::size_t>(std::llround(theta / g.dt()));
    if (w.L < 1) throw DomainError("malliavin_kernels", "window shorter than one time step");
    if (w.k0 + w.L > g.steps)
        throw DomainError("malliavin_kernels", "window [tau, tau + theta] extends past the horizon");
    w.theta = static_cast<double>(w.L) * g.dt();
    return w;
}

std::shared_ptr<const BrownianSample> borrow(const BrownianSample& b) {
    return std::shared_ptr<const BrownianSample>(&b, [](const BrownianSample*) {});
}

double flat_dot(const Eigen::Ref<const Mat>& a, const Eigen::Ref<const Mat>& b) {
    return (a.array() * b.array()).sum();
}

}  // namespace

Mat triangle_weights(std::size_t L) {
    const auto n = static_cast<Eigen::Index>(L + 1);
    Mat w = Mat::Zero(n, n);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(L); ++j) {
        w(j, j) += 1.0 / 6.0;
        w(j, j + 1) += 1.0 / 6.0;
        w(j + 1, j + 1) += 1.0 / 6.0;
        for (Eigen::Index k = j + 1; k < static_cast<Eigen::Index>(L); ++k) {
            w(j, k) += 0.25;
            w(j + 1, k) += 0.25;
            w(j, k + 1) += 0.25;
            w(j + 1, k + 1) += 0.25;
        }
    }
    return w;
}

// ----------------------------------------------------------------- Clark-Ocone

ClarkOconeReport clark_ocone_check(const MalliavinPlugin& zeta, const BrownianSample& brownian, int degree) {
    if (!zeta.value || !zeta.derivative) throw ConfigError("plugin '" + zeta.label + "' is incomplete");
    const std::size_t P = brownian.paths;
    const std::size_t N = brownian.grid.steps;
    const auto d = static_cast<Eigen::Index>(zeta.rows * zeta.cols);
    FeatureSource fs;
    fs.brownian = borrow(brownian);
    fs.use_state = false;
    fs.use_brownian = true;

    Mat z(static_cast<Eigen::Index>(P), d);
    Mat recon = Mat::Zero(static_cast<Eigen::Index>(P), d);
    Mat tmp;
    for (std::size_t p = 0; p < P; ++p) {
        zeta.value(brownian, p, N, tmp);
        z.row(static_cast<Eigen::Index>(p)) = tmp.reshaped().transpose();
    }
    Mat y(static_cast<Eigen::Index>(P), d);
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t p = 0; p < P; ++p) {
            zeta.derivative(brownian, p, j, N, tmp);
            y.row(static_cast<Eigen::Index>(p)) = tmp.reshaped().transpose();
        }
        const NodeDesign design(fs, P, j, degree);
        const Mat B = design.matrix(fs, P, j);
        const Mat fitted = B * fit_level(B, y);
        for (std::size_t p = 0; p < P; ++p)
            recon.row(static_cast<Eigen::Index>(p)) += fitted.row(static_cast<Eigen::Index>(p)) * brownian.dW(p, j);
    }
    // E zeta estimated from zeta minus its stochastic integral, which removes the
    // Monte Carlo noise of the plain sample mean.
    const Eigen::RowVectorXd mean = (z - recon).colwise().mean();
    recon.rowwise() += mean;
    ClarkOconeReport r;
    r.mean = mean.size() ? mean(0) : 0.0;
    const double err = (z - recon).squaredNorm();
    const double spread = (z.rowwise() - z.colwise().mean()).squaredNorm();
    r.relative_error = spread > 1e-300 ? std::sqrt(err / spread) : std::sqrt(err / static_cast<double>(P));
    return r;
}

// --------------------------------------------------------- martingale kernel

MartingaleKernel MartingaleKernel::zero(const TimeGrid& grid, int dim, std::string label) {
    MartingaleKernel k;
    k.label_ = std::move(label);
    k.grid_ = grid;
    k.dim_ = dim;
    k.zero_ = true;
    return k;
}

void MartingaleKernel::evaluate(std::size_t path, std::size_t s, std::size_t t, double* out) const {
    std::fill(out, out + dim_, 0.0);
    if (zero_ || s >= t || s >= coef_.size()) return;
    const Mat& c = coef_[s];
    double basis[128];
    const auto& design = designs_[s];
    if (design.size() > 128) throw ConfigError("regression basis too large");
    design.evaluate(features_, path, s, basis);
    const auto col0 = static_cast<Eigen::Index>((t - s - 1) * static_cast<std::size_t>(dim_));
    for (int comp = 0; comp < dim_; ++comp) {
        double acc = 0.0;
        for (Eigen::Index b = 0; b < c.rows(); ++b) acc += basis[b] * c(b, col0 + comp);
        out[comp] = acc;
    }
}

MartingaleKernel martingale_representation(const PathTensor& phi, std::shared_ptr<const BrownianSample> brownian,
                                           const FeatureSource& features, int degree, std::string label) {
    const std::size_t P = phi.paths();
    const std::size_t K = phi.nodes();
    const auto dim = static_cast<Eigen::Index>(phi.block_size());
    const TimeGrid& grid = brownian->grid;
    if (P != brownian->paths || K > grid.nodes() || K < 2)
        throw ConfigError("process samples do not match the Brownian sample");
    MartingaleKernel out;
    out.label_ = std::move(label);
    out.grid_ = grid;
    out.dim_ = static_cast<int>(dim);
    out.features_ = features;
    out.designs_.resize(K - 1);
    out.coef_.resize(K - 1);
    const double sq = std::sqrt(grid.dt());
    const auto rows = static_cast<Eigen::Index>(P);

    // Column block k-1 of y holds target k: raw phi(k) when first entered at node k-1,
    // then its fitted conditional expectation. Buffers are reused across nodes.
    const Eigen::Index width = dim * static_cast<Eigen::Index>(K - 1);
    Mat y(rows, width);
    Mat recon = Mat::Zero(rows, width);
    Mat work(rows, width);
    Vec xi(rows);
    bool all_zero = true;
    for (std::size_t j = K - 1; j-- > 0;) {
        for (std::size_t p = 0; p < P; ++p)
            y.block(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j) * dim, 1, dim) = phi.vec(p, j + 1).transpose();
        const Eigen::Index cols = width - static_cast<Eigen::Index>(j) * dim;
        auto active = y.rightCols(cols);
        const NodeDesign design(features, P, j, degree);
        const Mat B = design.matrix(features, P, j);
        for (std::size_t p = 0; p < P; ++p) xi(static_cast<Eigen::Index>(p)) = brownian->dW(p, j) / sq;
        JointFit fit = fit_joint(B, xi, active);
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double first = active(0, c);
            if ((active.col(c).array() == first).all()) {
                fit.level.col(c).setZero();
                fit.level(0, c) = first;
                fit.slope.col(c).setZero();
            }
        }
        if (!fit.slope.isZero(0.0)) all_zero = false;
        auto w = work.rightCols(cols);
        w.noalias() = B * fit.slope;
        recon.rightCols(cols) += xi.asDiagonal() * w;
        w.noalias() = B * fit.level;
        active = w;
        out.coef_[j] = fit.slope / sq;
        out.designs_[j] = design;
    }
    const Mat& level0 = y;
    out.zero_ = all_zero;

    double err = 0.0, spread = 0.0;
    for (std::size_t k = 1; k < K; ++k) {
        for (Eigen::Index c = 0; c < dim; ++c) {
            const Eigen::Index col = static_cast<Eigen::Index>(k - 1) * dim + c;
            double mean = 0.0;
            for (std::size_t p = 0; p < P; ++p) mean += phi.vec(p, k)(c);
            mean /= static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) {
                const auto r = static_cast<Eigen::Index>(p);
                const double target = phi.vec(p, k)(c);
                const double rec = level0(r, col) + recon(r, col);
                err += (target - rec) * (target - rec);
                spread += (target - mean) * (target - mean);
            }
        }
    }
    const double count = static_cast<double>(P * (K - 1)) * static_cast<double>(dim);
    out.recon_error_ = spread > 1e-300 ? std::sqrt(err / spread) : std::sqrt(err / count);
    return out;
}

// ------------------------------------------------------------- window checks

std::vector<LadderPoint> window_diagonal_check(const MalliavinPlugin& plugin, const BrownianSample& brownian,
                                               const std::vector<double>& taus,
                                               const std::vector<double>& theta_ladder) {
    if (!plugin.derivative || !plugin.diagonal) throw ConfigError("plugin '" + plugin.label + "' is incomplete");
    if (taus.empty()) throw ConfigError("window check needs at least one tau");
    const TimeGrid& g = brownian.grid;
    const std::size_t P = brownian.paths;
    std::vector<LadderPoint> out;
    for (double theta : theta_ladder) {
        std::vector<Window> wins;
        for (double tau : taus) wins.push_back(snap_window(g, tau, theta));
        const Mat w = triangle_weights(wins.front().L);
        const double th = wins.front().theta;
        std::vector<double> per_path(P, 0.0);
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            Mat d, nab;
            std::vector<Mat> diag(wins.front().L + 1);
            for (std::size_t p = begin; p < end; ++p) {
                double total = 0.0;
                for (const auto& win : wins) {
                    for (std::size_t s = 0; s <= win.L; ++s) plugin.diagonal(brownian, p, win.k0 + s, diag[s]);
                    double acc = 0.0;
                    for (std::size_t s = 0; s <= win.L; ++s)
                        for (std::size_t t = s; t <= win.L; ++t) {
                            plugin.derivative(brownian, p, win.k0 + s, win.k0 + t, d);
                            acc += w(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) *
                                   (d - diag[s]).squaredNorm();
                        }
                    total += acc * g.dt() * g.dt() / (th * th);
                }
                per_path[p] = total / static_cast<double>(wins.size());
            }
        });
        const auto st = sample_stats(per_path);
        out.push_back({th, st.mean, st.std_error});
    }
    return out;
}

LimitKernelReport limit_kernel_check(const PathTensor& phi, const PathTensor& psi, const TimeGrid& grid, double tau,
                                     const std::vector<double>& theta_ladder) {
    if (phi.paths() != psi.paths() || phi.nodes() != psi.nodes() || phi.block_size() != psi.block_size())
        throw ConfigError("limit kernel inputs differ in shape");
    if (phi.nodes() != grid.nodes()) throw ConfigError("limit kernel inputs do not match the grid");
    const std::size_t P = phi.paths();
    LimitKernelReport r;
    const std::size_t k_tau = grid.nearest_node(tau);
    {
        std::vector<double> v(P);
        for (std::size_t p = 0; p < P; ++p) v[p] = 0.5 * flat_dot(phi.at(p, k_tau), psi.at(p, k_tau));
        r.limit = sample_stats(v);
    }
    for (double theta : theta_ladder) {
        const Window win = snap_window(grid, tau, theta);
        const Mat w = triangle_weights(win.L);
        const double scale = grid.dt() * grid.dt() / (win.theta * win.theta);
        std::vector<double> a(P), b(P);
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                double first = 0.0, second = 0.0;
                const auto phi_tau = phi.vec(p, win.k0);
                for (std::size_t t = 0; t <= win.L; ++t) {
                    const auto phi_t = phi.vec(p, win.k0 + t);
                    for (std::size_t s = 0; s <= t; ++s) {
                        const double wt = w(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
                        const auto psi_s = psi.vec(p, win.k0 + s);
                        first += wt * phi_tau.dot(psi_s);
                        second += wt * phi_t.dot(psi_s);
                    }
                }
                a[p] = first * scale;
                b[p] = second * scale;
            }
        });
        const auto sa = sample_stats(a), sb = sample_stats(b);
        r.tau_variant.push_back({win.theta, sa.mean, sa.std_error});
        r.t_variant.push_back({win.theta, sb.mean, sb.std_error});
    }
    return r;
}

// ------------------------------------------------------------ counterexamples

Counterexample counterexample_from_string(const std::string& s) {
    if (s == "osc" || s == "oscillating") return Counterexample::Oscillating;
    if (s == "singular") return Counterexample::Singular;
    throw ConfigError("unknown counterexample '" + s + "' (expected osc or singular)");
}

double counterexample_horizon(Counterexample which) {
    return which == Counterexample::Oscillating ? std::sqrt(2.0) : 1.0;
}

namespace {

// int_0^theta (theta - u) g(u) du for the banded +-1 kernel in u = t - s.
double oscillating_integral(double theta) {
    const double r2 = std::sqrt(2.0);
    double total = 0.0;
    double a_prev = 2.0;  // a_0
    auto band = [&](double lo, double hi, double sign) {
        hi = std::min(hi, theta);
        if (hi <= lo) return;
        total += sign * (theta * (hi - lo) - 0.5 * (hi * hi - lo * lo));
    };
    for (int n = 1; n < 2000; ++n) {
        const double a_n = a_prev / 3.0;
        const double top = r2 * a_prev / 2.0;
        if (top < theta * 1e-18) break;
        band(r2 * a_n / 2.0, r2 * a_n, 1.0);
        band(r2 * a_n, top, -1.0);
        a_prev = a_n;
    }
    return total;
}

}  // namespace

std::vector<double> counterexample_ratio(Counterexample which, double tau, const std::vector<double>& thetas) {
    const double T = counterexample_horizon(which);
    std::vector<double> out;
    for (double theta : thetas) {
        if (!(theta > 0.0) || tau < 0.0 || tau + theta > T * (1.0 + 1e-14))
            throw DomainError("malliavin_kernels", "tau + theta must lie in (0, " + std::to_string(T) + "]");
        if (which == Counterexample::Oscillating) {
            out.push_back(oscillating_integral(theta) / (theta * theta));
        } else {
            // int_0^theta (theta - u) (-u^{-1/2}) du = -(2 theta^{3/2} - 2/3 theta^{3/2})
            const double s = std::sqrt(theta);
            out.push_back(-(2.0 * theta * s - (2.0 / 3.0) * theta * s) / (theta * theta));
        }
    }
    return out;
}

std::vector<double> oscillating_thetas(bool half_previous, int count) {
    std::vector<double> out;
    const double r2 = std::sqrt(2.0);
    double a_prev = 2.0;
    for (int n = 1; n <= count; ++n) {
        const double a_n = a_prev / 3.0;
        out.push_back(half_previous ? r2 * a_prev / 2.0 : r2 * a_n);
        a_prev = a_n;
    }
    return out;
}

std::vector<LadderPoint> needle_cross_term(const PathTensor& a, const PathTensor& c, const BrownianSample& brownian,
                                           double tau, const std::vector<double>& theta_ladder) {
    if (a.paths() != brownian.paths || c.paths() != brownian.paths || a.block_size() != c.block_size())
        throw ConfigError("cross-term inputs differ in shape");
    const TimeGrid& g = brownian.grid;
    const std::size_t P = brownian.paths;
    std::vector<LadderPoint> out;
    for (double theta : theta_ladder) {
        const Window win = snap_window(g, tau, theta);
        if (win.k0 + win.L > std::min(a.nodes(), c.nodes()))
            throw DomainError("malliavin_kernels", "cross-term window extends past the samples");
        std::vector<double> v(P);
        parallel_for(P, [&](std::size_t begin, std::size_t end) {
            Vec acc(static_cast<Eigen::Index>(a.block_size()));
            for (std::size_t p = begin; p < end; ++p) {
                acc.setZero();
                double total = 0.0;
                for (std::size_t k = win.k0; k < win.k0 + win.L; ++k) {
                    total += a.vec(p, k).dot(acc) * g.dt();
                    acc += c.vec(p, k) * brownian.dW(p, k);
                }
                v[p] = total / std::pow(win.theta, 1.5);
            }
        });
        const auto st = sample_stats(v);
        out.push_back({win.theta, st.mean, st.std_error});
    }
    return out;
}

void write_ladder_csv(const std::string& file, const std::vector<LadderPoint>& points) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    os << "theta,estimate,stderr\n" << std::setprecision(17);
    for (const auto& p : points) os << p.theta << "," << p.estimate << "," << p.std_error << "\n";
}

}  // namespace scl
