#include "scl/problem.hpp"

#include "scl/errors.hpp"
#include "scl/expression.hpp"
#include "scl/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace scl {

void VectorJet::resize(int n, int m) {
    value.setZero(n);
    dx.setZero(n, n);
    du.setZero(n, m);
    dxx.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
    dxu.assign(static_cast<std::size_t>(n), Mat::Zero(m, n));
    duu.assign(static_cast<std::size_t>(n), Mat::Zero(m, m));
}

void ScalarJet::resize(int n, int m) {
    value = 0.0;
    dx.setZero(n);
    du.setZero(m);
    dxx.setZero(n, n);
    dxu.setZero(m, n);
    duu.setZero(m, m);
}

// ---------------------------------------------------------------- control set

namespace {

std::vector<Vec> box_grid(const Vec& lo, const Vec& hi) {
    const int m = static_cast<int>(lo.size());
    std::vector<Vec> grid;
    std::size_t total = 1;
    for (int j = 0; j < m; ++j) total *= 3;
    grid.reserve(total);
    for (std::size_t code = 0; code < total; ++code) {
        Vec u(m);
        std::size_t c = code;
        for (int j = 0; j < m; ++j) {
            const int level = static_cast<int>(c % 3);
            c /= 3;
            u(j) = level == 0 ? lo(j) : (level == 1 ? 0.5 * (lo(j) + hi(j)) : hi(j));
        }
        grid.push_back(std::move(u));
    }
    return grid;
}

}  // namespace

ControlSet ControlSet::box(Vec lower, Vec upper) {
    if (lower.size() == 0 || lower.size() != upper.size())
        throw StructuralError("control box bounds must be nonempty vectors of equal length");
    for (Eigen::Index j = 0; j < lower.size(); ++j) {
        if (!std::isfinite(lower(j)) || !std::isfinite(upper(j)))
            throw StructuralError("control box must be bounded");
        if (lower(j) > upper(j)) throw StructuralError("control box is empty in coordinate " + std::to_string(j));
    }
    ControlSet s;
    s.kind_ = Kind::Box;
    s.dim_ = static_cast<int>(lower.size());
    s.grid_ = box_grid(lower, upper);
    s.lower_ = std::move(lower);
    s.upper_ = std::move(upper);
    return s;
}

ControlSet ControlSet::polytope(std::vector<Vec> vertices) {
    if (vertices.empty()) throw StructuralError("polytope needs at least one vertex");
    const auto m = vertices.front().size();
    if (m == 0) throw StructuralError("polytope vertices must be nonempty vectors");
    Vec lo = vertices.front();
    Vec hi = vertices.front();
    for (const auto& v : vertices) {
        if (v.size() != m) throw StructuralError("polytope vertices have mixed dimensions");
        if (!v.allFinite()) throw StructuralError("polytope vertices must be finite");
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    ControlSet s;
    s.kind_ = Kind::Polytope;
    s.dim_ = static_cast<int>(m);
    s.lower_ = lo;
    s.upper_ = hi;
    Vec centroid = Vec::Zero(m);
    for (const auto& v : vertices) centroid += v;
    centroid /= static_cast<double>(vertices.size());
    s.grid_ = vertices;
    for (std::size_t i = 0; i < vertices.size(); ++i)
        for (std::size_t j = i + 1; j < vertices.size(); ++j) s.grid_.push_back(0.5 * (vertices[i] + vertices[j]));
    s.grid_.push_back(centroid);
    s.vertices_ = std::move(vertices);
    return s;
}

Vec min_norm_point(const std::vector<Vec>& points) {
    if (points.empty()) throw StructuralError("min_norm_point: no points");
    const auto dim = points.front().size();
    double scale = 0.0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double sq = points[i].squaredNorm();
        scale = std::max(scale, sq);
        if (sq < points[start].squaredNorm()) start = i;
    }
    if (points.size() == 1 || scale == 0.0) return points[start];

    std::vector<std::size_t> active{start};
    Vec lambda = Vec::Ones(1);
    Vec x = points[start];
    const double eps = 1e-14;

    auto combine = [&](const Vec& weights) {
        Vec out = Vec::Zero(dim);
        for (std::size_t i = 0; i < active.size(); ++i) out += weights(static_cast<Eigen::Index>(i)) * points[active[i]];
        return out;
    };

    for (int major = 0; major < 1000; ++major) {
        std::size_t best = 0;
        double best_dot = x.dot(points[0]);
        for (std::size_t i = 1; i < points.size(); ++i) {
            const double d = x.dot(points[i]);
            if (d < best_dot) {
                best_dot = d;
                best = i;
            }
        }
        if (x.squaredNorm() - best_dot <= eps * scale) break;
        if (std::find(active.begin(), active.end(), best) != active.end()) break;
        active.push_back(best);
        lambda.conservativeResize(static_cast<Eigen::Index>(active.size()));
        lambda(lambda.size() - 1) = 0.0;

        for (int minor = 0; minor < 1000; ++minor) {
            const auto s = static_cast<Eigen::Index>(active.size());
            Mat kkt = Mat::Zero(s + 1, s + 1);
            for (Eigen::Index i = 0; i < s; ++i) {
                for (Eigen::Index j = 0; j < s; ++j)
                    kkt(i, j) = points[active[static_cast<std::size_t>(i)]].dot(points[active[static_cast<std::size_t>(j)]]);
                kkt(i, s) = 1.0;
                kkt(s, i) = 1.0;
            }
            Vec rhs = Vec::Zero(s + 1);
            rhs(s) = 1.0;
            const Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
            const Vec mu = sol.head(s);
            if (mu.minCoeff() > eps) {
                lambda = mu;
                break;
            }
            double theta = 1.0;
            for (Eigen::Index i = 0; i < s; ++i) {
                if (mu(i) <= eps && lambda(i) - mu(i) > 0.0) theta = std::min(theta, lambda(i) / (lambda(i) - mu(i)));
            }
            lambda = lambda + theta * (mu - lambda);
            std::vector<std::size_t> kept;
            std::vector<double> kept_w;
            for (Eigen::Index i = 0; i < s; ++i) {
                if (lambda(i) > eps) {
                    kept.push_back(active[static_cast<std::size_t>(i)]);
                    kept_w.push_back(lambda(i));
                }
            }
            if (kept.empty()) {
                kept.push_back(active.back());
                kept_w.push_back(1.0);
            }
            active = kept;
            lambda = Eigen::Map<Vec>(kept_w.data(), static_cast<Eigen::Index>(kept_w.size()));
            lambda /= lambda.sum();
        }
        x = combine(lambda);
    }
    return x;
}

Vec ControlSet::project(const Vec& u) const {
    if (u.size() != dim_) throw StructuralError("control has dimension " + std::to_string(u.size()) +
                                                ", expected " + std::to_string(dim_));
    if (kind_ == Kind::Box) return u.cwiseMax(lower_).cwiseMin(upper_);
    std::vector<Vec> shifted;
    shifted.reserve(vertices_.size());
    for (const auto& v : vertices_) shifted.push_back(v - u);
    return u + min_norm_point(shifted);
}

double ControlSet::distance(const Vec& u) const { return (project(u) - u).norm(); }

void ControlSet::set_sample_grid(std::vector<Vec> grid) {
    if (grid.empty()) throw ConfigError("control sample grid must be nonempty");
    for (const auto& v : grid) {
        if (!contains(v, 1e-12)) throw ConfigError("control sample grid point lies outside the control set");
    }
    grid_ = std::move(grid);
}

// --------------------------------------------------------- admissible controls

AdmissibleControl AdmissibleControl::constant(Vec value) {
    AdmissibleControl c;
    c.kind_ = Kind::Constant;
    c.dim_ = static_cast<int>(value.size());
    c.deterministic_ = true;
    c.constant_ = value;
    c.eval_ = [value](std::size_t, std::size_t, double, const Noise&, Vec& out) { out = value; };
    c.time_fn_ = [value](double) { return value; };
    return c;
}

AdmissibleControl AdmissibleControl::time_function(std::function<Vec(double)> fn, int dim) {
    AdmissibleControl c;
    c.kind_ = Kind::TimeFunction;
    c.dim_ = dim;
    c.deterministic_ = true;
    c.eval_ = [fn](std::size_t, std::size_t, double t, const Noise&, Vec& out) { out = fn(t); };
    c.time_fn_ = std::move(fn);
    return c;
}

AdmissibleControl AdmissibleControl::sampled(std::shared_ptr<const PathTensor> values) {
    AdmissibleControl c;
    c.kind_ = Kind::Sampled;
    c.dim_ = static_cast<int>(values->rows());
    c.deterministic_ = false;
    c.eval_ = [values](std::size_t path, std::size_t node, double, const Noise&, Vec& out) {
        out = values->vec(path, node);
    };
    return c;
}

AdmissibleControl AdmissibleControl::path_functional(std::function<void(double, const Noise&, Vec&)> fn, int dim) {
    AdmissibleControl c;
    c.kind_ = Kind::PathFunctional;
    c.dim_ = dim;
    c.deterministic_ = false;
    c.eval_ = [fn = std::move(fn)](std::size_t, std::size_t, double t, const Noise& noise, Vec& out) {
        fn(t, noise, out);
    };
    return c;
}

AdmissibleControl AdmissibleControl::blend(const AdmissibleControl& a, const AdmissibleControl& b, double scale) {
    if (a.dim() != b.dim()) throw StructuralError("blended controls differ in dimension");
    AdmissibleControl c;
    c.kind_ = Kind::Composite;
    c.dim_ = a.dim();
    c.deterministic_ = a.deterministic() && b.deterministic();
    c.eval_ = [a, b, scale](std::size_t path, std::size_t node, double t, const Noise& noise, Vec& out) {
        thread_local Vec other;
        a.value(path, node, t, noise, out);
        b.value(path, node, t, noise, other);
        out += scale * (other - out);
    };
    if (c.deterministic_) c.time_fn_ = [a, b, scale](double t) {
        const Vec va = a.at_time(t);
        return Vec(va + scale * (b.at_time(t) - va));
    };
    return c;
}

AdmissibleControl AdmissibleControl::window(const AdmissibleControl& a, const AdmissibleControl& b,
                                            std::size_t from, std::size_t to) {
    if (a.dim() != b.dim()) throw StructuralError("windowed controls differ in dimension");
    AdmissibleControl c;
    c.kind_ = Kind::Composite;
    c.dim_ = a.dim();
    c.deterministic_ = a.deterministic() && b.deterministic();
    c.eval_ = [a, b, from, to](std::size_t path, std::size_t node, double t, const Noise& noise, Vec& out) {
        if (node >= from && node < to)
            b.value(path, node, t, noise, out);
        else
            a.value(path, node, t, noise, out);
    };
    return c;
}

Vec AdmissibleControl::at_time(double t) const {
    if (!time_fn_) throw ConfigError("control has no time representation");
    return time_fn_(t);
}

// ------------------------------------------------------------------ LQ problems

namespace {

struct LqAt {
    Mat A, B, C, D, R, M, N;
};

void zero_second(VectorJet& jet, int n, int m) {
    if (jet.dxx.size() != static_cast<std::size_t>(n)) {
        jet.dxx.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
        jet.dxu.assign(static_cast<std::size_t>(n), Mat::Zero(m, n));
        jet.duu.assign(static_cast<std::size_t>(n), Mat::Zero(m, m));
        return;
    }
    for (std::size_t i = 0; i < jet.dxx.size(); ++i) {
        jet.dxx[i].setZero(n, n);
        jet.dxu[i].setZero(m, n);
        jet.duu[i].setZero(m, m);
    }
}

bool is_symmetric(const Mat& a) {
    if (a.rows() != a.cols()) return false;
    const double scale = 1.0 + a.cwiseAbs().maxCoeff();
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

void check_shape(const Mat& a, Eigen::Index r, Eigen::Index c, const char* name) {
    if (a.rows() != r || a.cols() != c) {
        std::ostringstream os;
        os << "LQ matrix " << name << " is " << a.rows() << "x" << a.cols() << ", expected " << r << "x" << c;
        throw StructuralError(os.str());
    }
}

}  // namespace

ControlProblem make_lq_problem(const LqData& data, int n, int m, double horizon, Vec x0, ControlSet set) {
    if (n <= 0 || m <= 0) throw StructuralError("LQ dimensions must be positive");
    if (x0.size() != n) throw StructuralError("initial state length does not match n");
    if (set.dim() != m) throw StructuralError("control set dimension does not match m");
    if (!(horizon > 0.0)) throw StructuralError("horizon must be positive");
    check_shape(data.G, n, n, "G");
    if (!is_symmetric(data.G)) throw StructuralError("LQ matrix G is not symmetric");

    auto at = [data](double t) {
        return LqAt{data.A(t), data.B(t), data.C(t), data.D(t), data.R(t), data.M(t), data.N(t)};
    };
    for (double t : {0.0, 0.5 * horizon, horizon}) {
        const LqAt c = at(t);
        check_shape(c.A, n, n, "A");
        check_shape(c.B, n, m, "B");
        check_shape(c.C, n, n, "C");
        check_shape(c.D, n, m, "D");
        check_shape(c.R, n, n, "R");
        check_shape(c.M, m, n, "M");
        check_shape(c.N, m, m, "N");
        if (!is_symmetric(c.R)) throw StructuralError("LQ matrix R is not symmetric");
        if (!is_symmetric(c.N)) throw StructuralError("LQ matrix N is not symmetric");
    }

    // Time-invariant data is frozen once so oracle calls do not allocate.
    auto frozen = std::make_shared<const LqAt>(at(0.0));
    const bool fixed = data.time_invariant;
    auto coeffs = [fixed, frozen, at](double t, LqAt& scratch) -> const LqAt& {
        if (fixed) return *frozen;
        scratch = at(t);
        return scratch;
    };

    ControlProblem p;
    p.name = "lq";
    p.state_dim = n;
    p.control_dim = m;
    p.horizon = horizon;
    p.initial_state = std::move(x0);
    p.control_set = std::move(set);
    p.coefficient_class = CoefficientClass::Deterministic;
    p.lq = data;

    p.drift = [coeffs, n, m](double t, const Vec& x, const Vec& u, const Noise&, JetOrder order, VectorJet& jet) {
        thread_local LqAt scratch;
        const LqAt& c = coeffs(t, scratch);
        jet.value.noalias() = c.A * x;
        jet.value.noalias() += c.B * u;
        if (order == JetOrder::Value) return;
        jet.dx = c.A;
        jet.du = c.B;
        if (order == JetOrder::Second) zero_second(jet, n, m);
    };
    p.diffusion = [coeffs, n, m](double t, const Vec& x, const Vec& u, const Noise&, JetOrder order,
                                 VectorJet& jet) {
        thread_local LqAt scratch;
        const LqAt& c = coeffs(t, scratch);
        jet.value.noalias() = c.C * x;
        jet.value.noalias() += c.D * u;
        if (order == JetOrder::Value) return;
        jet.dx = c.C;
        jet.du = c.D;
        if (order == JetOrder::Second) zero_second(jet, n, m);
    };
    p.running_cost = [coeffs](double t, const Vec& x, const Vec& u, const Noise&, JetOrder order, ScalarJet& jet) {
        thread_local LqAt scratch;
        const LqAt& c = coeffs(t, scratch);
        jet.value = 0.5 * (x.dot(c.R * x) + 2.0 * u.dot(c.M * x) + u.dot(c.N * u));
        if (order == JetOrder::Value) return;
        jet.dx.noalias() = c.R * x;
        jet.dx.noalias() += c.M.transpose() * u;
        jet.du.noalias() = c.M * x;
        jet.du.noalias() += c.N * u;
        if (order == JetOrder::Second) {
            jet.dxx = c.R;
            jet.dxu = c.M;
            jet.duu = c.N;
        }
    };
    const Mat G = data.G;
    p.terminal_cost = [G](const Vec& x, const Noise&, JetOrder order, ScalarJet& jet) {
        jet.dx.noalias() = G * x;
        jet.value = 0.5 * x.dot(jet.dx);
        if (order == JetOrder::Second) jet.dxx = G;
    };
    return p;
}

ControlProblem make_lq_problem(const LqMatrices& in, double horizon, Vec x0, ControlSet set) {
    const auto n = x0.size();
    const auto m = static_cast<Eigen::Index>(set.dim());
    auto or_zero = [](const Mat& a, Eigen::Index r, Eigen::Index c) { return a.size() == 0 ? Mat(Mat::Zero(r, c)) : a; };
    auto constant = [](Mat a) { return std::function<Mat(double)>([a](double) { return a; }); };
    LqData data;
    data.A = constant(or_zero(in.A, n, n));
    data.B = constant(or_zero(in.B, n, m));
    data.C = constant(or_zero(in.C, n, n));
    data.D = constant(or_zero(in.D, n, m));
    data.R = constant(or_zero(in.R, n, n));
    data.M = constant(or_zero(in.M, m, n));
    data.N = constant(or_zero(in.N, m, m));
    data.G = or_zero(in.G, n, n);
    data.time_invariant = true;
    return make_lq_problem(data, static_cast<int>(n), static_cast<int>(m), horizon, std::move(x0), std::move(set));
}

// ---------------------------------------------------------- expression problems

namespace {

using expr::Expression;
using expr::VariableLayout;

struct CompiledScalar {
    Expression value;
    std::vector<Expression> dx, du;       // n, m
    std::vector<Expression> dxx, dxu, duu;  // n*n, m*n, m*m (column major)
};

CompiledScalar compile(const std::string& text, const VariableLayout& layout, bool with_u) {
    CompiledScalar c;
    c.value = Expression::parse(text, layout);
    const int n = layout.state_dim;
    const int m = with_u ? layout.control_dim : 0;
    for (int i = 0; i < n; ++i) c.dx.push_back(c.value.derivative(layout.state_slot(i)));
    for (int j = 0; j < m; ++j) c.du.push_back(c.value.derivative(layout.control_slot(j)));
    for (int l = 0; l < n; ++l)
        for (int i = 0; i < n; ++i) c.dxx.push_back(c.dx[static_cast<std::size_t>(i)].derivative(layout.state_slot(l)));
    for (int l = 0; l < n; ++l)
        for (int j = 0; j < m; ++j) c.dxu.push_back(c.dx[static_cast<std::size_t>(l)].derivative(layout.control_slot(j)));
    for (int k = 0; k < m; ++k)
        for (int j = 0; j < m; ++j) c.duu.push_back(c.du[static_cast<std::size_t>(j)].derivative(layout.control_slot(k)));
    return c;
}

bool uses_brownian(const CompiledScalar& c, const VariableLayout& layout) {
    return c.value.depends_on(layout.brownian_slot());
}

constexpr int kMaxSlots = 64;

using Slots = std::array<double, kMaxSlots>;

void load_slots(Slots& s, const VariableLayout& layout, double t, const Vec& x, const Vec* u, double w) {
    s[static_cast<std::size_t>(layout.time_slot())] = t;
    for (int i = 0; i < layout.state_dim; ++i) s[static_cast<std::size_t>(layout.state_slot(i))] = x(i);
    for (int j = 0; j < layout.control_dim; ++j)
        s[static_cast<std::size_t>(layout.control_slot(j))] = u ? (*u)(j) : 0.0;
    s[static_cast<std::size_t>(layout.brownian_slot())] = w;
}

VectorOracle vector_oracle(std::vector<CompiledScalar> comps, VariableLayout layout) {
    auto shared = std::make_shared<const std::vector<CompiledScalar>>(std::move(comps));
    return [shared, layout](double t, const Vec& x, const Vec& u, const Noise& noise, JetOrder order, VectorJet& jet) {
        const int n = layout.state_dim;
        const int m = layout.control_dim;
        Slots s;
        load_slots(s, layout, t, x, &u, noise.w);
        const std::span<const double> view(s.data(), static_cast<std::size_t>(layout.slot_count()));
        jet.value.resize(n);
        for (int i = 0; i < n; ++i) jet.value(i) = (*shared)[static_cast<std::size_t>(i)].value.evaluate(view);
        if (order == JetOrder::Value) return;
        jet.dx.resize(n, n);
        jet.du.resize(n, m);
        for (int i = 0; i < n; ++i) {
            const auto& c = (*shared)[static_cast<std::size_t>(i)];
            for (int l = 0; l < n; ++l) jet.dx(i, l) = c.dx[static_cast<std::size_t>(l)].evaluate(view);
            for (int j = 0; j < m; ++j) jet.du(i, j) = c.du[static_cast<std::size_t>(j)].evaluate(view);
        }
        if (order == JetOrder::Value || order == JetOrder::First) return;
        jet.dxx.resize(static_cast<std::size_t>(n));
        jet.dxu.resize(static_cast<std::size_t>(n));
        jet.duu.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& c = (*shared)[static_cast<std::size_t>(i)];
            auto& hxx = jet.dxx[static_cast<std::size_t>(i)];
            auto& hxu = jet.dxu[static_cast<std::size_t>(i)];
            auto& huu = jet.duu[static_cast<std::size_t>(i)];
            hxx.resize(n, n);
            hxu.resize(m, n);
            huu.resize(m, m);
            for (int k = 0; k < n * n; ++k) hxx.data()[k] = c.dxx[static_cast<std::size_t>(k)].evaluate(view);
            for (int k = 0; k < m * n; ++k) hxu.data()[k] = c.dxu[static_cast<std::size_t>(k)].evaluate(view);
            for (int k = 0; k < m * m; ++k) huu.data()[k] = c.duu[static_cast<std::size_t>(k)].evaluate(view);
        }
    };
}

}  // namespace

ControlProblem make_expression_problem(const ExpressionProblemSpec& spec) {
    const int n = spec.n;
    const int m = spec.m;
    if (n <= 0 || m <= 0) throw StructuralError("expression problem dimensions must be positive");
    if (n + m + 2 > kMaxSlots) throw ConfigError("expression problems support n + m <= 62");
    if (static_cast<int>(spec.drift.size()) != n) throw StructuralError("drift needs one expression per state");
    if (static_cast<int>(spec.diffusion.size()) != n)
        throw StructuralError("diffusion needs one expression per state");
    if (spec.x0.size() != n) throw StructuralError("initial state length does not match n");
    if (spec.control_set.dim() != m) throw StructuralError("control set dimension does not match m");
    if (!(spec.horizon > 0.0)) throw StructuralError("horizon must be positive");

    const VariableLayout layout{n, m};
    std::vector<CompiledScalar> drift, diffusion;
    bool random = false;
    for (const auto& e : spec.drift) {
        drift.push_back(compile(e, layout, true));
        random = random || uses_brownian(drift.back(), layout);
    }
    for (const auto& e : spec.diffusion) {
        diffusion.push_back(compile(e, layout, true));
        random = random || uses_brownian(diffusion.back(), layout);
    }
    auto running = std::make_shared<const CompiledScalar>(compile(spec.running_cost, layout, true));
    random = random || uses_brownian(*running, layout);
    // Terminal cost: u slots are unused but still parsed against the same layout.
    auto terminal = std::make_shared<const CompiledScalar>(compile(spec.terminal_cost, layout, false));
    for (int j = 0; j < m; ++j) {
        if (terminal->value.depends_on(layout.control_slot(j)))
            throw ConfigError("terminal cost may not depend on the control");
    }
    random = random || uses_brownian(*terminal, layout);

    ControlProblem p;
    p.name = spec.name;
    p.state_dim = n;
    p.control_dim = m;
    p.horizon = spec.horizon;
    p.initial_state = spec.x0;
    p.control_set = spec.control_set;
    p.coefficient_class = random ? CoefficientClass::Random : CoefficientClass::Deterministic;
    p.lipschitz_bound = spec.lipschitz_bound;
    p.drift = vector_oracle(std::move(drift), layout);
    p.diffusion = vector_oracle(std::move(diffusion), layout);
    p.running_cost = [running, layout](double t, const Vec& x, const Vec& u, const Noise& noise, JetOrder order,
                                       ScalarJet& jet) {
        const int n = layout.state_dim;
        const int m = layout.control_dim;
        Slots s;
        load_slots(s, layout, t, x, &u, noise.w);
        const std::span<const double> view(s.data(), static_cast<std::size_t>(layout.slot_count()));
        jet.value = running->value.evaluate(view);
        if (order == JetOrder::Value) return;
        jet.dx.resize(n);
        jet.du.resize(m);
        for (int i = 0; i < n; ++i) jet.dx(i) = running->dx[static_cast<std::size_t>(i)].evaluate(view);
        for (int j = 0; j < m; ++j) jet.du(j) = running->du[static_cast<std::size_t>(j)].evaluate(view);
        if (order == JetOrder::First) return;
        jet.dxx.resize(n, n);
        jet.dxu.resize(m, n);
        jet.duu.resize(m, m);
        for (int k = 0; k < n * n; ++k) jet.dxx.data()[k] = running->dxx[static_cast<std::size_t>(k)].evaluate(view);
        for (int k = 0; k < m * n; ++k) jet.dxu.data()[k] = running->dxu[static_cast<std::size_t>(k)].evaluate(view);
        for (int k = 0; k < m * m; ++k) jet.duu.data()[k] = running->duu[static_cast<std::size_t>(k)].evaluate(view);
    };
    const double horizon = spec.horizon;
    p.terminal_cost = [terminal, layout, horizon](const Vec& x, const Noise& noise, JetOrder order, ScalarJet& jet) {
        const int n = layout.state_dim;
        Slots s;
        load_slots(s, layout, horizon, x, nullptr, noise.w);
        const std::span<const double> view(s.data(), static_cast<std::size_t>(layout.slot_count()));
        jet.value = terminal->value.evaluate(view);
        if (order == JetOrder::Value) return;
        jet.dx.resize(n);
        for (int i = 0; i < n; ++i) jet.dx(i) = terminal->dx[static_cast<std::size_t>(i)].evaluate(view);
        if (order == JetOrder::First) return;
        jet.dxx.resize(n, n);
        for (int k = 0; k < n * n; ++k) jet.dxx.data()[k] = terminal->dxx[static_cast<std::size_t>(k)].evaluate(view);
    };
    return p;
}

// -------------------------------------------------------------------- presets

namespace presets {

namespace {
ControlSet unit_box(int m) { return ControlSet::box(Vec::Constant(m, -1.0), Vec::Constant(m, 1.0)); }
Mat scalar(double v) { return Mat::Constant(1, 1, v); }
}  // namespace

ControlProblem example33() {
    LqMatrices d;
    d.B = scalar(1.0);
    d.D = scalar(1.0);
    d.N = scalar(1.0);
    d.G = scalar(-1.0);
    auto p = make_lq_problem(d, 1.0, Vec::Zero(1), unit_box(1));
    p.name = "example33";
    p.lipschitz_bound = 1.0;
    return p;
}

ControlProblem example33_no_terminal() {
    LqMatrices d;
    d.B = scalar(1.0);
    d.D = scalar(1.0);
    d.N = scalar(1.0);
    d.G = scalar(0.0);
    auto p = make_lq_problem(d, 1.0, Vec::Zero(1), unit_box(1));
    p.name = "example33-no-terminal";
    return p;
}

ControlProblem example34() {
    LqMatrices d;
    d.B = Vec(Vec::Unit(2, 0)).asDiagonal();
    d.D = Vec(Vec::Unit(2, 1)).asDiagonal();
    d.G = Vec(Vec::Unit(2, 0)).asDiagonal();
    auto p = make_lq_problem(d, 1.0, Vec::Zero(2), unit_box(2));
    p.name = "example34";
    p.lipschitz_bound = 1.0;
    return p;
}

ControlProblem sine() {
    ExpressionProblemSpec s;
    s.name = "sine";
    s.n = 1;
    s.m = 1;
    s.horizon = 1.0;
    s.x0 = Vec::Constant(1, 0.5);
    s.drift = {"sin(x[0]) + u[0]"};
    s.diffusion = {"u[0]"};
    s.running_cost = "0.5 * u[0]^2";
    s.terminal_cost = "0.5 * x[0]^2";
    s.control_set = unit_box(1);
    return make_expression_problem(s);
}

}  // namespace presets

// ------------------------------------------------------------------ validation

namespace {

std::string probe_text(double t, const Vec& x, const Vec& u) {
    std::ostringstream os;
    os.precision(6);
    os << "t=" << t << " x=[";
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? "," : "") << x(i);
    os << "] u=[";
    for (Eigen::Index i = 0; i < u.size(); ++i) os << (i ? "," : "") << u(i);
    os << "]";
    return os.str();
}

void require_shape(bool ok, const std::string& oracle, const std::string& block, Eigen::Index r, Eigen::Index c,
                   Eigen::Index er, Eigen::Index ec) {
    if (ok) return;
    std::ostringstream os;
    os << "oracle " << oracle << " block " << block << " has shape " << r << "x" << c << ", expected " << er << "x"
       << ec;
    throw StructuralError(os.str());
}

void require_finite(bool ok, const std::string& oracle, double t, const Vec& x, const Vec& u) {
    if (!ok) throw OracleError("oracle " + oracle + " returned a non-finite value at " + probe_text(t, x, u));
}

void check_vector_jet(const VectorJet& jet, const std::string& name, int n, int m, JetOrder order, double t,
                      const Vec& x, const Vec& u) {
    require_shape(jet.value.size() == n, name, "value", jet.value.size(), 1, n, 1);
    require_finite(jet.value.allFinite(), name, t, x, u);
    if (order == JetOrder::Value) return;
    require_shape(jet.dx.rows() == n && jet.dx.cols() == n, name, "x", jet.dx.rows(), jet.dx.cols(), n, n);
    require_shape(jet.du.rows() == n && jet.du.cols() == m, name, "u", jet.du.rows(), jet.du.cols(), n, m);
    require_finite(jet.dx.allFinite() && jet.du.allFinite(), name + " first derivatives", t, x, u);
    if (order == JetOrder::First) return;
    require_shape(jet.dxx.size() == static_cast<std::size_t>(n), name, "xx count",
                  static_cast<Eigen::Index>(jet.dxx.size()), 1, n, 1);
    require_shape(jet.dxu.size() == static_cast<std::size_t>(n), name, "xu count",
                  static_cast<Eigen::Index>(jet.dxu.size()), 1, n, 1);
    require_shape(jet.duu.size() == static_cast<std::size_t>(n), name, "uu count",
                  static_cast<Eigen::Index>(jet.duu.size()), 1, n, 1);
    for (int i = 0; i < n; ++i) {
        const auto& a = jet.dxx[static_cast<std::size_t>(i)];
        const auto& b = jet.dxu[static_cast<std::size_t>(i)];
        const auto& c = jet.duu[static_cast<std::size_t>(i)];
        require_shape(a.rows() == n && a.cols() == n, name, "xx", a.rows(), a.cols(), n, n);
        require_shape(b.rows() == m && b.cols() == n, name, "xu", b.rows(), b.cols(), m, n);
        require_shape(c.rows() == m && c.cols() == m, name, "uu", c.rows(), c.cols(), m, m);
        require_finite(a.allFinite() && b.allFinite() && c.allFinite(), name + " second derivatives", t, x, u);
    }
}

void check_scalar_jet(const ScalarJet& jet, const std::string& name, int n, int m, JetOrder order, double t,
                      const Vec& x, const Vec& u, bool terminal) {
    require_finite(std::isfinite(jet.value), name, t, x, u);
    if (order == JetOrder::Value) return;
    require_shape(jet.dx.size() == n, name, "x", jet.dx.size(), 1, n, 1);
    require_finite(jet.dx.allFinite(), name + " first derivatives", t, x, u);
    if (!terminal) {
        require_shape(jet.du.size() == m, name, "u", jet.du.size(), 1, m, 1);
        require_finite(jet.du.allFinite(), name + " first derivatives", t, x, u);
    }
    if (order == JetOrder::First) return;
    require_shape(jet.dxx.rows() == n && jet.dxx.cols() == n, name, "xx", jet.dxx.rows(), jet.dxx.cols(), n, n);
    require_finite(jet.dxx.allFinite(), name + " second derivatives", t, x, u);
    if (terminal) return;
    require_shape(jet.dxu.rows() == m && jet.dxu.cols() == n, name, "xu", jet.dxu.rows(), jet.dxu.cols(), m, n);
    require_shape(jet.duu.rows() == m && jet.duu.cols() == m, name, "uu", jet.duu.rows(), jet.duu.cols(), m, m);
    require_finite(jet.dxu.allFinite() && jet.duu.allFinite(), name + " second derivatives", t, x, u);
}

double rel_err(double fd, double exact) { return std::abs(fd - exact) / std::max(1.0, std::abs(exact)); }

double symmetry_defect(const Mat& a) {
    if (a.size() == 0) return 0.0;
    return (a - a.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff());
}

class ResidualTable {
public:
    void record(const std::string& oracle, const std::string& block, double err) {
        for (auto& r : rows_) {
            if (r.oracle == oracle && r.block == block) {
                r.max_error = std::max(r.max_error, err);
                return;
            }
        }
        rows_.push_back({oracle, block, err, true});
    }
    std::vector<OracleResidual> finish(double tol) {
        for (auto& r : rows_) r.pass = r.max_error <= tol;
        return rows_;
    }

private:
    std::vector<OracleResidual> rows_;
};

}  // namespace

void eval_vector_jet(const ControlProblem& p, const VectorOracle& g, const char* name, double t, const Vec& x,
                     const Vec& u, const Noise& noise, JetOrder order, VectorJet& jet) {
    g(t, x, u, noise, order, jet);
    check_vector_jet(jet, name, p.state_dim, p.control_dim, order, t, x, u);
}

void eval_scalar_jet(const ControlProblem& p, double t, const Vec& x, const Vec& u, const Noise& noise,
                     JetOrder order, ScalarJet& jet) {
    p.running_cost(t, x, u, noise, order, jet);
    check_scalar_jet(jet, "f", p.state_dim, p.control_dim, order, t, x, u, false);
}

void eval_terminal_jet(const ControlProblem& p, const Vec& x, const Noise& noise, JetOrder order, ScalarJet& jet) {
    p.terminal_cost(x, noise, order, jet);
    check_scalar_jet(jet, "h", p.state_dim, p.control_dim, order, p.horizon, x, Vec(), true);
}

ValidationReport validate_problem(const ControlProblem& p, const ValidationOptions& opts) {
    const int n = p.state_dim;
    const int m = p.control_dim;
    if (n <= 0 || m <= 0) throw StructuralError("state and control dimensions must be positive");
    if (p.initial_state.size() != n)
        throw StructuralError("initial state has length " + std::to_string(p.initial_state.size()) +
                              ", expected " + std::to_string(n));
    if (p.control_set.dim() != m) throw StructuralError("control set dimension does not match control_dim");
    if (!p.drift || !p.diffusion || !p.running_cost || !p.terminal_cost)
        throw StructuralError("problem is missing a coefficient oracle");

    ValidationReport report;
    report.tolerance = opts.tolerance;
    ResidualTable table;
    const double h = opts.fd_step;

    if (!p.control_set.lower().allFinite() || !p.control_set.upper().allFinite()) {
        report.control_set_ok = false;
        report.issues.push_back("control set is unbounded");
    }
    for (const auto& v : p.control_set.sample_grid()) {
        if (!p.control_set.contains(v, 1e-12)) {
            report.control_set_ok = false;
            report.issues.push_back("sample grid point outside the control set");
            break;
        }
    }

    const Philox4x32 gen(opts.seed);
    std::vector<double> increments(4);
    VectorJet jet, plus, minus;
    ScalarJet sjet, splus, sminus;

    for (int probe = 0; probe < opts.probes; ++probe) {
        const PathNormalStream normals(opts.seed, static_cast<std::uint64_t>(probe));
        auto uniform = [&](std::uint32_t k) {
            const auto out = gen({k, static_cast<std::uint32_t>(probe), 0xC0FFEEu, 0u});
            return to_unit_open(out[0], out[1]);
        };
        const double t = p.horizon * uniform(0);
        Vec x(n);
        for (int i = 0; i < n; ++i) x(i) = p.initial_state(i) + normals(static_cast<std::uint64_t>(i));
        Vec u(m);
        if (p.control_set.kind() == ControlSet::Kind::Box) {
            for (int j = 0; j < m; ++j) {
                const double a = p.control_set.lower()(j);
                const double b = p.control_set.upper()(j);
                u(j) = a + (b - a) * uniform(static_cast<std::uint32_t>(1 + j));
            }
        } else {
            const auto& verts = p.control_set.vertices();
            Vec weights(static_cast<Eigen::Index>(verts.size()));
            for (Eigen::Index k = 0; k < weights.size(); ++k)
                weights(k) = -std::log(uniform(static_cast<std::uint32_t>(1 + k)));
            weights /= weights.sum();
            u.setZero();
            for (std::size_t k = 0; k < verts.size(); ++k) u += weights(static_cast<Eigen::Index>(k)) * verts[k];
        }
        double w = 0.0;
        const double dt = p.horizon / 4.0;
        for (std::size_t k = 0; k < increments.size(); ++k) {
            increments[k] = std::sqrt(dt) * normals(static_cast<std::uint64_t>(n + 8 + static_cast<int>(k)));
            w += increments[k];
        }
        const Noise noise{increments, w};

        for (const auto& [name, oracle] : {std::pair<std::string, const VectorOracle*>{"b", &p.drift},
                                           std::pair<std::string, const VectorOracle*>{"sigma", &p.diffusion}}) {
            eval_vector_jet(p, *oracle, name.c_str(), t, x, u, noise, JetOrder::Second, jet);
            report.max_first_derivative =
                std::max({report.max_first_derivative, jet.dx.cwiseAbs().maxCoeff(), jet.du.cwiseAbs().maxCoeff()});
            for (int i = 0; i < n; ++i) {
                report.max_symmetry_defect =
                    std::max({report.max_symmetry_defect, symmetry_defect(jet.dxx[static_cast<std::size_t>(i)]),
                              symmetry_defect(jet.duu[static_cast<std::size_t>(i)])});
            }
            for (int l = 0; l < n; ++l) {
                Vec xp = x, xm = x;
                xp(l) += h;
                xm(l) -= h;
                eval_vector_jet(p, *oracle, name.c_str(), t, xp, u, noise, JetOrder::First, plus);
                eval_vector_jet(p, *oracle, name.c_str(), t, xm, u, noise, JetOrder::First, minus);
                for (int i = 0; i < n; ++i) {
                    table.record(name, "x", rel_err((plus.value(i) - minus.value(i)) / (2 * h), jet.dx(i, l)));
                    for (int l2 = 0; l2 < n; ++l2)
                        table.record(name, "xx", rel_err((plus.dx(i, l2) - minus.dx(i, l2)) / (2 * h),
                                                         jet.dxx[static_cast<std::size_t>(i)](l, l2)));
                }
            }
            for (int j = 0; j < m; ++j) {
                Vec up = u, um = u;
                up(j) += h;
                um(j) -= h;
                eval_vector_jet(p, *oracle, name.c_str(), t, x, up, noise, JetOrder::First, plus);
                eval_vector_jet(p, *oracle, name.c_str(), t, x, um, noise, JetOrder::First, minus);
                for (int i = 0; i < n; ++i) {
                    table.record(name, "u", rel_err((plus.value(i) - minus.value(i)) / (2 * h), jet.du(i, j)));
                    for (int l = 0; l < n; ++l)
                        table.record(name, "xu", rel_err((plus.dx(i, l) - minus.dx(i, l)) / (2 * h),
                                                         jet.dxu[static_cast<std::size_t>(i)](j, l)));
                    for (int j2 = 0; j2 < m; ++j2)
                        table.record(name, "uu", rel_err((plus.du(i, j2) - minus.du(i, j2)) / (2 * h),
                                                         jet.duu[static_cast<std::size_t>(i)](j, j2)));
                }
            }
        }

        eval_scalar_jet(p, t, x, u, noise, JetOrder::Second, sjet);
        report.max_symmetry_defect =
            std::max({report.max_symmetry_defect, symmetry_defect(sjet.dxx), symmetry_defect(sjet.duu)});
        for (int l = 0; l < n; ++l) {
            Vec xp = x, xm = x;
            xp(l) += h;
            xm(l) -= h;
            eval_scalar_jet(p, t, xp, u, noise, JetOrder::First, splus);
            eval_scalar_jet(p, t, xm, u, noise, JetOrder::First, sminus);
            table.record("f", "x", rel_err((splus.value - sminus.value) / (2 * h), sjet.dx(l)));
            for (int l2 = 0; l2 < n; ++l2)
                table.record("f", "xx", rel_err((splus.dx(l2) - sminus.dx(l2)) / (2 * h), sjet.dxx(l, l2)));
        }
        for (int j = 0; j < m; ++j) {
            Vec up = u, um = u;
            up(j) += h;
            um(j) -= h;
            eval_scalar_jet(p, t, x, up, noise, JetOrder::First, splus);
            eval_scalar_jet(p, t, x, um, noise, JetOrder::First, sminus);
            table.record("f", "u", rel_err((splus.value - sminus.value) / (2 * h), sjet.du(j)));
            for (int l = 0; l < n; ++l)
                table.record("f", "xu", rel_err((splus.dx(l) - sminus.dx(l)) / (2 * h), sjet.dxu(j, l)));
            for (int j2 = 0; j2 < m; ++j2)
                table.record("f", "uu", rel_err((splus.du(j2) - sminus.du(j2)) / (2 * h), sjet.duu(j, j2)));
        }

        eval_terminal_jet(p, x, noise, JetOrder::Second, sjet);
        report.max_symmetry_defect = std::max(report.max_symmetry_defect, symmetry_defect(sjet.dxx));
        for (int l = 0; l < n; ++l) {
            Vec xp = x, xm = x;
            xp(l) += h;
            xm(l) -= h;
            eval_terminal_jet(p, xp, noise, JetOrder::First, splus);
            eval_terminal_jet(p, xm, noise, JetOrder::First, sminus);
            table.record("h", "x", rel_err((splus.value - sminus.value) / (2 * h), sjet.dx(l)));
            for (int l2 = 0; l2 < n; ++l2)
                table.record("h", "xx", rel_err((splus.dx(l2) - sminus.dx(l2)) / (2 * h), sjet.dxx(l, l2)));
        }
    }

    report.residuals = table.finish(opts.tolerance);
    report.pass = report.control_set_ok;
    for (const auto& r : report.residuals) {
        if (!r.pass) {
            report.pass = false;
            std::ostringstream os;
            os << "finite-difference mismatch in " << r.oracle << "_" << r.block << ": " << r.max_error;
            report.issues.push_back(os.str());
        }
    }
    if (report.max_symmetry_defect > opts.tolerance) {
        report.pass = false;
        report.issues.push_back("Hessian block not symmetric (defect " + std::to_string(report.max_symmetry_defect) +
                                ")");
    }
    if (p.lipschitz_bound > 0.0 && report.max_first_derivative > p.lipschitz_bound * (1.0 + 1e-12)) {
        report.pass = false;
        report.issues.push_back("first derivative exceeds the declared bound on probe points");
    }
    return report;
}

}  // namespace scl
