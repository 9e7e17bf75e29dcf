#include "scl/regression.hpp"

#include "scl/errors.hpp"

#include <cmath>
#include <functional>

namespace scl {

int FeatureSource::dim() const {
    int d = 0;
    if (use_state && state) d += static_cast<int>(state->rows());
    if (use_brownian && brownian) d += 1;
    return d;
}

void FeatureSource::fill(std::size_t path, std::size_t node, double* out) const {
    int i = 0;
    if (use_state && state) {
        for (std::size_t r = 0; r < state->rows(); ++r) out[i++] = (*state)(path, node, r);
    }
    if (use_brownian && brownian) out[i++] = brownian->W(path, node);
}

PolynomialBasis::PolynomialBasis(int dim, int degree) : dim_(dim) {
    if (degree < 0) throw ConfigError("polynomial degree must be non-negative");
    std::vector<int> current(static_cast<std::size_t>(dim), 0);
    for (int total = 0; total <= degree; ++total) {
        // All exponent vectors with the given total degree, in lexicographic order.
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == dim - 1 || dim == 0) {
                if (dim > 0) current[static_cast<std::size_t>(pos)] = left;
                if (dim == 0 && left > 0) return;
                exponents_.push_back(current);
                return;
            }
            for (int e = left; e >= 0; --e) {
                current[static_cast<std::size_t>(pos)] = e;
                rec(pos + 1, left - e);
            }
        };
        if (dim == 0) {
            if (total == 0) exponents_.emplace_back();
            continue;
        }
        rec(0, total);
    }
}

void PolynomialBasis::evaluate(const double* z, double* out) const {
    for (std::size_t k = 0; k < exponents_.size(); ++k) {
        double v = 1.0;
        for (int d = 0; d < dim_; ++d) {
            for (int e = 0; e < exponents_[k][static_cast<std::size_t>(d)]; ++e) v *= z[d];
        }
        out[k] = v;
    }
}

NodeDesign::NodeDesign(const FeatureSource& source, std::size_t paths, std::size_t node, int degree) {
    const int d = source.dim();
    std::vector<double> buf(static_cast<std::size_t>(std::max(d, 1)));
    Vec sum = Vec::Zero(d), sum2 = Vec::Zero(d);
    Vec first(d);
    std::vector<bool> varies(static_cast<std::size_t>(d), false);
    for (std::size_t p = 0; p < paths; ++p) {
        source.fill(p, node, buf.data());
        for (int i = 0; i < d; ++i) {
            const double v = buf[static_cast<std::size_t>(i)];
            if (p == 0) first(i) = v;
            if (v != first(i)) varies[static_cast<std::size_t>(i)] = true;
            sum(i) += v;
        }
    }
    const Vec mean = d > 0 ? Vec(sum / static_cast<double>(paths)) : Vec();
    for (std::size_t p = 0; p < paths; ++p) {
        source.fill(p, node, buf.data());
        for (int i = 0; i < d; ++i) {
            const double c = buf[static_cast<std::size_t>(i)] - mean(i);
            sum2(i) += c * c;
        }
    }
    std::vector<int> spread;
    for (int i = 0; i < d; ++i) {
        const double var = sum2(i) / static_cast<double>(paths);
        if (!varies[static_cast<std::size_t>(i)] || !(var > 1e-28 * (1.0 + mean(i) * mean(i)))) continue;
        spread.push_back(i);
    }
    // With a single driver all features are affine in the first increment at node 1, and
    // generally features can be collinear; keep a linearly independent subset.
    const auto s = static_cast<Eigen::Index>(spread.size());
    Mat corr = Mat::Zero(s, s);
    if (s > 1) {
        Vec z(s);
        for (std::size_t p = 0; p < paths; ++p) {
            source.fill(p, node, buf.data());
            for (Eigen::Index a = 0; a < s; ++a) {
                const int i = spread[static_cast<std::size_t>(a)];
                z(a) = (buf[static_cast<std::size_t>(i)] - mean(i)) / std::sqrt(sum2(i));
            }
            corr.selfadjointView<Eigen::Lower>().rankUpdate(z);
        }
        corr = corr.selfadjointView<Eigen::Lower>();
    }
    std::vector<Eigen::Index> kept;
    for (Eigen::Index a = 0; a < s; ++a) {
        double residual = 1.0;
        if (!kept.empty()) {
            const auto k = static_cast<Eigen::Index>(kept.size());
            Mat ckk(k, k);
            Vec ck(k);
            for (Eigen::Index r = 0; r < k; ++r) {
                ck(r) = corr(kept[static_cast<std::size_t>(r)], a);
                for (Eigen::Index c = 0; c < k; ++c)
                    ckk(r, c) = corr(kept[static_cast<std::size_t>(r)], kept[static_cast<std::size_t>(c)]);
            }
            residual = 1.0 - ck.dot(ckk.ldlt().solve(ck));
        }
        if (residual > 1e-9) {
            kept.push_back(a);
            active_.push_back(spread[static_cast<std::size_t>(a)]);
        }
    }
    mean_.resize(static_cast<Eigen::Index>(active_.size()));
    scale_.resize(static_cast<Eigen::Index>(active_.size()));
    for (std::size_t a = 0; a < active_.size(); ++a) {
        const int i = active_[a];
        mean_(static_cast<Eigen::Index>(a)) = mean(i);
        scale_(static_cast<Eigen::Index>(a)) = std::sqrt(sum2(i) / static_cast<double>(paths));
    }
    basis_ = PolynomialBasis(static_cast<int>(active_.size()), degree);
}

void NodeDesign::evaluate(const FeatureSource& source, std::size_t path, std::size_t node, double* out) const {
    double raw[64];
    double z[64];
    const int d = source.dim();
    if (d > 64) throw ConfigError("too many regression features");
    source.fill(path, node, raw);
    for (std::size_t a = 0; a < active_.size(); ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        z[a] = (raw[active_[a]] - mean_(ai)) / scale_(ai);
    }
    basis_.evaluate(z, out);
}

Mat NodeDesign::matrix(const FeatureSource& source, std::size_t paths, std::size_t node) const {
    Mat b(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(size()));
    std::vector<double> row(size());
    for (std::size_t p = 0; p < paths; ++p) {
        evaluate(source, p, node, row.data());
        for (std::size_t j = 0; j < row.size(); ++j) b(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = row[j];
    }
    return b;
}

namespace {

Mat solve_normal(const Mat& gram, const Mat& rhs) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    const double low = eig.eigenvalues().minCoeff();
    if (!(top > 0.0) || low <= 1e-11 * top)
        throw BasisError("regression design is rank deficient (condition " +
                         std::to_string(top > 0.0 ? top / std::max(low, 1e-300) : 0.0) +
                         "); reduce the polynomial degree or add paths");
    return gram.ldlt().solve(rhs);
}

}  // namespace

JointFit fit_joint(const Mat& basis, const Eigen::Ref<const Vec>& xi, const Eigen::Ref<const Mat>& y) {
    const Eigen::Index b = basis.cols();
    Mat x(basis.rows(), 2 * b);
    x.leftCols(b) = basis;
    x.rightCols(b) = basis.array().colwise() * xi.array();
    const Mat gram = x.transpose() * x;
    const Mat coef = solve_normal(gram, x.transpose() * y);
    return JointFit{coef.topRows(b), coef.bottomRows(b)};
}

Mat fit_level(const Mat& basis, const Mat& y) {
    return solve_normal(basis.transpose() * basis, basis.transpose() * y);
}

}  // namespace scl
