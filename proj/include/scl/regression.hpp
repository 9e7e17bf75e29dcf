#pragma once

#include "scl/forward_sim.hpp"
#include "scl/tensor.hpp"

#include <memory>
#include <vector>

namespace scl {

// Raw regression features at (path, node): the reference state and/or W(t).
struct FeatureSource {
    std::shared_ptr<const PathTensor> state;
    std::shared_ptr<const BrownianSample> brownian;
    bool use_state = true;
    bool use_brownian = false;

    int dim() const;
    void fill(std::size_t path, std::size_t node, double* out) const;
};

// Monomials of total degree <= degree in dim variables, constant first.
class PolynomialBasis {
public:
    PolynomialBasis() = default;
    PolynomialBasis(int dim, int degree);

    std::size_t size() const noexcept { return exponents_.size(); }
    int dim() const noexcept { return dim_; }
    void evaluate(const double* z, double* out) const;

private:
    int dim_ = 0;
    std::vector<std::vector<int>> exponents_;
};

// Feature pruning and standardization at one node. Features with no spread
// across paths are dropped, so a deterministic reference leaves only the constant.
class NodeDesign {
public:
    NodeDesign() = default;
    NodeDesign(const FeatureSource& source, std::size_t paths, std::size_t node, int degree);

    std::size_t size() const noexcept { return basis_.size(); }
    void evaluate(const FeatureSource& source, std::size_t path, std::size_t node, double* out) const;
    // paths x size design matrix
    Mat matrix(const FeatureSource& source, std::size_t paths, std::size_t node) const;

private:
    std::vector<int> active_;
    Vec mean_;
    Vec scale_;
    PolynomialBasis basis_;
};

// Least squares of Y (P x r) on [B, B xi] where xi ~ N(0,1) is independent of B.
// The level part estimates E[Y | features], the slope part E[Y xi | features].
struct JointFit {
    Mat level;  // basis x r
    Mat slope;  // basis x r
};
JointFit fit_joint(const Mat& basis, const Eigen::Ref<const Vec>& xi, const Eigen::Ref<const Mat>& y);

// Least squares of Y on B alone.
Mat fit_level(const Mat& basis, const Mat& y);

}  // namespace scl
