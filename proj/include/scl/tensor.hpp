#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace scl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Dense row-major storage for per-path, per-node blocks: paths x nodes x (rows x cols).
// Each block is stored column-major so it maps directly onto an Eigen matrix.
class PathTensor {
public:
    PathTensor() = default;
    PathTensor(std::size_t paths, std::size_t nodes, std::size_t rows, std::size_t cols = 1,
               double fill = 0.0)
        : paths_(paths), nodes_(nodes), rows_(rows), cols_(cols),
          data_(paths * nodes * rows * cols, fill) {}

    std::size_t paths() const noexcept { return paths_; }
    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t block_size() const noexcept { return rows_ * cols_; }
    bool empty() const noexcept { return data_.empty(); }

    Eigen::Map<Mat> at(std::size_t path, std::size_t node) {
        return Eigen::Map<Mat>(block_ptr(path, node), static_cast<Eigen::Index>(rows_),
                               static_cast<Eigen::Index>(cols_));
    }
    Eigen::Map<const Mat> at(std::size_t path, std::size_t node) const {
        return Eigen::Map<const Mat>(block_ptr(path, node), static_cast<Eigen::Index>(rows_),
                                     static_cast<Eigen::Index>(cols_));
    }
    Eigen::Map<Vec> vec(std::size_t path, std::size_t node) {
        return Eigen::Map<Vec>(block_ptr(path, node), static_cast<Eigen::Index>(block_size()));
    }
    Eigen::Map<const Vec> vec(std::size_t path, std::size_t node) const {
        return Eigen::Map<const Vec>(block_ptr(path, node),
                                     static_cast<Eigen::Index>(block_size()));
    }
    double& operator()(std::size_t path, std::size_t node, std::size_t r = 0, std::size_t c = 0) {
        return data_[offset(path, node) + c * rows_ + r];
    }
    double operator()(std::size_t path, std::size_t node, std::size_t r = 0,
                      std::size_t c = 0) const {
        return data_[offset(path, node) + c * rows_ + r];
    }

    const std::vector<double>& raw() const noexcept { return data_; }
    std::vector<double>& raw() noexcept { return data_; }

    friend bool operator==(const PathTensor&, const PathTensor&) = default;

private:
    std::size_t offset(std::size_t path, std::size_t node) const noexcept {
        return (path * nodes_ + node) * rows_ * cols_;
    }
    double* block_ptr(std::size_t path, std::size_t node) { return data_.data() + offset(path, node); }
    const double* block_ptr(std::size_t path, std::size_t node) const {
        return data_.data() + offset(path, node);
    }

    std::size_t paths_ = 0;
    std::size_t nodes_ = 0;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Mat symmetric_part(const Mat& a) { return 0.5 * (a + a.transpose()); }

}  // namespace scl
