#pragma once

#include <array>
#include <vector>

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

// Dense 4-way array in row-major order: the last axis varies fastest.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(std::array<int, 4> dims, double fill = 0.0);

    const std::array<int, 4>& dims() const { return dims_; }
    int dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int i, int j, int k, int l) { return data_[offset(i, j, k, l)]; }
    double operator()(int i, int j, int k, int l) const { return data_[offset(i, j, k, l)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    // Mode-n unfolding: rows index mode n; columns run over the remaining
    // modes in ascending order, the earliest slowest.
    Matrix unfold(int mode) const;
    static Tensor4 fold(const Matrix& m, int mode, std::array<int, 4> dims);

    // n-mode product with u (rows x dim(mode)): replaces axis `mode` by u's rows.
    Tensor4 mode_product(const Matrix& u, int mode) const;

    bool operator==(const Tensor4& o) const { return dims_ == o.dims_ && data_ == o.data_; }

private:
    std::size_t offset(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k) * dims_[3] + l;
    }
    std::array<int, 4> dims_{0, 0, 0, 0};
    std::vector<double> data_;
};

}  // namespace mdmx
