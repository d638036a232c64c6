#include "mdmx/tensor.hpp"

#include "mdmx/error.hpp"

namespace mdmx {

Tensor4::Tensor4(std::array<int, 4> dims, double fill) : dims_(dims) {
    for (int d : dims) require(d >= 0, ErrorCode::InvalidInput, "Tensor4: negative dimension");
    data_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3], fill);
}

namespace {

// Column index of element (i0..i3) in the mode-n unfolding.
struct Unfolder {
    std::array<int, 4> dims;
    int mode;
    std::array<int, 3> rest;
    Unfolder(std::array<int, 4> d, int m) : dims(d), mode(m) {
        int k = 0;
        for (int i = 0; i < 4; ++i)
            if (i != m) rest[k++] = i;
    }
    Eigen::Index column(const std::array<int, 4>& idx) const {
        Eigen::Index c = 0;
        for (int r : rest) c = c * dims[r] + idx[r];
        return c;
    }
};

}  // namespace

Matrix Tensor4::unfold(int mode) const {
    require(mode >= 0 && mode < 4, ErrorCode::InvalidInput, "unfold: mode out of range");
    const Unfolder u(dims_, mode);
    Matrix m(dims_[mode], static_cast<Eigen::Index>(size() / std::max(1, dims_[mode])));
    std::array<int, 4> idx{};
    std::size_t p = 0;
    for (idx[0] = 0; idx[0] < dims_[0]; ++idx[0])
        for (idx[1] = 0; idx[1] < dims_[1]; ++idx[1])
            for (idx[2] = 0; idx[2] < dims_[2]; ++idx[2])
                for (idx[3] = 0; idx[3] < dims_[3]; ++idx[3]) m(idx[mode], u.column(idx)) = data_[p++];
    return m;
}

Tensor4 Tensor4::fold(const Matrix& m, int mode, std::array<int, 4> dims) {
    require(mode >= 0 && mode < 4, ErrorCode::InvalidInput, "fold: mode out of range");
    Tensor4 t(dims);
    require(m.rows() == dims[mode] && static_cast<std::size_t>(m.size()) == t.size(), ErrorCode::InvalidInput,
            "fold: shape mismatch");
    const Unfolder u(dims, mode);
    std::array<int, 4> idx{};
    std::size_t p = 0;
    for (idx[0] = 0; idx[0] < dims[0]; ++idx[0])
        for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
            for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
                for (idx[3] = 0; idx[3] < dims[3]; ++idx[3]) t.data_[p++] = m(idx[mode], u.column(idx));
    return t;
}

Tensor4 Tensor4::mode_product(const Matrix& u, int mode) const {
    require(u.cols() == dims_[mode], ErrorCode::InvalidInput, "mode_product: inner dimension mismatch");
    std::array<int, 4> out = dims_;
    out[mode] = static_cast<int>(u.rows());
    return fold(u * unfold(mode), mode, out);
}

}  // namespace mdmx
