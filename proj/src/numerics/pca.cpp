#include "mdmx/numerics/pca.hpp"

#include <algorithm>

#include "mdmx/error.hpp"

namespace mdmx {

Pca pca_fit(const Matrix& rows, PcaTarget target) {
    require(rows.rows() >= 2, ErrorCode::InsufficientData, "pca_fit: need at least 2 rows");
    require(target.count > 0 || (target.fraction > 0.0 && target.fraction <= 1.0),
            ErrorCode::InvalidInput, "pca_fit: invalid target");
    Pca out;
    out.mean = rows.colwise().mean().transpose();
    const Matrix centered = rows.rowwise() - out.mean.transpose();
    Svd svd = thin_svd(centered);
    const Vector var = svd.s.array().square();
    const double total = var.sum();
    const int avail = static_cast<int>(svd.s.size());
    out.all_ratios = total > 0 ? Vector(var / total) : Vector(Vector::Zero(avail));

    int d;
    if (target.count > 0) {
        d = std::min(target.count, avail);
    } else if (total <= 0) {
        d = 1;
    } else {
        d = avail;
        double cum = 0.0;
        for (int i = 0; i < avail; ++i) {
            cum += out.all_ratios[i];
            if (cum >= target.fraction * (1.0 - 1e-12)) {
                d = i + 1;
                break;
            }
        }
    }
    out.components = svd.v.leftCols(d);
    fix_column_signs(out.components);
    out.explained_ratio = out.all_ratios.head(d);
    return out;
}

Matrix Pca::transform(const Matrix& rows) const {
    return (rows.rowwise() - mean.transpose()) * components;
}

Vector Pca::transform_one(const Vector& row) const {
    return components.transpose() * (row - mean);
}

Matrix Pca::inverse_transform(const Matrix& scores) const {
    return (scores * components.transpose()).rowwise() + mean.transpose();
}

}  // namespace mdmx
