#pragma once

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

// Retain either a fixed number of components or the smallest number whose
// cumulative explained-variance ratio reaches a fraction.
struct PcaTarget {
    double fraction = 0.0;
    int count = 0;

    static PcaTarget variance(double f) { return {f, 0}; }
    static PcaTarget components(int k) { return {0.0, k}; }
};

struct Pca {
    Vector mean;                // p
    Matrix components;          // p x d, orthonormal columns
    Vector explained_ratio;     // d
    Vector all_ratios;          // every component, for diagnostics

    int dim() const { return static_cast<int>(components.cols()); }
    Matrix transform(const Matrix& rows) const;
    Vector transform_one(const Vector& row) const;
    Matrix inverse_transform(const Matrix& scores) const;
};

Pca pca_fit(const Matrix& rows, PcaTarget target);

}  // namespace mdmx
