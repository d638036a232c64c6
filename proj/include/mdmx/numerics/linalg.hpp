#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mdmx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Svd {
    Matrix u;
    Vector s;  // descending
    Matrix v;
};

// Thin SVD; throws DomainError on non-finite input.
Svd thin_svd(const Matrix& m);

// Orthonormal basis for the column space of m, column order preserved.
// Each output column keeps the orientation of its input column (diag(R) > 0),
// so an already orthonormal input comes back unchanged up to rounding.
Matrix qr_orthonormalize(const Matrix& m, double rank_tol = 1e-10);

// Flip each column so its largest-magnitude entry is positive.
void fix_column_signs(Matrix& m);

// Same flip, applied jointly: the sign is decided by `m`, and the matching
// column of `partner` (if non-null) is flipped along with it.
void fix_column_signs(Matrix& m, Matrix* partner);

// Minimum-cost assignment of rows to columns (square or rectangular with
// rows <= cols). Returns the column chosen for each row.
std::vector<int> hungarian(const Matrix& cost);

// Fraction of items on which two labelings agree after the best one-to-one
// relabeling of `b` onto `a`.
double matched_agreement(const std::vector<int>& a, const std::vector<int>& b);

double dot(const double* a, const double* b, std::size_t n);

}  // namespace mdmx
