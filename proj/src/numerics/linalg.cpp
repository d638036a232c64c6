#include "mdmx/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "mdmx/error.hpp"

namespace mdmx {

Svd thin_svd(const Matrix& m) {
    require(m.size() > 0, ErrorCode::InvalidInput, "thin_svd: empty matrix");
    require(m.allFinite(), ErrorCode::DomainError, "thin_svd: non-finite entries");
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

Matrix qr_orthonormalize(const Matrix& m, double rank_tol) {
    require(m.rows() >= m.cols(), ErrorCode::InvalidInput,
            "qr_orthonormalize: more columns than rows");
    require(m.allFinite(), ErrorCode::DomainError, "qr_orthonormalize: non-finite entries");
    Eigen::HouseholderQR<Matrix> qr(m);
    const Matrix r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
    double rmax = 0.0;
    for (Eigen::Index j = 0; j < r.cols(); ++j) rmax = std::max(rmax, std::abs(r(j, j)));
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
        if (!(std::abs(r(j, j)) > rank_tol * std::max(rmax, 1e-300)))
            fail(ErrorCode::RankDeficient, "qr_orthonormalize: rank-deficient input");
    }
    Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < r.cols(); ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
    return q;
}

void fix_column_signs(Matrix& m) { fix_column_signs(m, nullptr); }

void fix_column_signs(Matrix& m, Matrix* partner) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            // strict comparison: the first index wins ties
            if (std::abs(m(i, j)) > best) {
                best = std::abs(m(i, j));
                imax = i;
            }
        }
        if (m.rows() > 0 && m(imax, j) < 0) {
            m.col(j) *= -1.0;
            if (partner) partner->col(j) *= -1.0;
        }
    }
}

std::vector<int> hungarian(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    require(n <= m, ErrorCode::InvalidInput, "hungarian: more rows than columns");
    const double inf = std::numeric_limits<double>::infinity();
    // Potentials formulation, 1-based with a sentinel column 0.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> assignment(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] > 0) assignment[p[j] - 1] = j - 1;
    return assignment;
}

double matched_agreement(const std::vector<int>& a, const std::vector<int>& b) {
    require(a.size() == b.size(), ErrorCode::InvalidInput, "matched_agreement: size mismatch");
    if (a.empty()) return 1.0;
    std::map<int, int> ia, ib;
    for (int x : a) ia.emplace(x, 0);
    for (int x : b) ib.emplace(x, 0);
    int k = 0;
    for (auto& kv : ia) kv.second = k++;
    k = 0;
    for (auto& kv : ib) kv.second = k++;
    const int n = static_cast<int>(std::max(ia.size(), ib.size()));
    Matrix counts = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < a.size(); ++i) counts(ib[b[i]], ia[a[i]]) += 1.0;
    const std::vector<int> match = hungarian(-counts);
    double agree = 0.0;
    for (int r = 0; r < n; ++r) agree += counts(r, match[r]);
    return agree / static_cast<double>(a.size());
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace mdmx
