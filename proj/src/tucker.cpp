#include "mdmx/tucker.hpp"

#include <algorithm>
#include <cmath>

#include "mdmx/error.hpp"
#include "mdmx/numerics/smoothing.hpp"

namespace mdmx {

const AgeSmoothingParams& AgeSmoothingSpec::params_for(int component) const {
    const int idx = component - 1;
    if (idx >= 0 && idx < static_cast<int>(leading.size())) return leading[static_cast<std::size_t>(idx)];
    return tail;
}

int select_rank(const Vector& sv, double tau, int min_rank, int max_rank) {
    require(tau > 0.0 && tau <= 1.0, ErrorCode::InvalidInput, "select_rank: tau must be in (0,1]");
    require(sv.size() > 0, ErrorCode::InvalidInput, "select_rank: empty spectrum");
    require(min_rank >= 1 && min_rank <= max_rank, ErrorCode::InvalidInput, "select_rank: invalid bounds");
    const Vector sq = sv.array().square();
    const double total = sq.sum();
    const int n = static_cast<int>(sv.size());
    int r = n;
    if (total > 0.0) {
        double cum = 0.0;
        for (int i = 0; i < n; ++i) {
            cum += sq[i];
            if (cum / total >= tau) {
                r = i + 1;
                break;
            }
        }
    }
    return std::min(std::clamp(r, min_rank, max_rank), n);
}

double max_orthonormality_error(const Matrix& m) {
    return (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff();
}

Tensor4 core_projection(const Tensor4& values, const std::array<Matrix, 4>& factors) {
    // contract the longest modes first to shrink intermediates early
    Tensor4 g = values;
    for (int mode : {1, 3, 2, 0}) g = g.mode_product(factors[mode].transpose(), mode);
    return g;
}

namespace {

Tensor4 apply_weights(const Tensor4& values, const Matrix& w) {
    Tensor4 out = values;
    const auto& d = values.dims();
    require(w.rows() == d[2] && w.cols() == d[3], ErrorCode::InvalidInput, "hosvd: weight shape mismatch");
    for (int s = 0; s < d[0]; ++s)
        for (int a = 0; a < d[1]; ++a)
            for (int c = 0; c < d[2]; ++c)
                for (int t = 0; t < d[3]; ++t) out(s, a, c, t) *= w(c, t);
    return out;
}

}  // namespace

TuckerModel hosvd(const Tensor4& values, const Matrix* weights, const RankPolicy& policy) {
    require(values.size() > 0, ErrorCode::InvalidInput, "hosvd: empty tensor");
    TuckerModel model;
    model.tau = policy.tau;
    model.weighted = weights != nullptr;
    const Tensor4 source = weights ? apply_weights(values, *weights) : values;
    for (int mode = 0; mode < 4; ++mode) {
        const Matrix unf = source.unfold(mode);
        if (!(unf.cwiseAbs().maxCoeff() > 0.0))
            fail(ErrorCode::DecompositionError, "hosvd: mode " + std::to_string(mode + 1) + " unfolding is all zero");
        const Svd svd = thin_svd(unf);
        const int r = select_rank(svd.s, policy.tau, std::min(policy.min_rank[mode], static_cast<int>(svd.s.size())),
                                  std::max(std::min(policy.max_rank[mode], static_cast<int>(svd.s.size())),
                                           std::min(policy.min_rank[mode], static_cast<int>(svd.s.size()))));
        Matrix u = svd.u.leftCols(r);
        // Rows of the unfolding that are exactly zero give exactly zero loadings
        // for every retained (nonzero) singular value.
        for (Eigen::Index i = 0; i < unf.rows(); ++i)
            if (unf.row(i).cwiseAbs().maxCoeff() == 0.0) u.row(i).setZero();
        fix_column_signs(u);
        model.factors[mode] = u;
        model.spectra[mode] = svd.s;
        model.ranks[mode] = r;
        const double total = svd.s.squaredNorm();
        model.variance_fraction[mode] = total > 0 ? svd.s.head(r).squaredNorm() / total : 1.0;
    }
    model.core = core_projection(values, model.factors);
    return model;
}

TuckerModel hosvd(const MortalityTensor& tensor, const RankPolicy& policy, bool weighting) {
    return hosvd(tensor.values, weighting ? &tensor.weights : nullptr, policy);
}

TuckerModel smooth_age_basis(const TuckerModel& model, const Tensor4& values, const AgeSmoothingSpec& spec) {
    TuckerModel out = model;
    Matrix a = model.A();
    const int n_ages = static_cast<int>(a.rows());
    for (int j = 1; j < a.cols(); ++j) {
        const auto& p = spec.params_for(j);
        Vector col = gaussian_smooth_varbw(a.col(j), p.x_ramp, p.s_min, p.sigma_max);
        for (int age : spec.preserved_ages)
            if (age >= 0 && age < n_ages) col[age] = a(age, j);
        a.col(j) = col;
    }
    if (max_orthonormality_error(a) > spec.tolerance) a = qr_orthonormalize(a);
    out.factors[1] = a;
    out.core = core_projection(values, out.factors);
    out.smoothing = spec;
    return out;
}

Matrix effective_core(const TuckerModel& model, int c, int t, const std::array<int, 4>* reduced) {
    const auto& d = model.core.dims();
    std::array<int, 4> r = d;
    if (reduced) {
        for (int m = 0; m < 4; ++m) {
            require((*reduced)[m] >= 1 && (*reduced)[m] <= d[m], ErrorCode::InvalidInput,
                    "effective_core: reduced rank out of range");
            r[m] = (*reduced)[m];
        }
    }
    require(c >= 0 && c < model.C().rows() && t >= 0 && t < model.T().rows(), ErrorCode::InvalidInput,
            "effective_core: cell out of range");
    Matrix g = Matrix::Zero(r[0], r[1]);
    const Matrix& C = model.C();
    const Matrix& T = model.T();
    for (int i = 0; i < r[0]; ++i)
        for (int j = 0; j < r[1]; ++j) {
            double acc = 0.0;
            for (int k = 0; k < r[2]; ++k) {
                double inner = 0.0;
                for (int l = 0; l < r[3]; ++l) inner += model.core(i, j, k, l) * T(t, l);
                acc += inner * C(c, k);
            }
            g(i, j) = acc;
        }
    return g;
}

Vector reconstruct_pair(const TuckerModel& model, int c, int t, const std::array<int, 4>* reduced) {
    const Matrix g = effective_core(model, c, t, reduced);
    const Matrix y = model.S().leftCols(g.rows()) * g * model.A().leftCols(g.cols()).transpose();  // 2 x ages
    Vector out(y.size());
    for (Eigen::Index s = 0; s < y.rows(); ++s) out.segment(s * y.cols(), y.cols()) = y.row(s).transpose();
    return out;
}

Vector reconstruct(const TuckerModel& model, int s, int c, int t, const std::array<int, 4>* reduced) {
    require(s >= 0 && s < model.S().rows(), ErrorCode::InvalidInput, "reconstruct: sex out of range");
    const Vector pair = reconstruct_pair(model, c, t, reduced);
    return pair.segment(s * model.ages(), model.ages());
}

void level_residual(const TuckerModel& model, int c, int t, Vector& level, Vector& residual) {
    const Matrix g = effective_core(model, c, t);
    const Matrix lvl = model.S() * g.col(0) * model.A().col(0).transpose();
    const Matrix res = model.S() * g.rightCols(g.cols() - 1) * model.A().rightCols(g.cols() - 1).transpose();
    const int n = model.ages();
    level.resize(2 * n);
    residual.resize(2 * n);
    for (int s = 0; s < 2; ++s) {
        level.segment(s * n, n) = lvl.row(s).transpose();
        residual.segment(s * n, n) = res.row(s).transpose();
    }
}

}  // namespace mdmx
