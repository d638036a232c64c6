#include "mdmx/numerics/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdmx/error.hpp"
#include "mdmx/numerics/random.hpp"

namespace mdmx {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct Factor {
    Matrix l;  // lower Cholesky factor
    double logdet = 0.0;
};

// Cholesky with diagonal loading on failure. `reg` is the base ridge.
Factor factorize(Matrix& cov, double reg, bool& regularized) {
    for (int attempt = 0; attempt < 12; ++attempt) {
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() == Eigen::Success) {
            Factor f;
            f.l = llt.matrixL();
            f.logdet = 2.0 * f.l.diagonal().array().log().sum();
            if (std::isfinite(f.logdet)) return f;
        }
        cov.diagonal().array() += reg * std::pow(10.0, attempt);
        regularized = true;
    }
    fail(ErrorCode::DomainError, "gmm: covariance not positive definite after regularisation");
}

// log N(x | mu, Sigma) for every row
Vector log_density(const Matrix& x, const Vector& mu, const Factor& f) {
    const Matrix centered = (x.rowwise() - mu.transpose()).transpose();  // d x n
    const Matrix z = f.l.triangularView<Eigen::Lower>().solve(centered);
    const double d = static_cast<double>(mu.size());
    return (-0.5 * (d * kLog2Pi + f.logdet) - 0.5 * z.colwise().squaredNorm().array()).transpose();
}

struct State {
    Gmm model;
    std::vector<Factor> factors;
};

double e_step(const Matrix& x, State& st, Matrix& resp) {
    const int k = st.model.k();
    const Eigen::Index n = x.rows();
    resp.resize(n, k);
    for (int j = 0; j < k; ++j)
        resp.col(j) = log_density(x, st.model.means[j], st.factors[j]).array() + std::log(st.model.weights[j]);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = resp.row(i).maxCoeff();
        const double lse = m + std::log((resp.row(i).array() - m).exp().sum());
        resp.row(i) = (resp.row(i).array() - lse).exp();
        ll += lse;
    }
    return ll;
}

void m_step(const Matrix& x, const Matrix& resp, State& st, double reg, const Matrix& global_cov) {
    const int k = static_cast<int>(resp.cols());
    const double n = static_cast<double>(x.rows());
    for (int j = 0; j < k; ++j) {
        const double nk = resp.col(j).sum();
        if (nk < 1e-10) {
            // collapsed component: keep it alive with the global spread
            st.model.weights[j] = 1e-10;
            st.model.covs[j] = global_cov;
        } else {
            st.model.weights[j] = nk / n;
            st.model.means[j] = (x.transpose() * resp.col(j)) / nk;
            const Matrix c = x.rowwise() - st.model.means[j].transpose();
            st.model.covs[j] = (c.transpose() * resp.col(j).asDiagonal() * c) / nk;
        }
        st.factors[j] = factorize(st.model.covs[j], reg, st.model.regularized);
    }
    st.model.weights /= st.model.weights.sum();
}

std::vector<Vector> kmeanspp(const Matrix& x, int k, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Vector> centers;
    centers.push_back(x.row(static_cast<Eigen::Index>(rng.index(n))).transpose());
    Vector d2 = (x.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0) {
            double u = rng.uniform() * total;
            for (pick = 0; pick < n - 1; ++pick) {
                u -= d2[pick];
                if (u < 0) break;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.index(n));
        }
        centers.push_back(x.row(pick).transpose());
        d2 = d2.cwiseMin((x.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
    }
    return centers;
}

}  // namespace

long Gmm::n_parameters() const {
    const long kk = k(), d = dim();
    return kk - 1 + kk * d + kk * d * (d + 1) / 2;
}

double Gmm::bic(std::size_t n) const {
    return -2.0 * log_likelihood + static_cast<double>(n_parameters()) * std::log(static_cast<double>(n));
}

Matrix Gmm::responsibilities(const Matrix& x) const {
    State st{*this, {}};
    bool dummy = false;
    for (int j = 0; j < k(); ++j) {
        Matrix c = covs[j];
        st.factors.push_back(factorize(c, 1e-12, dummy));
    }
    Matrix resp;
    e_step(x, st, resp);
    return resp;
}

std::vector<int> Gmm::predict(const Matrix& x) const {
    const Matrix r = responsibilities(x);
    std::vector<int> labels(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index j;
        r.row(i).maxCoeff(&j);
        labels[i] = static_cast<int>(j);
    }
    return labels;
}

double Gmm::score(const Matrix& x) const {
    State st{*this, {}};
    bool dummy = false;
    for (int j = 0; j < k(); ++j) {
        Matrix c = covs[j];
        st.factors.push_back(factorize(c, 1e-12, dummy));
    }
    Matrix resp;
    return e_step(x, st, resp);
}

Gmm gmm_fit_em(const Matrix& x, int k, GmmOptions opts) {
    require(k >= 1, ErrorCode::InvalidInput, "gmm_fit_em: k must be positive");
    require(x.rows() >= k, ErrorCode::InsufficientData, "gmm_fit_em: fewer rows than components");
    require(x.allFinite(), ErrorCode::DomainError, "gmm_fit_em: non-finite input");
    require(opts.restarts >= 1, ErrorCode::InvalidInput, "gmm_fit_em: restarts must be positive");
    const Eigen::Index n = x.rows(), d = x.cols();
    const Vector mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - mean.transpose();
    const Matrix global_cov = centered.transpose() * centered / static_cast<double>(n);
    const double mean_var = global_cov.diagonal().mean();
    const double reg = 1e-6 * (mean_var > 0 ? mean_var : 1.0);

    Rng rng(opts.seed);
    Gmm best;
    best.log_likelihood = -std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (int r = 0; r < opts.restarts; ++r) {
        Rng local(rng.fork_seed());
        State st;
        st.model.weights = Vector::Constant(k, 1.0 / k);
        st.model.means.assign(k, Vector::Zero(d));
        st.model.covs.assign(k, global_cov);
        st.factors.resize(k);
        // Hard assignment to the seeded centres gives the first M-step.
        const auto centers = kmeanspp(x, k, local);
        Matrix resp = Matrix::Zero(n, k);
        for (Eigen::Index i = 0; i < n; ++i) {
            int bestj = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                const double dd = (x.row(i).transpose() - centers[j]).squaredNorm();
                if (dd < bd) {
                    bd = dd;
                    bestj = j;
                }
            }
            resp(i, bestj) = 1.0;
        }
        m_step(x, resp, st, reg, global_cov);
        double ll = e_step(x, st, resp);
        st.model.ll_history = {ll};
        for (int it = 0; it < opts.max_iter; ++it) {
            m_step(x, resp, st, reg, global_cov);
            const double next = e_step(x, st, resp);
            st.model.ll_history.push_back(next);
            st.model.iterations = it + 1;
            const bool done = std::abs(next - ll) <= opts.tol * std::max(1.0, std::abs(next));
            ll = next;
            if (done) {
                st.model.converged = true;
                break;
            }
        }
        st.model.log_likelihood = ll;
        if (!have_best || ll > best.log_likelihood) {
            best = st.model;
            have_best = true;
        }
    }
    return best;
}

}  // namespace mdmx
