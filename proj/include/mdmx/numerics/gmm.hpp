#pragma once

#include <cstdint>
#include <vector>

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

struct GmmOptions {
    int restarts = 5;
    int max_iter = 500;
    double tol = 1e-8;  // relative log-likelihood change
    std::uint64_t seed = 0;
};

struct Gmm {
    Vector weights;              // k
    std::vector<Vector> means;   // k x d
    std::vector<Matrix> covs;    // k x (d x d)
    double log_likelihood = 0.0;
    std::vector<double> ll_history;  // best restart
    int iterations = 0;
    bool converged = false;
    bool regularized = false;

    int k() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
    long n_parameters() const;
    double bic(std::size_t n) const;
    Matrix responsibilities(const Matrix& x) const;
    std::vector<int> predict(const Matrix& x) const;
    double score(const Matrix& x) const;  // total log-likelihood
};

// Full-covariance Gaussian mixture by EM with k-means++ seeding; keeps the
// restart with the highest log-likelihood. Rows of x are observations.
Gmm gmm_fit_em(const Matrix& x, int k, GmmOptions opts = {});

}  // namespace mdmx
