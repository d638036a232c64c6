#pragma once

#include <functional>

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

// Brent's root finder on a sign-changing bracket. Throws BracketError when
// f(lo) and f(hi) share a sign.
double brent_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol = 1e-12, int max_iter = 200);

struct MinimizeOptions {
    int max_iter = 500;
    double gtol = 1e-7;     // projected-gradient infinity norm
    double ftol = 1e-12;    // relative decrease over one iteration
    double fd_step = 1e-5;  // central differences use fd_step * max(1, |x|)
};

struct MinimizeResult {
    Vector x;
    double f = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

// Projected quasi-Newton (BFGS on the free variables) under box constraints,
// with gradients from central differences.
MinimizeResult bounded_minimize(const std::function<double(const Vector&)>& f, Vector x0,
                                const Vector& lower, const Vector& upper,
                                MinimizeOptions opts = {});

}  // namespace mdmx
