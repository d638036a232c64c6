#pragma once

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

struct LowessOptions {
    double frac = 0.3;
    int iterations = 1;  // robustness passes after the initial fit
};

// Locally weighted linear regression with a tricube kernel. The fit is built
// at the sample points; evaluation at other points reuses the final
// robustness weights.
class Lowess {
public:
    Lowess(const Vector& x, const Vector& y, LowessOptions opts = {});

    double operator()(double q) const;
    Vector operator()(const Vector& q) const;
    Vector fitted() const;

    double x_min() const { return x_.front(); }
    double x_max() const { return x_.back(); }

private:
    std::vector<double> x_, y_, robust_;
    int span_;
};

// Smooths each column of `y` against `x` and evaluates at `queries`.
// Neighbourhoods are shared across columns; robustness weights are not.
Matrix lowess_columns(const Vector& x, const Matrix& y, const Vector& queries,
                      LowessOptions opts = {});

// Savitzky-Golay filter. Interior points get the centred polynomial fit; with
// preserve_edges the first and last window/2 entries are copied through,
// otherwise they are evaluated from the polynomial fitted to the edge window.
Vector savitzky_golay(const Vector& y, int window, int degree, bool preserve_edges);

// Gaussian smoothing over index positions with a width that ramps from
// sigma_max*s_min at index 0 to sigma_max at index x_ramp and beyond.
// Kernel weights are renormalised over the available indices.
Vector gaussian_smooth_varbw(const Vector& y, double x_ramp, double s_min, double sigma_max);

}  // namespace mdmx
