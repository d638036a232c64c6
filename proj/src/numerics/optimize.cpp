#include "mdmx/numerics/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdmx/error.hpp"

namespace mdmx {

double brent_root(const std::function<double(double)>& f, double lo, double hi, double tol, int max_iter) {
    double a = lo, b = hi;
    double fa = f(a), fb = f(b);
    require(std::isfinite(fa) && std::isfinite(fb), ErrorCode::DomainError, "brent_root: non-finite endpoint value");
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if ((fa > 0) == (fb > 0)) fail(ErrorCode::BracketError, "brent_root: endpoints do not bracket a root");
    double c = a, fc = fa, d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if ((fb > 0) == (fc > 0)) {
            c = a;
            fc = fa;
            d = e = b - a;
        }
        if (std::abs(fc) < std::abs(fb)) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        const double tol1 = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) + 0.5 * tol;
        const double xm = 0.5 * (c - b);
        if (std::abs(xm) <= tol1 || fb == 0.0) return b;
        if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
            double p, q, r;
            const double s = fb / fa;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                q = fa / fc;
                r = fb / fc;
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
                q = (q - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0) q = -q;
            p = std::abs(p);
            if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q), std::abs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += std::abs(d) > tol1 ? d : (xm > 0 ? tol1 : -tol1);
        fb = f(b);
        require(std::isfinite(fb), ErrorCode::DomainError, "brent_root: non-finite function value");
    }
    return b;
}

namespace {

Vector project(const Vector& x, const Vector& lo, const Vector& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

MinimizeResult bounded_minimize(const std::function<double(const Vector&)>& f, Vector x0,
                                const Vector& lower, const Vector& upper, MinimizeOptions opts) {
    const Eigen::Index n = x0.size();
    require(lower.size() == n && upper.size() == n, ErrorCode::InvalidInput, "bounded_minimize: bound size mismatch");
    require((lower.array() <= upper.array()).all(), ErrorCode::InvalidInput, "bounded_minimize: lower > upper");
    MinimizeResult res;
    auto eval = [&](const Vector& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    auto gradient = [&](const Vector& x) {
        Vector g(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double h = opts.fd_step * std::max(1.0, std::abs(x[i]));
            Vector xp = x, xm = x;
            xp[i] = std::min(x[i] + h, upper[i]);
            xm[i] = std::max(x[i] - h, lower[i]);
            const double span = xp[i] - xm[i];
            if (span <= 0) {
                g[i] = 0.0;
                continue;
            }
            const double fp = eval(xp), fm = eval(xm);
            g[i] = std::isfinite(fp) && std::isfinite(fm) ? (fp - fm) / span : 0.0;
        }
        return g;
    };

    Vector x = project(x0, lower, upper);
    double fx = eval(x);
    if (!std::isfinite(fx)) fail(ErrorCode::OptimizationFailed, "bounded_minimize: objective not finite at start");
    Vector g = gradient(x);
    Matrix hinv = Matrix::Identity(n, n);

    for (int it = 0; it < opts.max_iter; ++it) {
        res.iterations = it + 1;
        const Vector pg = project(x - g, lower, upper) - x;
        if (pg.lpNorm<Eigen::Infinity>() <= opts.gtol) {
            res.converged = true;
            break;
        }
        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        std::vector<char> free(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            if ((x[i] <= lower[i] && g[i] > 0) || (x[i] >= upper[i] && g[i] < 0)) free[i] = 0;
        }
        Vector d = -(hinv * g);
        for (Eigen::Index i = 0; i < n; ++i)
            if (!free[i]) d[i] = 0.0;
        double slope = g.dot(d);
        if (!(slope < 0)) {
            hinv.setIdentity();
            d = -g;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!free[i]) d[i] = 0.0;
            slope = g.dot(d);
            if (!(slope < 0)) {
                res.converged = true;
                break;
            }
        }
        double step = 1.0;
        Vector xn;
        double fn = fx;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = project(x + step * d, lower, upper);
            fn = eval(xn);
            if (fn <= fx + 1e-4 * g.dot(xn - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (hinv.isIdentity()) {
                res.converged = true;  // no further decrease available at this resolution
                break;
            }
            hinv.setIdentity();
            continue;
        }
        const Vector gn = gradient(xn);
        const Vector s = xn - x;
        const Vector y = gn - g;
        const double sy = s.dot(y);
        const double fprev = fx;
        x = xn;
        fx = fn;
        g = gn;
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Matrix ident = Matrix::Identity(n, n);
            hinv = (ident - rho * s * y.transpose()) * hinv * (ident - rho * y * s.transpose()) +
                   rho * s * s.transpose();
        }
        if (std::abs(fprev - fx) <= opts.ftol * std::max({1.0, std::abs(fx), std::abs(fprev)})) {
            res.converged = true;
            break;
        }
    }
    res.x = x;
    res.f = fx;
    return res;
}

}  // namespace mdmx
