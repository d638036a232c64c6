#include "mdmx/numerics/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdmx/error.hpp"

namespace mdmx {
namespace {

struct Window {
    std::size_t lo = 0, hi = 0;  // [lo, hi) in sorted order
    std::vector<double> w;       // tricube weights for lo..hi-1
};

double tricube(double u) {
    if (u >= 1.0) return 0.0;
    const double t = 1.0 - u * u * u;
    return t * t * t;
}

Window neighbourhood(const std::vector<double>& xs, int span, double q) {
    const std::size_t n = xs.size();
    std::size_t right = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), q) - xs.begin());
    std::size_t left = right;  // window is [left, right)
    while (right - left < static_cast<std::size_t>(span)) {
        if (left == 0) {
            ++right;
        } else if (right == n) {
            --left;
        } else if (q - xs[left - 1] <= xs[right] - q) {
            --left;
        } else {
            ++right;
        }
    }
    double h = std::max(q - xs[left], xs[right - 1] - q);
    // pull in ties at the boundary distance
    while (left > 0 && q - xs[left - 1] <= h) --left;
    while (right < n && xs[right] - q <= h) ++right;
    Window win;
    win.lo = left;
    win.hi = right;
    win.w.resize(right - left);
    if (h <= 0.0) {
        std::fill(win.w.begin(), win.w.end(), 1.0);
        return win;
    }
    const double hh = h * (1.0 + 1e-10);
    for (std::size_t i = left; i < right; ++i) win.w[i - left] = tricube(std::abs(xs[i] - q) / hh);
    return win;
}

double local_fit(const std::vector<double>& xs, const double* ys, std::size_t ystride,
                 const double* robust, const Window& win, double q) {
    double sw = 0, swx = 0, swy = 0;
    for (std::size_t i = win.lo; i < win.hi; ++i) {
        const double w = win.w[i - win.lo] * (robust ? robust[i] : 1.0);
        sw += w;
        swx += w * xs[i];
        swy += w * ys[i * ystride];
    }
    if (!(sw > 0.0)) {
        // every neighbour was down-weighted to zero; fall back to the kernel alone
        return robust ? local_fit(xs, ys, ystride, nullptr, win, q) : ys[win.lo * ystride];
    }
    const double xbar = swx / sw, ybar = swy / sw;
    double sxx = 0, sxy = 0;
    for (std::size_t i = win.lo; i < win.hi; ++i) {
        const double w = win.w[i - win.lo] * (robust ? robust[i] : 1.0);
        const double dx = xs[i] - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * (ys[i * ystride] - ybar);
    }
    const double scale = xs.back() - xs.front();
    if (sxx <= 1e-12 * sw * std::max(scale * scale, 1e-300)) return ybar;
    return ybar + (sxy / sxx) * (q - xbar);
}

double median(std::vector<double> v) {
    const std::size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + m, v.end());
    double med = v[m];
    if (v.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(v.begin(), v.begin() + m));
    }
    return med;
}

void update_robustness(const std::vector<double>& resid, std::vector<double>& robust) {
    std::vector<double> a(resid.size());
    for (std::size_t i = 0; i < resid.size(); ++i) a[i] = std::abs(resid[i]);
    const double s = median(a);
    if (!(s > 0.0)) {
        std::fill(robust.begin(), robust.end(), 1.0);
        return;
    }
    for (std::size_t i = 0; i < resid.size(); ++i) {
        const double u = resid[i] / (6.0 * s);
        robust[i] = std::abs(u) < 1.0 ? (1 - u * u) * (1 - u * u) : 0.0;
    }
}

std::vector<std::size_t> sort_order(const Vector& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    return idx;
}

int span_for(double frac, std::size_t n) {
    int r = static_cast<int>(std::ceil(frac * static_cast<double>(n)));
    return std::clamp(r, std::min<int>(2, static_cast<int>(n)), static_cast<int>(n));
}

void check_inputs(const Vector& x, Eigen::Index ny, const LowessOptions& opts) {
    require(x.size() == ny, ErrorCode::InvalidInput, "lowess: x and y lengths differ");
    require(x.size() >= 2, ErrorCode::InsufficientData, "lowess: need at least 2 points");
    require(opts.frac > 0.0 && opts.frac <= 1.0, ErrorCode::InvalidInput, "lowess: frac must be in (0,1]");
    require(opts.iterations >= 0, ErrorCode::InvalidInput, "lowess: negative iteration count");
    require(x.allFinite(), ErrorCode::DomainError, "lowess: non-finite x");
}

}  // namespace

Lowess::Lowess(const Vector& x, const Vector& y, LowessOptions opts) {
    check_inputs(x, y.size(), opts);
    require(y.allFinite(), ErrorCode::DomainError, "lowess: non-finite y");
    const auto order = sort_order(x);
    const std::size_t n = order.size();
    x_.resize(n);
    y_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        x_[i] = x[order[i]];
        y_[i] = y[order[i]];
    }
    span_ = span_for(opts.frac, n);
    robust_.assign(n, 1.0);
    if (opts.iterations == 0) return;
    std::vector<Window> wins(n);
    for (std::size_t i = 0; i < n; ++i) wins[i] = neighbourhood(x_, span_, x_[i]);
    std::vector<double> resid(n);
    for (int it = 0; it < opts.iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i)
            resid[i] = y_[i] - local_fit(x_, y_.data(), 1, robust_.data(), wins[i], x_[i]);
        update_robustness(resid, robust_);
    }
}

double Lowess::operator()(double q) const {
    const Window win = neighbourhood(x_, span_, q);
    return local_fit(x_, y_.data(), 1, robust_.data(), win, q);
}

Vector Lowess::operator()(const Vector& q) const {
    Vector out(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) out[i] = (*this)(q[i]);
    return out;
}

Vector Lowess::fitted() const {
    Vector out(static_cast<Eigen::Index>(x_.size()));
    for (std::size_t i = 0; i < x_.size(); ++i) out[static_cast<Eigen::Index>(i)] = (*this)(x_[i]);
    return out;
}

Matrix lowess_columns(const Vector& x, const Matrix& y, const Vector& queries, LowessOptions opts) {
    check_inputs(x, y.rows(), opts);
    require(y.allFinite(), ErrorCode::DomainError, "lowess: non-finite y");
    const auto order = sort_order(x);
    const std::size_t n = order.size();
    const std::size_t m = static_cast<std::size_t>(y.cols());
    std::vector<double> xs(n);
    // row-major copy so each column is a strided view with a fixed stride
    std::vector<double> ys(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[order[i]];
        for (std::size_t j = 0; j < m; ++j) ys[i * m + j] = y(order[i], j);
    }
    const int span = span_for(opts.frac, n);
    std::vector<Window> sample_wins(n);
    if (opts.iterations > 0)
        for (std::size_t i = 0; i < n; ++i) sample_wins[i] = neighbourhood(xs, span, xs[i]);
    std::vector<Window> query_wins(static_cast<std::size_t>(queries.size()));
    for (Eigen::Index q = 0; q < queries.size(); ++q)
        query_wins[q] = neighbourhood(xs, span, queries[q]);

    Matrix out(queries.size(), y.cols());
    std::vector<double> robust(n), resid(n);
    for (std::size_t j = 0; j < m; ++j) {
        std::fill(robust.begin(), robust.end(), 1.0);
        const double* col = ys.data() + j;
        for (int it = 0; it < opts.iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i)
                resid[i] = col[i * m] - local_fit(xs, col, m, robust.data(), sample_wins[i], xs[i]);
            update_robustness(resid, robust);
        }
        for (Eigen::Index q = 0; q < queries.size(); ++q)
            out(q, static_cast<Eigen::Index>(j)) = local_fit(xs, col, m, robust.data(), query_wins[q], queries[q]);
    }
    return out;
}

Vector savitzky_golay(const Vector& y, int window, int degree, bool preserve_edges) {
    require(window > 0 && window % 2 == 1, ErrorCode::InvalidInput, "savitzky_golay: window must be odd");
    require(degree >= 0 && degree < window, ErrorCode::InvalidInput, "savitzky_golay: degree must be below window");
    require(y.size() >= window, ErrorCode::InvalidInput, "savitzky_golay: series shorter than window");
    const int h = window / 2;
    // Least-squares projector onto polynomials over offsets -h..h.
    Matrix vander(window, degree + 1);
    for (int i = 0; i < window; ++i) {
        double p = 1.0;
        for (int k = 0; k <= degree; ++k) {
            vander(i, k) = p;
            p *= static_cast<double>(i - h);
        }
    }
    const Matrix pinv = vander.completeOrthogonalDecomposition().pseudoInverse();  // (deg+1) x window
    const Vector centre = pinv.row(0).transpose();

    const Eigen::Index n = y.size();
    Vector out = y;
    for (Eigen::Index i = h; i < n - h; ++i) out[i] = centre.dot(y.segment(i - h, window));
    if (!preserve_edges) {
        const Vector head = pinv * y.head(window);
        const Vector tail = pinv * y.tail(window);
        for (int i = 0; i < h; ++i) {
            double a = 0, b = 0, p = 1, pt = 1;
            const double off = static_cast<double>(i - h);
            const double offt = static_cast<double>(i + 1);
            for (int k = 0; k <= degree; ++k) {
                a += head[k] * p;
                b += tail[k] * pt;
                p *= off;
                pt *= offt;
            }
            out[i] = a;
            out[n - h + i] = b;
        }
    }
    return out;
}

Vector gaussian_smooth_varbw(const Vector& y, double x_ramp, double s_min, double sigma_max) {
    require(x_ramp > 0.0, ErrorCode::InvalidInput, "gaussian_smooth_varbw: x_ramp must be positive");
    require(s_min > 0.0 && s_min <= 1.0, ErrorCode::InvalidInput, "gaussian_smooth_varbw: s_min must be in (0,1]");
    require(sigma_max >= 0.0, ErrorCode::InvalidInput, "gaussian_smooth_varbw: negative sigma_max");
    if (sigma_max == 0.0) return y;
    const Eigen::Index n = y.size();
    Vector out(n);
    for (Eigen::Index x = 0; x < n; ++x) {
        const double ramp = std::min(static_cast<double>(x) / x_ramp, 1.0);
        const double sigma = sigma_max * (s_min + (1.0 - s_min) * ramp);
        double sw = 0, swy = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = static_cast<double>(j - x);
            const double w = std::exp(-0.5 * d * d / (sigma * sigma));
            sw += w;
            swy += w * y[j];
        }
        out[x] = swy / sw;
    }
    return out;
}

}  // namespace mdmx
