#include "mdmx/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <climits>

#include "mdmx/error.hpp"
#include "mdmx/lifetable.hpp"
#include "mdmx/numerics/random.hpp"
#include "mdmx/parallel.hpp"

namespace mdmx {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

// ---- score space --------------------------------------------------------

Vector ScoreSpace::scores(const Vector& vec_g) const { return pca.transform_one(vec_g); }

Vector ScoreSpace::schedule(const Vector& s) const { return z_mean + l * s; }

ScoreSpace fit_score_space(const Matrix& vec_cores, const ReconMatrix& recon, int n_pc) {
    require(vec_cores.cols() == recon.r.cols(), ErrorCode::InvalidInput, "score space: core length mismatch");
    require(vec_cores.rows() >= 2, ErrorCode::InsufficientData, "score space: need at least two cells");
    const int k = std::min<int>(n_pc, static_cast<int>(std::min(vec_cores.cols(), vec_cores.rows() - 1)));
    require(k >= 1, ErrorCode::InvalidInput, "score space: n_pc must be positive");
    ScoreSpace sp;
    sp.pca = pca_fit(vec_cores, PcaTarget::components(k));
    sp.n_pc = sp.pca.dim();
    sp.l = recon.r * sp.pca.components;
    sp.z_mean = recon.r * sp.pca.mean;
    return sp;
}

namespace {

bool usable(const MortalityTensor& tensor, int c, int t) { return tensor.observed(c, t) == 1 && tensor.labels(c, t) == 0; }

}  // namespace

ScoreSpace fit_score_space(const TuckerModel& model, const MortalityTensor& tensor, int n_pc) {
    std::vector<Vector> rows;
    for (int c = 0; c < tensor.n_pop(); ++c)
        for (int t = 0; t < tensor.n_year(); ++t)
            if (usable(tensor, c, t)) rows.push_back(vec_core(effective_core(model, c, t)));
    require(!rows.empty(), ErrorCode::InsufficientData, "score space: no observed non-exceptional cells");
    Matrix g(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return fit_score_space(g, build_recon(model, model.ranks[1]), n_pc);
}

int ScoreSeries::n_observed() const { return static_cast<int>(std::count(observed.begin(), observed.end(), true)); }

int ScoreSeries::n_observed_until(int year) const {
    int n = 0;
    for (std::size_t i = 0; i < years.size(); ++i) n += observed[i] && years[i] <= year;
    return n;
}

ScoreSeries ScoreSeries::until(int year) const {
    ScoreSeries out;
    out.pop = pop;
    out.cluster = cluster;
    std::size_t n = 0;
    while (n < years.size() && years[n] <= year) ++n;
    out.years.assign(years.begin(), years.begin() + static_cast<long>(n));
    out.observed.assign(observed.begin(), observed.begin() + static_cast<long>(n));
    out.s = s.topRows(static_cast<Eigen::Index>(n));
    out.e0 = e0.head(static_cast<Eigen::Index>(n));
    return out;
}

std::vector<ScoreSeries> score_series(const ScoreSpace& space, const TuckerModel& model, const MortalityTensor& tensor,
                                      const std::vector<int>& country_clusters) {
    std::vector<ScoreSeries> out;
    for (int c = 0; c < tensor.n_pop(); ++c) {
        ScoreSeries ser;
        ser.pop = tensor.pops[static_cast<std::size_t>(c)];
        if (static_cast<std::size_t>(c) < country_clusters.size()) ser.cluster = country_clusters[static_cast<std::size_t>(c)];
        ser.years = tensor.years;
        const auto nt = static_cast<Eigen::Index>(tensor.years.size());
        ser.s = Matrix::Constant(nt, space.n_pc, kNaN);
        ser.e0 = Vector::Constant(nt, kNaN);
        ser.observed.assign(tensor.years.size(), false);
        for (int t = 0; t < tensor.n_year(); ++t) {
            if (!usable(tensor, c, t)) continue;
            ser.observed[static_cast<std::size_t>(t)] = true;
            ser.s.row(t) = space.scores(vec_core(effective_core(model, c, t))).transpose();
            ser.e0[t] = forward_e0(tensor.schedule(c, t));
        }
        out.push_back(std::move(ser));
    }
    return out;
}

// ---- Kalman filter --------------------------------------------------------
// Diagonal Q and R with a per-component DLLT make the state covariance block
// diagonal, so each component runs as an independent two-state filter.

namespace {

struct Block {
    double l = 0, d = 0;            // level, drift
    double p00 = 0, p01 = 0, p11 = 0;
};

void check_spec(const KalmanSpec& spec, Eigen::Index m) {
    require(spec.q_level.size() == m && spec.q_drift.size() == m && spec.r_obs.size() == m, ErrorCode::InvalidInput,
            "kalman: spec dimension does not match the observations");
}

void predict(Block& b, double rho, double target, double ql, double qd) {
    const double l = b.l + b.d;
    const double d = rho * b.d + (1.0 - rho) * target;
    // F P F' with F = [1 1; 0 rho]
    const double p00 = b.p00 + 2.0 * b.p01 + b.p11 + ql;
    const double p01 = rho * (b.p01 + b.p11);
    const double p11 = rho * rho * b.p11 + qd;
    b = {l, d, p00, p01, p11};
}

// returns the log-likelihood contribution
double update(Block& b, double y, double r) {
    double s = b.p00 + r;
    if (!(s > 0.0) || !std::isfinite(s)) {
        s = std::max(b.p00, 0.0) + std::max(r, 0.0) + 1e-12;
        require(s > 0.0 && std::isfinite(s), ErrorCode::DomainError, "kalman: innovation variance is not positive");
    }
    const double v = y - b.l;
    const double k0 = b.p00 / s, k1 = b.p01 / s;
    b.l += k0 * v;
    b.d += k1 * v;
    // Joseph form, (I - K H) P (I - K H)' + K r K'
    const double a = 1.0 - k0;
    const double p00 = a * a * b.p00 + k0 * k0 * r;
    const double p01 = a * (b.p01 - k1 * b.p00) + k0 * k1 * r;
    const double p11 = b.p11 - 2.0 * k1 * b.p01 + k1 * k1 * b.p00 + k1 * k1 * r;
    b.p00 = p00;
    b.p01 = p01;
    b.p11 = p11;
    return -0.5 * (std::log(2.0 * std::numbers::pi) + std::log(s) + v * v / s);
}

KalmanState assemble(const std::vector<Block>& blocks) {
    const auto m = static_cast<Eigen::Index>(blocks.size());
    KalmanState st;
    st.x = Vector::Zero(2 * m);
    st.p = Matrix::Zero(2 * m, 2 * m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Block& b = blocks[static_cast<std::size_t>(j)];
        st.x[j] = b.l;
        st.x[m + j] = b.d;
        st.p(j, j) = b.p00;
        st.p(j, m + j) = st.p(m + j, j) = b.p01;
        st.p(m + j, m + j) = b.p11;
    }
    return st;
}

std::vector<Block> split(const KalmanState& st) {
    const Eigen::Index m = st.x.size() / 2;
    std::vector<Block> blocks(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j)
        blocks[static_cast<std::size_t>(j)] = {st.x[j], st.x[m + j], st.p(j, j), st.p(j, m + j), st.p(m + j, m + j)};
    return blocks;
}

int first_observed(const std::vector<bool>& observed) {
    for (std::size_t i = 0; i < observed.size(); ++i)
        if (observed[i]) return static_cast<int>(i);
    return -1;
}

Vector mean_square_step(const Matrix& y, const std::vector<bool>& observed) {
    Vector acc = Vector::Zero(y.cols());
    int n = 0, prev = -1;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (!observed[i]) continue;
        if (prev >= 0) {
            const double gap = static_cast<double>(static_cast<int>(i) - prev);
            acc += ((y.row(static_cast<Eigen::Index>(i)) - y.row(prev)) / gap).cwiseAbs2().transpose();
            ++n;
        }
        prev = static_cast<int>(i);
    }
    if (n > 0) acc /= n;
    return acc.cwiseMax(1e-12);
}

}  // namespace

KalmanState initial_state(const KalmanSpec& spec, const Matrix& y, const std::vector<bool>& observed,
                          const Vector& drift_target) {
    check_spec(spec, y.cols());
    const int i0 = first_observed(observed);
    require(i0 >= 0, ErrorCode::InsufficientData, "kalman: no observed years");
    const Vector d2 = mean_square_step(y, observed);
    std::vector<Block> blocks(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        blocks[static_cast<std::size_t>(j)] = {y(i0, j), drift_target[j], spec.r_obs[j], 0.0, d2[j]};
    return assemble(blocks);
}

FilterResult kalman_filter(const KalmanSpec& spec, const Vector& drift_target, const Matrix& y,
                           const std::vector<bool>& observed, const KalmanState* init) {
    check_spec(spec, y.cols());
    require(static_cast<Eigen::Index>(observed.size()) == y.rows(), ErrorCode::InvalidInput, "kalman: mask length mismatch");
    require(drift_target.size() == y.cols(), ErrorCode::InvalidInput, "kalman: drift target dimension mismatch");
    FilterResult res;
    res.first = first_observed(observed);
    require(res.first >= 0, ErrorCode::InsufficientData, "kalman: no observed years");
    std::vector<Block> blocks = split(init ? *init : initial_state(spec, y, observed, drift_target));
    res.filtered.push_back(assemble(blocks));
    const Eigen::Index m = y.cols();
    for (Eigen::Index i = res.first + 1; i < y.rows(); ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            Block& b = blocks[static_cast<std::size_t>(j)];
            predict(b, spec.rho, drift_target[j], spec.q_level[j], spec.q_drift[j]);
            if (observed[static_cast<std::size_t>(i)]) res.log_likelihood += update(b, y(i, j), spec.r_obs[j]);
        }
        if (observed[static_cast<std::size_t>(i)]) ++res.n_updates;
        res.filtered.push_back(assemble(blocks));
    }
    return res;
}

std::vector<KalmanState> kalman_forecast(const KalmanSpec& spec, const Vector& drift_target, const KalmanState& last,
                                         int horizon) {
    check_spec(spec, last.x.size() / 2);
    std::vector<Block> blocks = split(last);
    std::vector<KalmanState> out{last};
    for (int h = 1; h <= horizon; ++h) {
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            predict(blocks[j], spec.rho, drift_target[jj], spec.q_level[jj], spec.q_drift[jj]);
        }
        out.push_back(assemble(blocks));
    }
    return out;
}

KalmanFit fit_kalman_mle(const Matrix& y, const std::vector<bool>& observed, const Vector& drift_target,
                         const MleOptions& opts) {
    const int n_obs = static_cast<int>(std::count(observed.begin(), observed.end(), true));
    require(n_obs >= opts.min_years, ErrorCode::InsufficientData,
            "kalman: " + std::to_string(n_obs) + " observed years, need at least " + std::to_string(opts.min_years));
    const Eigen::Index m = y.cols();
    const Vector scale = mean_square_step(y, observed);
    auto unpack = [&](const Vector& th) {
        KalmanSpec sp;
        sp.q_level = th.segment(0, m).array().exp();
        sp.q_drift = th.segment(m, m).array().exp();
        sp.r_obs = th.segment(2 * m, m).array().exp();
        sp.rho = th[3 * m];
        return sp;
    };
    Vector lo(3 * m + 1), hi(3 * m + 1), x0(3 * m + 1);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double ls = std::log(scale[j]);
        for (int b = 0; b < 3; ++b) {
            lo[b * m + j] = ls - 20.0;
            hi[b * m + j] = ls + 3.0;
        }
        x0[j] = ls + std::log(0.2);
        x0[m + j] = ls + std::log(0.02);
        x0[2 * m + j] = ls + std::log(0.2);
    }
    lo[3 * m] = opts.rho_min;
    hi[3 * m] = opts.rho_max;
    x0[3 * m] = std::clamp(0.9, opts.rho_min, opts.rho_max);
    auto objective = [&](const Vector& th) {
        try {
            const double ll = kalman_filter(unpack(th), drift_target, y, observed).log_likelihood;
            return std::isfinite(ll) ? -ll : 1e300;
        } catch (const Error&) {
            return 1e300;
        }
    };
    const MinimizeResult r = bounded_minimize(objective, x0, lo, hi, opts.minimize);
    require(r.f < 1e299, ErrorCode::OptimizationFailed, "kalman: likelihood could not be evaluated");
    KalmanFit fit;
    fit.spec = unpack(r.x);
    fit.spec.rho = std::clamp(fit.spec.rho, opts.rho_min, opts.rho_max);
    fit.log_likelihood = -r.f;
    fit.converged = r.converged;
    fit.iterations = r.iterations;
    return fit;
}

// ---- drift hierarchy ----------------------------------------------------

std::vector<HierarchyWeights> simplex_grid(double step) {
    const int n = static_cast<int>(std::lround(1.0 / step));
    require(n >= 1 && std::abs(n * step - 1.0) < 1e-9, ErrorCode::InvalidInput, "simplex_grid: step must divide 1");
    std::vector<HierarchyWeights> out;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; i + j <= n; ++j) out.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n, static_cast<double>(n - i - j) / n});
    return out;
}

Vector ols_drift(const ScoreSeries& series, int last_year, int window) {
    const auto m = series.s.cols();
    double sx = 0, sxx = 0;
    Vector sy = Vector::Zero(m), sxy = Vector::Zero(m);
    int n = 0;
    for (std::size_t i = 0; i < series.years.size(); ++i) {
        const int yr = series.years[i];
        if (!series.observed[i] || yr > last_year || yr <= last_year - window) continue;
        const double x = yr - last_year;
        const auto row = series.s.row(static_cast<Eigen::Index>(i)).transpose();
        sx += x;
        sxx += x * x;
        sy += row;
        sxy += x * row;
        ++n;
    }
    if (n < 2) return Vector::Constant(m, kNaN);
    const double den = n * sxx - sx * sx;
    return (n * sxy - sx * sy) / den;
}

DriftComponents drift_components(const std::vector<ScoreSeries>& series, int last_year, int window) {
    require(!series.empty(), ErrorCode::InsufficientData, "drift: no series");
    const auto m = series.front().s.cols();
    DriftComponents dc;
    std::vector<Vector> own;
    dc.hmd = Vector::Zero(m);
    int n = 0;
    std::map<int, std::pair<Vector, int>> by_cluster;
    for (const auto& s : series) {
        own.push_back(ols_drift(s, last_year, window));
        if (!own.back().allFinite()) continue;
        dc.hmd += own.back();
        ++n;
        auto& [sum, cnt] = by_cluster.try_emplace(s.cluster, Vector::Zero(m), 0).first->second;
        sum += own.back();
        ++cnt;
    }
    require(n > 0, ErrorCode::InsufficientData,
            "drift: no country has two observed years in the window ending " + std::to_string(last_year));
    dc.hmd /= n;
    for (std::size_t i = 0; i < series.size(); ++i) {
        dc.country.push_back(own[i].allFinite() ? own[i] : dc.hmd);
        const auto it = by_cluster.find(series[i].cluster);
        dc.cluster.push_back(series[i].cluster >= 0 && it != by_cluster.end() ? Vector(it->second.first / it->second.second) : dc.hmd);
    }
    return dc;
}

Vector drift_target(const DriftComponents& comps, std::size_t i, const HierarchyWeights& w) {
    return w.hmd * comps.hmd + w.cluster * comps.cluster[i] + w.country * comps.country[i];
}

// ---- forecasts ------------------------------------------------------------

double e0_of_scores(const ScoreSpace& space, const Vector& s) { return forward_e0(space.schedule(s)); }

Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& s, double step) {
    Vector g(s.size());
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        Vector a = s, b = s;
        a[j] += step;
        b[j] -= step;
        g[j] = (f(a) - f(b)) / (2.0 * step);
    }
    return g;
}

double delta_sd(const std::function<double(const Vector&)>& f, const Vector& s, const Matrix& cov, double step) {
    const Vector j = numeric_gradient(f, s, step);
    return std::sqrt(std::max(0.0, j.dot(cov * j)));
}

CountryForecast forecast_country(const ScoreSpace& space, const ScoreSeries& series, const KalmanSpec& spec,
                                 const Vector& target, int horizon) {
    CountryForecast cf;
    cf.pop = series.pop;
    cf.cluster = series.cluster;
    cf.spec = spec;
    cf.drift_target = target;
    cf.last_year = series.years.back();
    const FilterResult fr = kalman_filter(spec, target, series.s, series.observed);
    const auto path = kalman_forecast(spec, target, fr.last(), horizon);
    const int m = spec.dim();
    auto e0f = [&](const Vector& s) { return e0_of_scores(space, s); };
    for (int h = 1; h <= horizon; ++h) {
        const KalmanState& st = path[static_cast<std::size_t>(h)];
        HorizonForecast hf;
        hf.h = h;
        hf.year = cf.last_year + h;
        hf.level = st.x.head(m);
        hf.level_cov = st.p.topLeftCorner(m, m);
        hf.z = space.schedule(hf.level);
        hf.z_sd = (space.l * hf.level_cov * space.l.transpose()).diagonal().cwiseMax(0.0).cwiseSqrt();
        hf.e0 = e0f(hf.level);
        hf.e0_sd = delta_sd(e0f, hf.level, hf.level_cov);
        cf.horizons.push_back(std::move(hf));
    }
    return cf;
}

std::vector<Matrix> simulate_levels(const KalmanSpec& spec, const Vector& target, const KalmanState& last, int horizon,
                                    int n, std::uint64_t seed) {
    const int m = spec.dim();
    Rng rng(seed);
    std::vector<Matrix> out(static_cast<std::size_t>(horizon), Matrix(n, m));
    Eigen::LDLT<Matrix> ldlt(last.p);
    Matrix root = ldlt.transpositionsP().transpose() * Matrix(ldlt.matrixL()) *
                  ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    for (int i = 0; i < n; ++i) {
        Vector e(2 * m);
        for (int k = 0; k < 2 * m; ++k) e[k] = rng.normal();
        Vector x = last.x + root * e;
        for (int h = 1; h <= horizon; ++h) {
            Vector nx(2 * m);
            for (int j = 0; j < m; ++j) {
                nx[j] = x[j] + x[m + j] + std::sqrt(spec.q_level[j]) * rng.normal();
                nx[m + j] = spec.rho * x[m + j] + (1.0 - spec.rho) * target[j] + std::sqrt(spec.q_drift[j]) * rng.normal();
            }
            x = nx;
            out[static_cast<std::size_t>(h - 1)].row(i) = x.head(m).transpose();
        }
    }
    return out;
}

// ---- cross-validation ------------------------------------------------------

double calibration_kappa(const std::vector<double>& z, double floor) {
    if (z.size() < 2) return std::max(floor, 1.0);
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(z.size());
    double ss = 0.0;
    for (double v : z) ss += (v - mean) * (v - mean);
    return std::max(floor, std::sqrt(ss / static_cast<double>(z.size() - 1)));
}

std::vector<int> default_origins(const std::vector<ScoreSeries>& series, int min_train) {
    int lo = INT_MAX, hi = INT_MIN;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.years.size(); ++i)
            if (s.observed[i]) lo = std::min(lo, s.years[i]), hi = std::max(hi, s.years[i]);
    std::vector<int> out;
    if (lo > hi) return out;
    for (int o = (lo + min_train - 1 + 9) / 10 * 10; o < hi; o += 10) {
        bool ok = false;
        for (const auto& s : series) ok = ok || s.n_observed_until(o) >= min_train;
        if (ok) out.push_back(o);
    }
    return out;
}

namespace {

bool has_test_year(const ScoreSeries& s, int origin, int horizon) {
    for (std::size_t i = 0; i < s.years.size(); ++i)
        if (s.observed[i] && s.years[i] > origin && s.years[i] <= origin + horizon) return true;
    return false;
}

}  // namespace

std::vector<CvFit> prepare_cv(const std::vector<ScoreSeries>& series, const ForecastCvOptions& opts,
                              std::vector<int>* skipped) {
    const std::vector<int> origins = opts.origins.empty() ? default_origins(series, opts.min_train) : opts.origins;
    std::vector<CvFit> jobs;
    for (int o : origins) {
        std::vector<ScoreSeries> train;
        for (const auto& s : series) train.push_back(s.until(o));
        std::optional<DriftComponents> comps;
        try {
            comps = drift_components(train, o, opts.window);
        } catch (const Error&) {
        }
        bool any = false;
        for (std::size_t i = 0; comps && i < series.size(); ++i) {
            if (train[i].n_observed() < opts.min_train || !has_test_year(series[i], o, opts.horizon)) continue;
            CvFit f;
            f.series = i;
            f.origin = o;
            f.comps = *comps;
            jobs.push_back(std::move(f));
            any = true;
        }
        if (!any && skipped) skipped->push_back(o);
    }
    MleOptions mle = opts.mle;
    mle.min_years = opts.min_train;
    parallel_for(jobs.size(), [&](std::size_t k) {
        CvFit& f = jobs[k];
        const ScoreSeries tr = series[f.series].until(f.origin);
        f.spec = fit_kalman_mle(tr.s, tr.observed, drift_target(f.comps, f.series, opts.weights), mle).spec;
    });
    return jobs;
}

std::vector<CvPoint> evaluate_cv(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                                 const std::vector<CvFit>& fits, const HierarchyWeights& w, int horizon) {
    std::vector<std::vector<CvPoint>> per(fits.size());
    parallel_for(fits.size(), [&](std::size_t k) {
        const CvFit& f = fits[k];
        const ScoreSeries& full = series[f.series];
        const ScoreSeries tr = full.until(f.origin);
        const Vector target = drift_target(f.comps, f.series, w);
        const FilterResult fr = kalman_filter(f.spec, target, tr.s, tr.observed);
        // the training series may end before the origin; step forward to it
        const int gap = f.origin - tr.years.back();
        const auto path = kalman_forecast(f.spec, target, fr.last(), gap + horizon);
        const int m = f.spec.dim();
        auto e0f = [&](const Vector& s) { return e0_of_scores(space, s); };
        for (std::size_t i = 0; i < full.years.size(); ++i) {
            const int h = full.years[i] - f.origin;
            if (!full.observed[i] || h < 1 || h > horizon) continue;
            const KalmanState& st = path[static_cast<std::size_t>(gap + h)];
            const Vector lvl = st.x.head(m);
            CvPoint p;
            p.pop = full.pop;
            p.origin = f.origin;
            p.h = h;
            p.year = full.years[i];
            p.observed = full.e0[static_cast<Eigen::Index>(i)];
            p.forecast = e0f(lvl);
            p.sd = delta_sd(e0f, lvl, st.p.topLeftCorner(m, m));
            per[k].push_back(p);
        }
    });
    std::vector<CvPoint> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
}

namespace {

CvSummary summarize(const std::vector<const CvPoint*>& pts, double kappa) {
    CvSummary s;
    s.n = static_cast<int>(pts.size());
    if (pts.empty()) return s;
    int c80 = 0, c95 = 0;
    for (const CvPoint* p : pts) {
        const double e = p->forecast - p->observed;
        s.mae += std::abs(e);
        s.bias += e;
        c80 += std::abs(e) <= kZ80 * kappa * p->sd;
        c95 += std::abs(e) <= kZ95 * kappa * p->sd;
    }
    s.mae /= s.n;
    s.bias /= s.n;
    s.cover80 = static_cast<double>(c80) / s.n;
    s.cover95 = static_cast<double>(c95) / s.n;
    return s;
}

}  // namespace

ForecastCvResult summarize_cv(std::vector<CvPoint> points) {
    ForecastCvResult r;
    r.points = std::move(points);
    std::vector<double> z;
    for (const auto& p : r.points)
        if (p.sd > 0.0) z.push_back((p.observed - p.forecast) / p.sd);
    r.raw_kappa = calibration_kappa(z, 0.0);
    r.kappa = std::max(1.0, r.raw_kappa);
    std::vector<const CvPoint*> all;
    std::map<int, std::vector<const CvPoint*>> by_o, by_h;
    for (const auto& p : r.points) {
        all.push_back(&p);
        by_o[p.origin].push_back(&p);
        by_h[p.h].push_back(&p);
    }
    r.overall = summarize(all, 1.0);
    r.calibrated = summarize(all, r.kappa);
    for (const auto& [o, v] : by_o) {
        r.by_origin.push_back(summarize(v, r.kappa));
        r.by_origin.back().origin = o;
        r.origins.push_back(o);
    }
    for (const auto& [h, v] : by_h) {
        r.by_horizon.push_back(summarize(v, r.kappa));
        r.by_horizon.back().h = h;
    }
    return r;
}

ForecastCvResult rolling_cv(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                            const ForecastCvOptions& opts) {
    std::vector<int> skipped;
    std::vector<CvFit> fits = prepare_cv(series, opts, &skipped);
    ForecastCvResult r = summarize_cv(evaluate_cv(space, series, fits, opts.weights, opts.horizon));
    r.fits = std::move(fits);
    r.skipped_origins = std::move(skipped);
    return r;
}

HierarchySearch hierarchy_search(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                                 const ForecastCvOptions& opts, double step) {
    const std::vector<CvFit> fits = prepare_cv(series, opts);
    require(!fits.empty(), ErrorCode::InsufficientData, "hierarchy_search: no origin has enough training data");
    HierarchySearch hs;
    for (const auto& w : simplex_grid(step)) {
        const auto pts = evaluate_cv(space, series, fits, w, opts.horizon);
        double mae = 0.0;
        for (const auto& p : pts) mae += std::abs(p.forecast - p.observed);
        hs.table.push_back({w, pts.empty() ? 0.0 : mae / static_cast<double>(pts.size())});
    }
    hs.best = hs.table.front();
    for (const auto& p : hs.table)
        if (p.mae < hs.best.mae - 1e-12) {
            hs.best = p;
        } else if (std::abs(p.mae - hs.best.mae) <= 1e-12) {
            // ties: larger country weight, then larger pooled weight
            if (p.w.country > hs.best.w.country + 1e-12 ||
                (std::abs(p.w.country - hs.best.w.country) <= 1e-12 && p.w.hmd > hs.best.w.hmd))
                hs.best = p;
        }
    return hs;
}

ForecastBundle build_forecasts(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                               const HierarchyWeights& w, int horizon, double kappa, const MleOptions& mle, int window) {
    ForecastBundle b;
    b.weights = w;
    b.kappa = kappa;
    b.horizon = horizon;
    int last = INT_MIN;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.years.size(); ++i)
            if (s.observed[i]) last = std::max(last, s.years[i]);
    const DriftComponents comps = drift_components(series, last, window);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series[i].n_observed() >= mle.min_years)
            keep.push_back(i);
        else
            b.skipped.push_back(series[i].pop);
    }
    b.countries.resize(keep.size());
    parallel_for(keep.size(), [&](std::size_t k) {
        const std::size_t i = keep[k];
        const Vector target = drift_target(comps, i, w);
        KalmanFit fit;
        try {
            fit = fit_kalman_mle(series[i].s, series[i].observed, target, mle);
        } catch (const Error& e) {
            fail(e.code(), series[i].pop + ": " + e.what());
        }
        b.countries[k] = forecast_country(space, series[i], fit.spec, target, horizon);
    });
    return b;
}

}  // namespace mdmx
