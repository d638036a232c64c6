#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "fixtures.hpp"
#include "mdmx/error.hpp"
#include "mdmx/forecast.hpp"
#include "mdmx/numerics/random.hpp"

using namespace mdmx;

namespace {

constexpr int kAges = kDefaultAges;

struct Space {
    ReconMatrix recon;
    ScoreSpace space;
    Matrix cores;
};

// Reconstruction basis and score space from schedules along the synthetic
// transition path with independent adult variation.
const Space& fixture_space() {
    static const Space sp = [] {
        Rng rng(1);
        const int n = 400;
        Matrix z(n, 2 * kAges);
        for (int i = 0; i < n; ++i) {
            Vector s = testing::regime_schedule(0, rng.uniform(0.0, 1.6));
            const double v = 0.2 * rng.normal();
            for (int a = 15; a < 60; ++a) s[a] += 0.6 * v, s[kAges + a] += v;
            z.row(i) = s.transpose();
        }
        Matrix age_mode(kAges, 2 * n), sex_mode(2, kAges * n);
        for (int i = 0; i < n; ++i)
            for (int sex = 0; sex < 2; ++sex) {
                age_mode.col(2 * i + sex) = z.row(i).segment(sex * kAges, kAges).transpose();
                sex_mode.row(sex).segment(i * kAges, kAges) = z.row(i).segment(sex * kAges, kAges);
            }
        Eigen::JacobiSVD<Matrix> sa(age_mode, Eigen::ComputeThinU), ss(sex_mode, Eigen::ComputeThinU);
        Space out;
        out.recon = build_recon(ss.matrixU(), sa.matrixU().leftCols(8), 8);
        out.cores = z * out.recon.r;  // R has orthonormal columns
        out.space = fit_score_space(out.cores, out.recon, 5);
        return out;
    }();
    return sp;
}

KalmanSpec flat_spec(int m, double ql, double qd, double r, double rho) {
    KalmanSpec s;
    s.q_level = Vector::Constant(m, ql);
    s.q_drift = Vector::Constant(m, qd);
    s.r_obs = Vector::Constant(m, r);
    s.rho = rho;
    return s;
}

// Textbook dense filter used as the reference.
double dense_filter(const KalmanSpec& spec, const Vector& target, const Matrix& y, const std::vector<bool>& obs,
                    KalmanState& st) {
    const int m = spec.dim();
    Matrix f = Matrix::Zero(2 * m, 2 * m), h = Matrix::Zero(m, 2 * m);
    f.topLeftCorner(m, m).setIdentity();
    f.topRightCorner(m, m).setIdentity();
    f.bottomRightCorner(m, m) = spec.rho * Matrix::Identity(m, m);
    h.leftCols(m).setIdentity();
    Vector b = Vector::Zero(2 * m);
    b.tail(m) = (1.0 - spec.rho) * target;
    Matrix q = Matrix::Zero(2 * m, 2 * m);
    q.diagonal() << spec.q_level, spec.q_drift;
    const Matrix r = spec.r_obs.asDiagonal();
    st = initial_state(spec, y, obs, target);
    int i0 = 0;
    while (!obs[static_cast<std::size_t>(i0)]) ++i0;
    double ll = 0.0;
    for (Eigen::Index i = i0 + 1; i < y.rows(); ++i) {
        st.x = f * st.x + b;
        st.p = f * st.p * f.transpose() + q;
        if (!obs[static_cast<std::size_t>(i)]) continue;
        const Vector v = y.row(i).transpose() - h * st.x;
        const Matrix s = h * st.p * h.transpose() + r;
        const Matrix k = st.p * h.transpose() * s.inverse();
        st.x += k * v;
        st.p = (Matrix::Identity(2 * m, 2 * m) - k * h) * st.p;
        ll += -0.5 * (m * std::log(2 * std::numbers::pi) + std::log(s.determinant()) + v.dot(s.inverse() * v));
    }
    return ll;
}

Matrix simulate(const KalmanSpec& spec, const Vector& target, const Vector& l0, const Vector& d0, int n, Rng& rng) {
    const int m = spec.dim();
    Matrix y(n, m);
    Vector l = l0, d = d0;
    for (int t = 0; t < n; ++t) {
        for (int j = 0; j < m; ++j) y(t, j) = l[j] + std::sqrt(spec.r_obs[j]) * rng.normal();
        for (int j = 0; j < m; ++j) {
            const double nl = l[j] + d[j] + std::sqrt(spec.q_level[j]) * rng.normal();
            d[j] = spec.rho * d[j] + (1 - spec.rho) * target[j] + std::sqrt(spec.q_drift[j]) * rng.normal();
            l[j] = nl;
        }
    }
    return y;
}

ScoreSeries make_series(const std::string& pop, int first_year, const Matrix& s, const ScoreSpace& space) {
    ScoreSeries out;
    out.pop = pop;
    out.s = s;
    out.e0.resize(s.rows());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        out.years.push_back(first_year + static_cast<int>(i));
        out.observed.push_back(true);
        out.e0[i] = e0_of_scores(space, s.row(i).transpose());
    }
    return out;
}

}  // namespace

TEST_CASE("simplex grid at step 0.05 has 231 points") {
    const auto g = simplex_grid(0.05);
    CHECK(g.size() == 231);
    for (const auto& w : g) CHECK(w.hmd + w.cluster + w.country == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(simplex_grid(0.5).size() == 6);
    CHECK_THROWS_AS(simplex_grid(0.3), Error);
}

TEST_CASE("score space maps scores to schedules through the reconstruction matrix") {
    const Space& f = fixture_space();
    const ScoreSpace& sp = f.space;
    CHECK(sp.n_pc == 5);
    const Matrix& v = sp.pca.components;
    CHECK((v.transpose() * v - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    for (int j = 0; j < 5; ++j) CHECK((sp.l.col(j) - f.recon.r * v.col(j)).cwiseAbs().maxCoeff() < 1e-12);

    // planted cores in a five-dimensional affine span
    Rng rng(2);
    Matrix basis(f.cores.cols(), 5);
    for (int i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
    Matrix planted(300, f.cores.cols());
    const Vector centre = f.cores.colwise().mean().transpose();
    for (int i = 0; i < 300; ++i) {
        Vector c(5);
        for (int j = 0; j < 5; ++j) c[j] = rng.normal() * (5 - j);
        planted.row(i) = (centre + basis * c).transpose();
    }
    const ScoreSpace ps = fit_score_space(planted, f.recon, 5);
    CHECK(ps.pca.explained_ratio.sum() >= 0.999);
    for (int k = 0; k < 20; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.index(300));
        const Vector g = planted.row(i).transpose();
        CHECK((ps.schedule(ps.scores(g)) - f.recon.r * g).cwiseAbs().maxCoeff() < 1e-10);
    }
    // one factor
    Matrix one(100, f.cores.cols());
    for (int i = 0; i < 100; ++i) one.row(i) = (centre + rng.normal() * basis.col(0)).transpose();
    const ScoreSpace s1 = fit_score_space(one, f.recon, 1);
    CHECK(s1.pca.explained_ratio[0] >= 1.0 - 1e-10);

    // both sexes respond to every score
    for (int j = 0; j < 5; ++j) {
        CHECK(sp.l.col(j).head(kAges).norm() > 1e-6);
        CHECK(sp.l.col(j).tail(kAges).norm() > 1e-6);
    }
}

TEST_CASE("noiseless linear trend is tracked exactly") {
    const int n = 40;
    Matrix y(n, 2);
    const double a0 = 3.0, b0 = -0.4, a1 = -1.0, b1 = 0.25;
    for (int t = 0; t < n; ++t) y(t, 0) = a0 + b0 * t, y(t, 1) = a1 + b1 * t;
    const std::vector<bool> obs(n, true);
    const KalmanSpec spec = flat_spec(2, 0.0, 0.0, 1e-12, 1.0);
    const Vector target = Vector::Zero(2);
    const FilterResult fr = kalman_filter(spec, target, y, obs);
    CHECK(std::abs(fr.last().x[2] - b0) < 1e-6);
    CHECK(std::abs(fr.last().x[3] - b1) < 1e-6);
    const auto path = kalman_forecast(spec, target, fr.last(), 10);
    for (int h = 1; h <= 10; ++h) {
        CHECK(std::abs(path[h].x[0] - (a0 + b0 * (n - 1 + h))) < 1e-5);
        CHECK(std::abs(path[h].x[1] - (a1 + b1 * (n - 1 + h))) < 1e-5);
    }
    // forecast at h = 0 is the last filtered state
    CHECK((path[0].x - fr.last().x).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("damped drift reverts to the target geometrically") {
    KalmanState st;
    st.x = Vector(4);
    st.x << 1.0, 2.0, 0.5, -0.3;
    st.p = Matrix::Zero(4, 4);
    const double rho = 0.85;
    const KalmanSpec spec = flat_spec(2, 0.0, 0.0, 0.0, rho);
    Vector target(2);
    target << 0.1, 0.2;
    const auto path = kalman_forecast(spec, target, st, 25);
    for (int h = 0; h <= 25; ++h) {
        for (int j = 0; j < 2; ++j) {
            const double expect = std::pow(rho, h) * st.x[2 + j] + (1 - std::pow(rho, h)) * target[j];
            CHECK(std::abs(path[h].x[2 + j] - expect) < 1e-10);
        }
        const double gap0 = (st.x.tail(2) - target).norm();
        CHECK((path[h].x.tail(2) - target).norm() <= std::pow(rho, h) * gap0 + 1e-12);
        CHECK(path[h].p.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("one-step likelihood matches the Gaussian density") {
    Matrix y(2, 1);
    y << 1.0, 1.7;
    const std::vector<bool> obs{true, true};
    KalmanSpec spec = flat_spec(1, 0.3, 0.05, 0.2, 0.9);
    Vector target(1);
    target << 0.5;
    const FilterResult fr = kalman_filter(spec, target, y, obs);
    // prior: level y0 with var r, drift = target with var (y1 - y0)^2
    const double d2 = 0.7 * 0.7;
    const double mean = 1.0 + 0.5;
    const double var = 0.2 + d2 + 0.3 + 0.2;
    const double hand = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (1.7 - mean) * (1.7 - mean) / var;
    CHECK(fr.log_likelihood == doctest::Approx(hand).epsilon(1e-13));
    CHECK(fr.n_updates == 1);
}

TEST_CASE("block filter agrees with a dense reference filter") {
    Rng rng(3);
    KalmanSpec spec;
    spec.q_level = Vector(3);
    spec.q_drift = Vector(3);
    spec.r_obs = Vector(3);
    spec.q_level << 0.2, 0.05, 0.01;
    spec.q_drift << 0.01, 0.002, 0.001;
    spec.r_obs << 0.1, 0.3, 0.02;
    spec.rho = 0.9;
    Vector target(3);
    target << 0.3, -0.1, 0.05;
    const Matrix y = simulate(spec, target, Vector::Zero(3), target, 50, rng);
    std::vector<bool> obs(50, true);
    obs[0] = false;
    obs[7] = obs[8] = obs[30] = false;
    KalmanState dense;
    const double ll = dense_filter(spec, target, y, obs, dense);
    const FilterResult fr = kalman_filter(spec, target, y, obs);
    CHECK(std::abs(fr.log_likelihood - ll) < 1e-10);
    CHECK((fr.last().x - dense.x).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((fr.last().p - dense.p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(fr.filtered.size() == 49);
}

TEST_CASE("maximum likelihood does at least as well as the generating parameters") {
    Rng rng(4);
    KalmanSpec truth;
    truth.q_level = Vector(5);
    truth.q_drift = Vector(5);
    truth.r_obs = Vector(5);
    truth.q_level << 0.5, 0.2, 0.1, 0.05, 0.02;
    truth.q_drift << 0.01, 0.005, 0.002, 0.001, 0.001;
    truth.r_obs << 0.2, 0.1, 0.05, 0.02, 0.01;
    truth.rho = 0.9;
    Vector target(5);
    target << 0.5, -0.2, 0.1, 0.0, 0.05;
    const Matrix y = simulate(truth, target, Vector::Zero(5), target, 80, rng);
    const std::vector<bool> obs(80, true);
    const double ll_truth = kalman_filter(truth, target, y, obs).log_likelihood;
    const KalmanFit fit = fit_kalman_mle(y, obs, target);
    MESSAGE("LL fit " << fit.log_likelihood << " truth " << ll_truth << " rho " << fit.spec.rho);
    CHECK(fit.log_likelihood >= ll_truth - 1e-3);
    CHECK(fit.spec.rho >= 0.80);
    CHECK(fit.spec.rho <= 0.999);

    CHECK_THROWS_AS(fit_kalman_mle(y.topRows(29), std::vector<bool>(29, true), target), Error);
    try {
        fit_kalman_mle(y.topRows(29), std::vector<bool>(29, true), target);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
}

TEST_CASE("a sustained trend away from the target pushes damping to its bound") {
    Rng rng(5);
    Matrix y(60, 5);
    for (int t = 0; t < 60; ++t)
        for (int j = 0; j < 5; ++j) y(t, j) = (0.5 - 0.1 * j) * t + 0.05 * rng.normal();
    const KalmanFit fit = fit_kalman_mle(y, std::vector<bool>(60, true), Vector::Zero(5));
    MESSAGE("rho " << fit.spec.rho);
    CHECK(fit.spec.rho == doctest::Approx(0.999).epsilon(1e-9));
}

TEST_CASE("covariances are PSD and grow with the horizon") {
    const KalmanSpec spec = flat_spec(3, 0.1, 0.01, 0.05, 0.9);
    KalmanState st;
    st.x = Vector::Zero(6);
    st.p = 0.01 * Matrix::Identity(6, 6);
    const auto path = kalman_forecast(spec, Vector::Zero(3), st, 30);
    double prev = -1.0;
    for (const auto& s : path) {
        Eigen::LLT<Matrix> llt(s.p);
        CHECK(llt.info() == Eigen::Success);
        CHECK(s.p.trace() >= prev);
        prev = s.p.trace();
    }
}

TEST_CASE("delta method intervals") {
    const ScoreSpace& sp = fixture_space().space;
    const Vector s = sp.scores(fixture_space().cores.row(10).transpose());
    Rng rng(6);
    Matrix c(5, 5);
    for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
    const Matrix cov = 0.01 * c * c.transpose();
    // a linear functional of the schedule propagates exactly
    Vector w(2 * kAges);
    for (int i = 0; i < w.size(); ++i) w[i] = rng.normal();
    auto lin = [&](const Vector& x) { return w.dot(sp.schedule(x)); };
    const Vector lw = sp.l.transpose() * w;
    CHECK(std::abs(delta_sd(lin, s, cov) - std::sqrt(lw.dot(cov * lw))) < 1e-10);
    // zero covariance
    auto e0f = [&](const Vector& x) { return e0_of_scores(sp, x); };
    CHECK(delta_sd(e0f, s, Matrix::Zero(5, 5)) == 0.0);
}

TEST_CASE("Monte Carlo agrees with the delta method and the exact schedule covariance") {
    const Space& f = fixture_space();
    const ScoreSpace& sp = f.space;
    // a country drifting through the score space
    Rng rng(7);
    const KalmanSpec spec = flat_spec(5, 0.02, 0.0005, 0.01, 0.9);
    const Vector s0 = sp.scores(f.cores.row(0).transpose());
    Vector d0 = Vector::Zero(5);
    d0[0] = 0.05;
    const Matrix y = simulate(spec, d0, s0, d0, 50, rng);
    const ScoreSeries ser = make_series("AAA", 1950, y, sp);
    const CountryForecast cf = forecast_country(sp, ser, spec, d0, 15);
    const FilterResult fr = kalman_filter(spec, d0, ser.s, ser.observed);
    const auto sims = simulate_levels(spec, d0, fr.last(), 15, 1000, 11);
    // the covariance comparison needs more draws than the e0 spread to resolve 5%
    const auto big = simulate_levels(spec, d0, fr.last(), 15, 20000, 12);
    for (int h : {1, 5, 15}) {
        const HorizonForecast& hf = cf.horizons[static_cast<std::size_t>(h - 1)];
        const Matrix& lv = sims[static_cast<std::size_t>(h - 1)];
        std::vector<double> e;
        for (Eigen::Index i = 0; i < lv.rows(); ++i) e.push_back(e0_of_scores(sp, lv.row(i).transpose()));
        double m = 0, v = 0;
        for (double x : e) m += x;
        m /= static_cast<double>(e.size());
        for (double x : e) v += (x - m) * (x - m);
        const double mc_sd = std::sqrt(v / static_cast<double>(e.size() - 1));
        const double ratio = mc_sd / hf.e0_sd;
        MESSAGE("h " << h << " e0 " << hf.e0 << " delta sd " << hf.e0_sd << " ratio " << ratio);
        CHECK(ratio >= 0.9);
        CHECK(ratio <= 1.15);
        // schedule covariance
        const Matrix& bl = big[static_cast<std::size_t>(h - 1)];
        Matrix zs(bl.rows(), 2 * kAges);
        for (Eigen::Index i = 0; i < bl.rows(); ++i) zs.row(i) = sp.schedule(bl.row(i).transpose()).transpose();
        const Matrix centred = zs.rowwise() - zs.colwise().mean();
        const Matrix mc_cov = centred.transpose() * centred / static_cast<double>(zs.rows() - 1);
        const Matrix exact = sp.l * hf.level_cov * sp.l.transpose();
        const double rel = (mc_cov - exact).norm() / exact.norm();
        MESSAGE("schedule covariance relative Frobenius difference " << rel);
        CHECK(rel <= 0.05);
        CHECK(hf.z_sd.isApprox(exact.diagonal().cwiseSqrt(), 1e-12));
    }
}

TEST_CASE("calibration factor of standard normal z-scores is one") {
    Rng rng(8);
    std::vector<double> z(5000);
    for (double& v : z) v = rng.normal();
    const double k = calibration_kappa(z, 0.0);
    CHECK(std::abs(k - 1.0) <= 0.05);
    std::vector<double> narrow(z);
    for (double& v : narrow) v *= 0.5;
    CHECK(calibration_kappa(narrow) == 1.0);
    CHECK(calibration_kappa(narrow, 0.0) == doctest::Approx(0.5 * k));
}

TEST_CASE("drift components from the last twenty years") {
    const ScoreSpace& sp = fixture_space().space;
    Matrix a(50, 5), b(50, 5);
    for (int t = 0; t < 50; ++t)
        for (int j = 0; j < 5; ++j) a(t, j) = 0.1 * j + (t < 30 ? 1.0 : 0.5) * t, b(t, j) = -0.2 * t;
    ScoreSeries sa = make_series("AAA", 1950, a, sp), sb = make_series("BBB", 1950, b, sp);
    sa.cluster = 0;
    sb.cluster = 1;
    const Vector da = ols_drift(sa, 1999, 20);
    CHECK((da.array() - 0.5).abs().maxCoeff() < 1e-12);
    const DriftComponents dc = drift_components({sa, sb}, 1999, 20);
    CHECK((dc.hmd.array() - 0.15).abs().maxCoeff() < 1e-12);
    CHECK((dc.cluster[1].array() + 0.2).abs().maxCoeff() < 1e-12);
    const Vector t = drift_target(dc, 0, HierarchyWeights{});
    CHECK((t.array() - (0.8 * 0.15 + 0.2 * 0.5)).abs().maxCoeff() < 1e-12);
    // a country without two years in the window falls back to the pooled drift
    ScoreSeries sc = sa.until(1970);
    const DriftComponents dc2 = drift_components({sa, sb, sc}, 1999, 20);
    CHECK(dc2.country[2] == dc2.hmd);
}

TEST_CASE("rolling-origin CV on noiseless linear score paths") {
    const Space& f = fixture_space();
    const ScoreSpace& sp = f.space;
    std::vector<ScoreSeries> series;
    const Vector s0 = sp.scores(f.cores.row(3).transpose());
    Vector drift = Vector::Zero(5);
    drift[0] = -0.03;
    drift[1] = 0.005;
    for (int c = 0; c < 3; ++c) {
        Matrix y(70, 5);
        for (int t = 0; t < 70; ++t) y.row(t) = (s0 + 0.1 * c * Vector::Ones(5) + t * drift).transpose();
        series.push_back(make_series("C" + std::to_string(c), 1940, y, sp));
    }
    ForecastCvOptions opts;
    const ForecastCvResult r = rolling_cv(sp, series, opts);
    CHECK(r.origins == std::vector<int>{1970, 1980, 1990, 2000});
    MESSAGE("MAE " << r.overall.mae << " kappa " << r.kappa << " coverage " << r.calibrated.cover95);
    CHECK(r.overall.mae < 1e-4);
    CHECK(r.kappa >= 1.0);
    CHECK(r.calibrated.cover80 == 1.0);
    CHECK(r.calibrated.cover95 == 1.0);
    CHECK(r.overall.n == static_cast<int>(r.points.size()));
}

TEST_CASE("hierarchy search finds the shared drift and the single-country corner") {
    const Space& f = fixture_space();
    const ScoreSpace& sp = f.space;
    const Vector s0 = sp.scores(f.cores.row(3).transpose());
    Vector drift = Vector::Zero(5);
    drift[0] = -0.04;
    Rng rng(9);
    std::vector<ScoreSeries> series;
    for (int c = 0; c < 12; ++c) {
        // common drift; each country is observed with noise, so its own
        // twenty-year slope is a poor estimate of the shared one
        Matrix y(80, 5);
        for (int t = 0; t < 80; ++t) {
            y.row(t) = (s0 + t * drift).transpose();
            y(t, 0) += 0.3 * rng.normal();
        }
        series.push_back(make_series("C" + std::to_string(c), 1940, y, sp));
    }
    ForecastCvOptions opts;
    opts.origins = {1980, 1990, 2000};
    const HierarchySearch hs = hierarchy_search(sp, series, opts, 0.1);
    MESSAGE("best w " << hs.best.w.hmd << " " << hs.best.w.cluster << " " << hs.best.w.country << " mae " << hs.best.mae);
    CHECK(hs.table.size() == 66);
    CHECK(hs.best.w.hmd >= 0.8);

    const HierarchySearch one = hierarchy_search(sp, {series[0]}, opts, 0.1);
    CHECK(one.best.w.country == 1.0);
}
