#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mdmx/data.hpp"
#include "mdmx/numerics/optimize.hpp"
#include "mdmx/numerics/pca.hpp"
#include "mdmx/svdcomp.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

// ---- score space --------------------------------------------------------

struct ScoreSpace {
    Pca pca;         // over vec(G_ct), row-major
    Matrix l;        // 2A x n_pc: R * V
    Vector z_mean;   // R * g_bar
    int n_pc = 0;

    Vector scores(const Vector& vec_g) const;
    Vector schedule(const Vector& s) const;  // z_mean + L s
};

ScoreSpace fit_score_space(const Matrix& vec_cores, const ReconMatrix& recon, int n_pc = 5);
// observed, non-exceptional cells
ScoreSpace fit_score_space(const TuckerModel& model, const MortalityTensor& tensor, int n_pc = 5);

// One country on a contiguous year axis; unobserved or exceptional years are masked.
struct ScoreSeries {
    std::string pop;
    int cluster = -1;
    std::vector<int> years;
    Matrix s;                   // years x n_pc
    std::vector<bool> observed;
    Vector e0;                  // observed schedule e0, NaN where masked

    int n_observed() const;
    int n_observed_until(int year) const;
    ScoreSeries until(int year) const;  // years <= year
};

std::vector<ScoreSeries> score_series(const ScoreSpace& space, const TuckerModel& model, const MortalityTensor& tensor,
                                      const std::vector<int>& country_clusters = {});

// ---- damped local linear trend with a drift target ------------------------

struct KalmanSpec {
    Vector q_level, q_drift, r_obs;  // diagonal variances
    double rho = 0.9;

    int dim() const { return static_cast<int>(q_level.size()); }
};

struct KalmanState {
    Vector x;  // [level; drift]
    Matrix p;
};

struct FilterResult {
    std::vector<KalmanState> filtered;  // one per year from the first observation on
    int first = 0;                      // index of the first observed year
    double log_likelihood = 0.0;
    int n_updates = 0;

    const KalmanState& last() const { return filtered.back(); }
};

// Level starts at the first observation with variance r_obs, drift at the
// target with variance equal to the mean squared first difference.
KalmanState initial_state(const KalmanSpec& spec, const Matrix& y, const std::vector<bool>& observed,
                          const Vector& drift_target);

// Filters every year from the first observation to the end of y; masked years
// are predict-only. The first observation initialises the state and does not
// enter the likelihood.
FilterResult kalman_filter(const KalmanSpec& spec, const Vector& drift_target, const Matrix& y,
                           const std::vector<bool>& observed, const KalmanState* init = nullptr);

// x_h, P_h for h = 0..horizon, with x_0 = last.
std::vector<KalmanState> kalman_forecast(const KalmanSpec& spec, const Vector& drift_target, const KalmanState& last,
                                         int horizon);

struct MleOptions {
    double rho_min = 0.80, rho_max = 0.999;
    int min_years = 30;
    MinimizeOptions minimize{200, 1e-6, 1e-10, 1e-5};
};

struct KalmanFit {
    KalmanSpec spec;
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
};

KalmanFit fit_kalman_mle(const Matrix& y, const std::vector<bool>& observed, const Vector& drift_target,
                         const MleOptions& opts = {});

// ---- drift hierarchy ----------------------------------------------------

struct HierarchyWeights {
    double hmd = 0.80, cluster = 0.0, country = 0.20;
};

std::vector<HierarchyWeights> simplex_grid(double step = 0.05);

// OLS slope of each score over observed years in (last_year - window, last_year];
// NaN when fewer than two such years.
Vector ols_drift(const ScoreSeries& series, int last_year, int window = 20);

struct DriftComponents {
    Vector hmd;
    std::vector<Vector> cluster;  // per series
    std::vector<Vector> country;  // per series, falls back to hmd
};

DriftComponents drift_components(const std::vector<ScoreSeries>& series, int last_year, int window = 20);
Vector drift_target(const DriftComponents& comps, std::size_t i, const HierarchyWeights& w);

// ---- forecasts and intervals ---------------------------------------------

double e0_of_scores(const ScoreSpace& space, const Vector& s);
Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& s, double step = 1e-4);
double delta_sd(const std::function<double(const Vector&)>& f, const Vector& s, const Matrix& cov, double step = 1e-4);

struct HorizonForecast {
    int h = 0;
    int year = 0;
    Vector level;
    Matrix level_cov;
    Vector z;
    Vector z_sd;  // sqrt diag of L Cov L'
    double e0 = 0.0;
    double e0_sd = 0.0;
};

struct CountryForecast {
    std::string pop;
    int cluster = -1;
    KalmanSpec spec;
    Vector drift_target;
    int last_year = 0;
    std::vector<HorizonForecast> horizons;  // h = 1..H
};

constexpr double kZ80 = 1.2815515655446004;
constexpr double kZ95 = 1.959963984540054;

CountryForecast forecast_country(const ScoreSpace& space, const ScoreSeries& series, const KalmanSpec& spec,
                                 const Vector& drift_target, int horizon);

// Score levels at each horizon for n simulated paths started from N(x, P).
std::vector<Matrix> simulate_levels(const KalmanSpec& spec, const Vector& drift_target, const KalmanState& last,
                                    int horizon, int n, std::uint64_t seed);

// ---- rolling-origin cross-validation -------------------------------------

double calibration_kappa(const std::vector<double>& z, double floor = 1.0);

struct ForecastCvOptions {
    std::vector<int> origins;  // empty: every decade year with enough data
    int horizon = 15;
    int min_train = 30;
    int window = 20;
    HierarchyWeights weights;
    MleOptions mle;
};

struct CvFit {
    std::size_t series = 0;
    int origin = 0;
    KalmanSpec spec;
    DriftComponents comps;  // shared per origin, copied for independence
};

struct CvPoint {
    std::string pop;
    int origin = 0, h = 0, year = 0;
    double observed = 0.0, forecast = 0.0, sd = 0.0;
};

struct CvSummary {
    int origin = 0;  // 0 for all origins
    int h = 0;       // 0 for all horizons
    int n = 0;
    double mae = 0.0, bias = 0.0, cover80 = 0.0, cover95 = 0.0;
};

struct ForecastCvResult {
    std::vector<CvPoint> points;
    std::vector<CvFit> fits;
    std::vector<int> origins, skipped_origins;
    double kappa = 1.0;      // floored
    double raw_kappa = 0.0;  // SD of z-scores
    CvSummary overall;       // raw intervals
    CvSummary calibrated;    // intervals widened by kappa
    std::vector<CvSummary> by_origin, by_horizon;
};

std::vector<int> default_origins(const std::vector<ScoreSeries>& series, int min_train);

// Fits one Kalman model per (origin, country) with the weights in opts.
std::vector<CvFit> prepare_cv(const std::vector<ScoreSeries>& series, const ForecastCvOptions& opts,
                              std::vector<int>* skipped = nullptr);
std::vector<CvPoint> evaluate_cv(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                                 const std::vector<CvFit>& fits, const HierarchyWeights& w, int horizon);
ForecastCvResult summarize_cv(std::vector<CvPoint> points);
ForecastCvResult rolling_cv(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                            const ForecastCvOptions& opts = {});

struct HierarchyPoint {
    HierarchyWeights w;
    double mae = 0.0;
};

struct HierarchySearch {
    std::vector<HierarchyPoint> table;  // simplex order
    HierarchyPoint best;                // ties: larger country weight, then larger pooled weight
};

// Kalman hyperparameters from the opts weights are reused at every simplex point.
HierarchySearch hierarchy_search(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                                 const ForecastCvOptions& opts = {}, double step = 0.05);

// ---- production forecasts ------------------------------------------------

struct ForecastBundle {
    HierarchyWeights weights;
    double kappa = 1.0;
    int horizon = 0;
    std::vector<CountryForecast> countries;
    std::vector<std::string> skipped;  // too few observed years
};

ForecastBundle build_forecasts(const ScoreSpace& space, const std::vector<ScoreSeries>& series,
                               const HierarchyWeights& w, int horizon, double kappa, const MleOptions& mle = {},
                               int window = 20);

}  // namespace mdmx
