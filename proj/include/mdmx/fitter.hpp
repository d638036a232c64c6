#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mdmx/trajectory.hpp"

namespace mdmx {

struct FitOptions {
    double sigma_lambda = 1.0;
    double gap_threshold = 0.0;
    int max_refine = 3;
    double refine_tol = 0.3;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Immutable per-grid quantities that do not depend on the schedule.
struct FitterCache {
    int n = 0;  // 2A
    std::vector<TrajectoryGrid> grids;
    std::array<Vector, 4> profiles;  // index by type; entry 0 unused
    std::array<bool, 4> has_profile{false, false, false, false};
    std::array<double, 4> dd{0, 0, 0, 0};
    std::vector<RowMatrix> z;  // per grid: node values, one row per node
    std::vector<RowMatrix> t;  // per grid: node tangents
    std::vector<Vector> tt;    // per grid: t't per node
    std::vector<Matrix> td;    // per grid: nodes x 4, t'delta_d

    int n_clusters() const { return static_cast<int>(grids.size()); }
};

FitterCache make_fitter_cache(const std::vector<TrajectoryGrid>& grids, const std::map<int, Vector>& profiles);

struct NodeFit {
    double delta = 0.0;   // e0 shift
    double lambda = 0.0;  // disruption coefficient (0 for the null model)
    double rss = 0.0;
    double bic = 0.0;
    bool ok = true;       // false when the 2x2 system was singular
};

// One linearised regression of r on [t] or [t | delta]; shared by every path.
NodeFit solve_node(const double* r, const double* t, const double* d, double tt, double td, double dd, int n);

// All nodes of one grid for hypothesis d (0 = null); batch path using the cache.
std::vector<NodeFit> stage1_grid(const FitterCache& cache, int grid, int d, const Vector& y);
// Reference implementation: recomputes every inner product per node.
std::vector<NodeFit> stage1_grid_scalar(const FitterCache& cache, int grid, int d, const Vector& y);

struct Stage1Best {
    int grid = 0;
    int node = 0;
    int d = 0;
    NodeFit fit;
    int skipped = 0;  // singular candidates
};

Stage1Best stage1(const FitterCache& cache, const Vector& y);

struct Refinement {
    double e0 = 0.0;
    int iterations = 0;
    double last_delta = 0.0;
    bool clamped = false;
};

Refinement stage2(const FitterCache& cache, int grid, int d, int start_node, double start_delta, const Vector& y,
                  const FitOptions& opts = {});

struct TypeEval {
    bool available = false;
    double e0 = 0.0;
    double lambda_raw = 0.0;  // projection before clamping
    double lambda = 0.0;      // clamped
    double rss0 = 0.0;        // null residual at the same e0
    double rss = 0.0;
    double info = 0.0;        // delta'delta / sigma^2
    double gap = 0.0;         // e0 - e0 of the null model
    Refinement refine;
};

double log_bayes_factor(int p, double rss0, double rss, double lambda, double info, double sigma_lambda);

struct FitResult {
    int grid = 0;
    int cluster = 0;
    double e0 = 0.0;
    int d = 0;
    double lambda = 0.0;
    std::array<double, 4> log_bf{0, 0, 0, 0};
    std::array<TypeEval, 4> types;  // 0 = null
    std::array<double, 3> multi{0, 0, 0};
    double gap = 0.0;
    Stage1Best stage1;
    int n = 0;
};

// Multi-disruption OLS of r on the available profiles; missing types get 0.
std::array<double, 3> multi_disruption(const Vector& r, const FitterCache& cache);

// Decision rule on stored values; used by the fit and by the CV sweep.
void decide(FitResult& fit, double sigma_lambda, double gap_threshold);

FitResult fit_schedule(const FitterCache& cache, const Vector& y, const FitOptions& opts = {});
std::vector<FitResult> fit_batch(const FitterCache& cache, const std::vector<Vector>& ys, const FitOptions& opts = {});

// ---- identifiability ----------------------------------------------------

struct IdentifiabilityEntry {
    int d = 0, cluster = 0, node = 0;
    double rho = 0.0;       // uncentred cosine between tangent and profile
    double fraction = 0.0;  // |delta_perp| / |delta|
};

struct IdentifiabilitySummary {
    int d = 0;
    double max_abs_rho = 0.0;
    double mean_abs_rho = 0.0;
    double min_fraction = 1.0;
    double mean_fraction = 0.0;
};

struct IdentifiabilityReport {
    std::vector<IdentifiabilityEntry> entries;
    std::vector<IdentifiabilitySummary> summary;
};

IdentifiabilityEntry identifiability_pair(const Vector& tangent, const Vector& delta);
IdentifiabilityReport identifiability(const FitterCache& cache);

// ---- planted corpus and cross-validation --------------------------------

struct PlantedSchedule {
    Vector y;
    int grid = 0;
    int cluster = 0;
    double e0 = 0.0;
    int d = 0;
    double lambda = 0.0;
};

struct CorpusOptions {
    int n = 500;
    double null_fraction = 0.0;
    double lambda_min = 1.5, lambda_max = 3.0;
    double noise_sd = 0.05;
    double margin = 2.0;  // keep planted e0 this far inside each grid
    std::uint64_t seed = 1;
};

std::vector<PlantedSchedule> planted_corpus(const FitterCache& cache, const CorpusOptions& opts);

struct CvOptions {
    int folds = 5;
    std::vector<double> sigma_grid{0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<double> gap_grid{0.0, 0.25, 0.5, 1.0, 2.0};
    double fp_budget = 0.05;     // false positives as a fraction of null schedules
    double strong_lambda = 1.0;
    std::uint64_t seed = 0;
};

struct Confusion {
    std::array<std::array<int, 4>, 4> counts{};  // [true d][predicted d]
    int total() const;
    double accuracy() const;
};

struct CvMetrics {
    double strong_accuracy = 0.0;  // correct type among strong positives
    double detection = 0.0;        // any d > 0 among strong positives
    double fp_rate = 0.0;          // d > 0 among nulls
    int false_positives = 0;
    Confusion all;
    Confusion strong;
};

CvMetrics evaluate_thresholds(const std::vector<FitResult>& fits, const std::vector<int>& true_d,
                              const std::vector<double>& true_lambda, const std::vector<std::size_t>& rows,
                              double sigma_lambda, double gap_threshold, double strong_lambda);

struct CvFold {
    double sigma_lambda = 0.0;
    double gap = 0.0;
    CvMetrics train;
    CvMetrics test;
};

struct CvResult {
    double sigma_lambda = 1.0;
    double gap = 0.0;
    std::vector<CvFold> folds;
    CvMetrics overall;
};

CvResult cv_sweep(const std::vector<FitResult>& fits, const std::vector<int>& true_d,
                  const std::vector<double>& true_lambda, const CvOptions& opts = {});

}  // namespace mdmx
