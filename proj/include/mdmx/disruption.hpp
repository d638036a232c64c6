#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdmx/data.hpp"
#include "mdmx/numerics/mlp.hpp"
#include "mdmx/numerics/smoothing.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

enum class BaselineMethod { Naive, Temporal, Penalized, Neural };

const char* baseline_name(BaselineMethod m);
BaselineMethod baseline_from_name(const std::string& name);

struct BaselineEstimate {
    BaselineMethod method = BaselineMethod::Naive;
    Vector y;            // 2A
    double alpha = 0.0;  // penalized only
    Matrix core;         // neural only: predicted r1 x r2 slice
};

// 2A x (r1 r2) orthonormal basis; column i*r2 + j is S[:,i] (x) A[:,j] with
// the female block first.
Matrix kron_basis(const TuckerModel& model);

BaselineEstimate baseline_naive(const TuckerModel& model, const Vector& y);

// support_years/values: non-exceptional reconstructions of one country.
BaselineEstimate baseline_temporal(const std::vector<int>& support_years, const Matrix& support_values, int year,
                                   LowessOptions opts = {});
BaselineEstimate baseline_temporal(const TuckerModel& model, const MortalityTensor& tensor, int c, int t,
                                   LowessOptions opts = {});

BaselineEstimate baseline_penalized(const TuckerModel& model, const Vector& y, const Vector& interp, double alpha);

struct NeuralCoreOptions {
    std::vector<int> hidden{128, 128};
    int epochs = 300;
    int batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

struct NeuralCore {
    Mlp net;
    Matrix country_loadings;  // C x r3
    int year_min = 0, year_max = 1;
    int r1 = 0, r2 = 0;
    TrainReport report;

    Vector year_features(int year) const;
    Vector input(int c, int year) const;
    Matrix predict_core(int c, int year) const;
};

Vector year_features(double year, double year_min, double year_max);

// Direct projection target S' M_ct A.
Matrix projected_core(const TuckerModel& model, const Vector& y);
Vector schedule_from_core(const TuckerModel& model, const Matrix& g);

NeuralCore train_neural_core(const TuckerModel& model, const MortalityTensor& tensor, const NeuralCoreOptions& opts = {});
BaselineEstimate baseline_neural(const NeuralCore& core, const TuckerModel& model, int c, int year);

Vector residual(const Vector& y_obs, const Vector& baseline);

// ---- profiles -----------------------------------------------------------

struct ProfileSmoothing {
    int window = 11;
    int degree = 3;
};

// Unit-normalise, smooth each sex half, renormalise.
Vector smooth_profile(const Vector& v, int ages, const ProfileSmoothing& sg = {});

struct DisruptionProfile {
    int type = 0;
    int n_events = 0;
    Vector raw;       // unit
    Vector smoothed;  // unit
    double cosine = 0.0;
};

DisruptionProfile estimate_profile(int type, const Matrix& residuals, int ages, const ProfileSmoothing& sg = {});

struct Intensity {
    double lambda = 0.0;  // signed projection
    Vector remainder;     // r - lambda * delta
    double r2 = 0.0;      // lambda^2 / |r|^2
    double orth_norm = 0.0;
};

Intensity estimate_intensity(const Vector& r, const Vector& delta);

// Fraction of |r|^2 captured by the span of the given directions.
double span_r2(const Vector& r, const std::vector<Vector>& directions);

// ---- sub-clustering -----------------------------------------------------

struct SubClusterOptions {
    int k_min = 2;
    int k_max = 7;
    int min_size = 5;
    double pca_fraction = 0.90;
    int pca_min = 10;
    int pca_max = 20;
    ProfileSmoothing sg{};
    std::vector<int> embed_hidden{64, 64};
    int embed_epochs = 3000;
    double embed_lr = 1e-3;
    std::uint64_t seed = 0;
};

struct SubClustering {
    int type = 0;
    int k = 0;
    std::vector<int> labels;
    std::vector<std::pair<int, double>> silhouettes;  // (K, score) for admissible K
    std::vector<Vector> raw_profiles;
    std::vector<Vector> profiles;  // smoothed, unit, sign-fixed
    Matrix embeddings;             // k x min(k, 4)
    Mlp net;

    Vector predict_profile(const Vector& embedding) const;
};

SubClustering subcluster(int type, const Matrix& residuals, int ages, const SubClusterOptions& opts = {});

// ---- full model ---------------------------------------------------------

Vector overlay(const Vector& baseline, double lambda, const Vector& delta);

struct EventRecord {
    int c = 0, t = 0, type = 0;
    int subcluster = -1;
    double lambda = 0.0;
    double r2 = 0.0;
    double orth_norm = 0.0;
    double r2_sub = 0.0;  // projection onto the span of the type's sub-profiles
    Vector baseline;
    Vector residual;
};

struct DisruptionOptions {
    BaselineMethod method = BaselineMethod::Neural;
    double penalty = 1.0;
    NeuralCoreOptions neural{};
    ProfileSmoothing sg{};
    SubClusterOptions sub{};
    LowessOptions temporal{0.3, 1};
};

struct DisruptionModel {
    BaselineMethod method = BaselineMethod::Neural;
    int ages = kDefaultAges;
    std::map<int, DisruptionProfile> profiles;
    std::map<int, SubClustering> subclusters;
    std::vector<EventRecord> events;
    std::vector<std::string> warnings;

    const Vector& profile(int type) const;
    const Vector& profile(int type, int sub) const;
    Vector full_model(const Vector& baseline, int type, double lambda, int sub = -1) const;
    Vector compose(const Vector& baseline, const std::vector<std::pair<int, double>>& terms) const;
};

DisruptionModel fit_disruptions(const TuckerModel& model, const MortalityTensor& tensor,
                                const ExceptionalSet& exceptional, const DisruptionOptions& opts = {},
                                const NeuralCore* core = nullptr);

}  // namespace mdmx
