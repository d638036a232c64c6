#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdmx/data.hpp"
#include "mdmx/numerics/gmm.hpp"
#include "mdmx/numerics/pca.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

struct AgeStructureFeatures {
    std::vector<Cell> cells;  // observed cells, country-major
    Matrix f;                 // n x r1(r2-1): vec of G_ct without its first column, row-major
    Matrix level;             // n x r1: the removed first column
};

// Row-major vec of g[:, 1..].
Vector cell_feature(const Matrix& g);

AgeStructureFeatures extract_features(const TuckerModel& model, const MortalityTensor& tensor);

// Rebuilds the 2A schedule of a cell from its level column and feature vector.
Vector schedule_from_parts(const TuckerModel& model, const Vector& level, const Vector& feature);

struct ClusterOptions {
    int k_min = 2;
    int k_max = 15;
    double pca_fraction = 0.999;
    std::optional<int> k_override;
    GmmOptions gmm{};
};

struct BicEntry {
    int k = 0;
    double log_likelihood = 0.0;
    long n_parameters = 0;
    double bic = 0.0;
};

struct ClusterModel {
    Pca pca;
    Gmm gmm;
    int k = 0;
    std::vector<BicEntry> bic_table;
    std::vector<int> labels;   // per feature row
    std::vector<int> ward_labels;
    double ward_agreement = 0.0;
    IntMatrix cell_labels;     // C x T, -1 where unlabelled
    std::vector<int> country_labels;
    std::vector<int> year_labels;
};

double bic_value(double log_likelihood, long n_parameters, std::size_t n);
long gmm_free_parameters(int k, int d);

ClusterModel fit_clusters(const AgeStructureFeatures& features, const ClusterOptions& opts = {});
// Fills cell, country and year labels for the given tensor shape.
void attach_cell_labels(ClusterModel& model, const AgeStructureFeatures& features, int n_pop, int n_year);

// Plurality vote; ties go to the lowest label. Entries < 0 are ignored; all
// ignored gives -1.
int plurality(const std::vector<int>& labels);
void derive_country_year_labels(const IntMatrix& cell_labels, std::vector<int>& country, std::vector<int>& year);

// ---- epochs -------------------------------------------------------------

enum class Epoch { RapidImprovement, SlowImprovement, Stagnation, SlowWorsening, RapidWorsening, Unassigned };

const char* epoch_name(Epoch e);

struct EpochParams {
    int window = 15;
    double delta = 0.05;
    double delta_rapid = 0.20;
    double lowess_frac = 0.3;
};

Epoch classify_slope(double slope, const EpochParams& p);

// Most-voted category (votes indexed by Epoch value). Ties go to the more
// severe category, then to worsening. No votes gives Unassigned.
Epoch modal_epoch(const std::array<int, 5>& votes);

struct EpochSeries {
    std::vector<int> years;  // every calendar year in the observed range
    std::vector<double> smoothed;
    std::vector<double> window_slopes;  // one per complete window, by start year
    std::vector<Epoch> category;        // per entry of `years`
};

// years/level: observed non-exceptional points of one country.
EpochSeries classify_epochs(const std::vector<int>& years, const std::vector<double>& level, const EpochParams& p = {});

struct EpochCalendar {
    EpochParams params;
    std::vector<std::vector<Epoch>> category;  // [country][tensor year index]
};

EpochCalendar epoch_calendar(const AgeStructureFeatures& features, const MortalityTensor& tensor,
                             const EpochParams& p = {});

}  // namespace mdmx
