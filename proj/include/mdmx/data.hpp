#pragma once

#include <compare>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mdmx/lifetable.hpp"
#include "mdmx/tensor.hpp"

namespace mdmx {

enum Sex : int { kFemale = 0, kMale = 1 };

struct TableKey {
    std::string pop;
    int sex = kFemale;
    int year = 0;
    auto operator<=>(const TableKey&) const = default;
};

struct AgeTable {
    Vector mx, qx, ax;
    Vector deaths, exposure;
    bool has_counts = false;
    bool incomplete = false;  // some required value was missing
};

struct RawSeries {
    int ages = kDefaultAges;
    std::map<TableKey, AgeTable> tables;

    std::set<std::string> populations() const;
};

// ---- ingest -------------------------------------------------------------

RawSeries ingest_lifetables(const std::vector<std::string>& paths, int ages = kDefaultAges);
void attach_counts(RawSeries& raw, const std::vector<std::string>& paths);
RawSeries ingest(const std::vector<std::string>& lifetable_paths, const std::vector<std::string>& count_paths,
                 int ages = kDefaultAges);

void write_lifetable_csv(const RawSeries& raw, const std::string& path);
void write_counts_csv(const RawSeries& raw, const std::string& path);

// ---- curation -----------------------------------------------------------

struct CurationConfig {
    int flat_age_a = 105;
    int flat_age_b = 109;
    std::vector<std::string> excluded_pops{"FRACNP", "GBRCENW"};
};

struct CurationEntry {
    TableKey key;
    std::string reason;
};

struct CurationReport {
    std::vector<CurationEntry> dropped;
};

RawSeries curate(const RawSeries& raw, const CurationConfig& cfg, CurationReport* report = nullptr);

// ---- exceptional years --------------------------------------------------

enum Disruption : int { kNone = 0, kWar = 1, kRespiratory = 2, kEnteric = 3 };

const char* disruption_name(int d);
int disruption_from_name(const std::string& name);

struct EventEntry {
    std::string name;
    int type = kWar;
    bool all_countries = false;
    std::vector<std::string> countries;
    int first_year = 0, last_year = 0;
    std::map<std::string, std::vector<int>> peaks;
};

struct EventDictionary {
    int version = 1;
    std::vector<EventEntry> events;
};

EventDictionary load_events(const std::string& path);
EventDictionary parse_events(const std::string& json_text);
std::string default_events_path();

using YearLabels = std::map<std::pair<std::string, int>, int>;  // (pop, year) -> d, nonzero only

struct LabelReport {
    std::vector<std::string> unresolved;  // dictionary codes absent from the data
};

int event_label(const EventDictionary& dict, const std::string& pop, int year);
YearLabels label_exceptional(const RawSeries& raw, const EventDictionary& dict, LabelReport* report = nullptr);

// ---- pooling ------------------------------------------------------------

struct PoolingConfig {
    double q_thresh = 0.005;
};

struct PoolBlock {
    std::string pop;
    int sex = kFemale;
    std::vector<int> years;
    bool exceptional = false;
    bool resolved = true;  // pooled mx nonzero at every valley age
};

struct PoolingReport {
    std::vector<int> valley_ages;
    std::vector<std::string> flagged;
    std::vector<PoolBlock> blocks;
};

std::vector<int> valley_ages(const RawSeries& raw, double q_thresh);
RawSeries adaptive_pool(const RawSeries& raw, const YearLabels& labels, const PoolingConfig& cfg,
                        PoolingReport* report = nullptr);

// ---- tensor -------------------------------------------------------------

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

struct MortalityTensor {
    int ages = kDefaultAges;
    std::vector<std::string> pops;
    std::vector<int> years;
    Tensor4 values;       // [2][A][C][T] logit qx
    IntMatrix observed;   // C x T
    IntMatrix labels;     // C x T
    Matrix weights;       // C x T

    int n_pop() const { return static_cast<int>(pops.size()); }
    int n_year() const { return static_cast<int>(years.size()); }
    Vector schedule(int c, int t) const;  // stacked [female; male]
    void set_schedule(int c, int t, const Vector& z);
    int year_index(int year) const;       // -1 if absent
    int pop_index(const std::string& pop) const;
};

struct Cell {
    int c = 0, t = 0;
    bool operator==(const Cell& o) const { return c == o.c && t == o.t; }
};

struct ExceptionalCell {
    int c = 0, t = 0, d = 0;
    Vector z;  // 2A logit schedule kept for disruption modelling
};

struct ExceptionalSet {
    std::vector<ExceptionalCell> cells;
};

struct TensorConfig {
    int min_years = 5;
    double imputation_weight = 0.0;
    double q_min = kQMin;
};

MortalityTensor assemble_tensor(const RawSeries& raw, const YearLabels& labels, const TensorConfig& cfg,
                                ExceptionalSet* exceptional = nullptr);

}  // namespace mdmx
