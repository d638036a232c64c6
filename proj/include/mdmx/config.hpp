#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace mdmx {

// Every tunable of the batch pipeline. Loaded from a JSON file; unknown keys
// are rejected with their full path.
struct PipelineConfig {
    std::uint64_t seed = 7;
    int threads = 0;  // 0 = all cores

    struct Synth {
        int countries = 8, years = 120, first_year = 1900, regimes = 3;
        bool plant_disruptions = true, plant_curation_cases = true;
    } synth;

    struct Data {
        double q_min = 1e-8;
        int flat_age_a = 105, flat_age_b = 109;
        std::vector<std::string> excluded_pops{"FRACNP", "GBRCENW"};
        double q_thresh = 0.005;
        int min_years = 5;
        double imputation_weight = 0.0;
        std::string events;  // empty: bundled dictionary
    } data;

    struct Tucker {
        double tau = 0.9999;
        bool weighted = true;
        bool smoothing = true;
    } tucker;

    struct Cluster {
        int k_min = 2, k_max = 15;
        std::optional<int> k;
        double pca_fraction = 0.999;
        int restarts = 5, max_iter = 500;
        int epoch_window = 15;
        double epoch_delta = 0.05, epoch_delta_rapid = 0.20;
    } cluster;

    struct Trajectory {
        int nodes = 150;
        double lowess_frac = 0.3;
        int min_observations = 10;
        bool neural = true;
        int neural_epochs = 500;
    } trajectory;

    struct Disruption {
        std::string method = "neural";
        double penalty = 1.0;
        int neural_epochs = 300;
        int sg_window = 11, sg_degree = 3;
        int embed_epochs = 3000;
    } disruption;

    struct Fit {
        double sigma_lambda = 1.0;
        double gap = 0.0;
        bool calibrate = true;
        int cv_schedules = 500;
        double null_fraction = 0.5;
        double fp_budget = 0.05;
    } fit;

    struct Predict {
        int c_age = 6;
        double alpha = 10.0;
        int epochs = 3000;
        int patience = 30;
    } predict;

    struct Forecast {
        int n_pc = 5;
        double rho_min = 0.80, rho_max = 0.999;
        std::array<double, 3> weights{0.80, 0.0, 0.20};
        int window = 20, horizon = 15, min_train = 30;
        std::vector<int> origins;
        bool search = false;
        double search_step = 0.05;
    } forecast;
};

PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::string& path);
nlohmann::json config_to_json(const PipelineConfig& cfg);
// SHA-256 of the canonical JSON dump, without the thread count
std::string config_hash(const PipelineConfig& cfg);

}  // namespace mdmx
