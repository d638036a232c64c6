#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mdmx/cluster.hpp"
#include "mdmx/config.hpp"
#include "mdmx/data.hpp"
#include "mdmx/disruption.hpp"
#include "mdmx/fitter.hpp"
#include "mdmx/svdcomp.hpp"
#include "mdmx/trajectory.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

// Stage order of the batch pipeline; serve is not a batch stage.
const std::vector<std::string>& pipeline_stages();
bool is_stage(const std::string& name);

// Runs one stage inside the work directory. Each stage reads the stores of its
// upstream stages, writes <work>/<stage>/ and <work>/logs/<stage>.json, and
// returns a short JSON summary. Stage-specific arguments:
//   synth:   schedules, bundle, out (planted fitting corpus instead of a panel)
//   ingest:  lifetables, counts (file lists; default the synth output)
//   fit:     in, out (batch fitting of a schedule CSV)
//   predict: q5f, q5m, q45f, q45m, out
nlohmann::json run_stage(const std::string& stage, const std::string& work, const PipelineConfig& cfg,
                         const nlohmann::json& args = nlohmann::json::object());

// synth through report in order.
nlohmann::json run_pipeline(const std::string& work, const PipelineConfig& cfg);

// ---- loaders shared with the service and the tests ------------------------

MortalityTensor load_tensor(const std::string& work, ExceptionalSet* exceptional = nullptr);
TuckerModel load_tucker(const std::string& work);

struct ClusterSummary {
    int k = 0;
    std::vector<int> cell_count;                  // per cluster
    std::vector<std::vector<std::string>> pops;   // countries whose plurality label is the cluster
};

ClusterSummary load_cluster_summary(const std::string& work);
std::vector<int> load_country_labels(const std::string& work);
TrajectorySet load_trajectories(const std::string& work);
bool has_neural_trajectory(const std::string& work);
NeuralTrajectory load_neural_trajectory(const std::string& work);
DisruptionModel load_disruptions(const std::string& work);

struct FitCalibration {
    double sigma_lambda = 1.0;
    double gap = 0.0;
    bool calibrated = false;
};

FitCalibration load_fit_calibration(const std::string& work);
IndicatorModel load_indicator_model(const std::string& work, IndicatorVariant variant);

// Per-type smoothed profiles keyed by disruption type.
std::map<int, Vector> profile_map(const DisruptionModel& dm);
// Grids used by the fitter: one per cluster, or the pooled grid when no
// cluster grid exists.
std::vector<TrajectoryGrid> fitter_grids(const TrajectorySet& set);

nlohmann::json fit_result_json(const FitResult& r);

}  // namespace mdmx
