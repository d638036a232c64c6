#pragma once

#include <string>
#include <vector>

#include "mdmx/cluster.hpp"
#include "mdmx/lifetable.hpp"
#include "mdmx/numerics/mlp.hpp"
#include "mdmx/numerics/smoothing.hpp"

namespace mdmx {

// Observations feeding the trajectories: one row per observed cell.
struct TrajectoryData {
    std::vector<Cell> cells;
    Matrix z;                 // n x 2A schedules
    Vector e0;                // n
    std::vector<int> labels;  // cluster label 0..K-1 per row
    int n_clusters = 0;
};

// Uses the Tucker reconstruction of each observed cell, with e0 from the
// forward life table.
TrajectoryData trajectory_data(const TuckerModel& model, const AgeStructureFeatures& features,
                               const std::vector<int>& labels, int n_clusters,
                               E0Summary summary = E0Summary::Mean);

struct TrajectoryOptions {
    int nodes = 150;
    LowessOptions lowess{0.3, 1};
    int min_observations = 10;
};

struct TrajectoryGrid {
    int cluster = 0;  // 0 = all observations, k >= 1 = cluster label k-1
    int n_obs = 0;
    Vector e0;        // nodes, strictly increasing
    Matrix values;    // nodes x 2A
    Matrix tangents;  // nodes x 2A

    double e0_min() const { return e0[0]; }
    double e0_max() const { return e0[e0.size() - 1]; }
    int dim() const { return static_cast<int>(values.cols()); }
};

TrajectoryGrid fit_trajectory_grid(int cluster, const Vector& e0, const Matrix& z, const TrajectoryOptions& opts = {});
Matrix grid_tangents(const Vector& e0, const Matrix& values);

struct TrajectorySet {
    std::vector<TrajectoryGrid> grids;  // ascending cluster id
    std::vector<int> skipped;
    const TrajectoryGrid* find(int cluster) const;
};

TrajectorySet fit_trajectories(const TrajectoryData& data, const TrajectoryOptions& opts = {},
                               std::vector<std::string>* warnings = nullptr);

// Linear interpolation; outside the grid the end tangents extend the curve
// when allowed, otherwise ExtrapolationError.
Vector interpolate(const TrajectoryGrid& grid, double x, bool allow_extrapolation = false);

// Derivative consistent with interpolate(): the stored node tangent at a
// node, the segment slope between nodes, the end tangent outside the grid.
Vector interpolate_tangent(const TrajectoryGrid& grid, double x);

struct RefineOptions {
    bool refine = true;
    double tolerance = 0.01;  // years
    double extension = 5.0;   // evaluation point may move this far past the grid
    bool allow_extrapolation = false;
    E0Summary summary = E0Summary::Mean;
};

struct Reconstruction {
    Vector z;
    double eval_point = 0.0;
    double e0 = 0.0;  // forward e0 of z
    bool converged = true;
};

Reconstruction reconstruct_at(const TrajectoryGrid& grid, double e0_star, const RefineOptions& opts = {});

// ---- neural trajectory --------------------------------------------------

struct E0Encoding {
    double e0_min = 0.0;
    double e0_max = 1.0;
    Vector features(double e0) const;  // 7 terms; not clamped outside the range
};

struct ClusterEmbeddings {
    Matrix e;  // K x d
    double scale = 1.0;
    int dim() const { return static_cast<int>(e.cols()); }
};

ClusterEmbeddings cluster_embeddings(const TrajectoryData& data);

struct NeuralTrajectoryOptions {
    std::vector<int> hidden{256, 128};
    int epochs = 500;
    int batch_size = 512;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

struct NeuralTrajectory {
    Mlp net;
    ClusterEmbeddings embeddings;
    E0Encoding encoding;
    TrainReport report;
    double train_mse = 0.0;  // mean over rows of squared error summed over 2A

    Vector input(const Vector& embedding, double e0) const;
    Vector predict(int cluster_label, double e0) const;
    Vector predict_embedding(const Vector& embedding, double e0) const;
};

NeuralTrajectory train_neural_trajectory(const TrajectoryData& data, const NeuralTrajectoryOptions& opts = {},
                                         std::vector<std::string>* warnings = nullptr);

}  // namespace mdmx
