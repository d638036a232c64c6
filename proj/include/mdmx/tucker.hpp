#pragma once

#include <array>
#include <climits>
#include <optional>
#include <vector>

#include "mdmx/data.hpp"
#include "mdmx/tensor.hpp"

namespace mdmx {

struct RankPolicy {
    double tau = 0.9999;
    std::array<int, 4> min_rank{2, 1, 1, 1};
    std::array<int, 4> max_rank{2, INT_MAX, INT_MAX, INT_MAX};
};

struct AgeSmoothingParams {
    double x_ramp = 40.0;
    double s_min = 0.25;
    double sigma_max = 2.0;
};

struct AgeSmoothingSpec {
    // components 2-5 in order, then one shared triple for the rest
    std::vector<AgeSmoothingParams> leading{{40, 0.25, 1.5}, {40, 0.25, 2.0}, {40, 0.25, 2.0}, {40, 0.25, 2.5}};
    AgeSmoothingParams tail{40, 0.25, 4.0};
    std::vector<int> preserved_ages{0, 1};
    double tolerance = 1e-10;

    const AgeSmoothingParams& params_for(int component) const;  // 0-based column index >= 1
};

struct TuckerModel {
    std::array<Matrix, 4> factors;  // S (2 x r1), A (ages x r2), C (pops x r3), T (years x r4)
    Tensor4 core;                   // r1 x r2 x r3 x r4
    std::array<Vector, 4> spectra;  // singular values of each (weighted) unfolding
    std::array<int, 4> ranks{0, 0, 0, 0};
    std::array<double, 4> variance_fraction{0, 0, 0, 0};
    double tau = 0.9999;
    bool weighted = false;
    std::optional<AgeSmoothingSpec> smoothing;

    const Matrix& S() const { return factors[0]; }
    const Matrix& A() const { return factors[1]; }
    const Matrix& C() const { return factors[2]; }
    const Matrix& T() const { return factors[3]; }
    int ages() const { return static_cast<int>(factors[1].rows()); }
};

int select_rank(const Vector& sv, double tau, int min_rank = 1, int max_rank = INT_MAX);

// G = M x1 S' x2 A' x3 C' x4 T'
Tensor4 core_projection(const Tensor4& values, const std::array<Matrix, 4>& factors);

// weights: C x T per-cell weights broadcast over sex and age; nullptr = unweighted.
TuckerModel hosvd(const Tensor4& values, const Matrix* weights, const RankPolicy& policy = {});
TuckerModel hosvd(const MortalityTensor& tensor, const RankPolicy& policy = {}, bool weighting = true);

TuckerModel smooth_age_basis(const TuckerModel& model, const Tensor4& values, const AgeSmoothingSpec& spec = {});

// Effective core for cell (c, t): r1 x r2. Optional reduced ranks truncate the
// sums over every mode.
Matrix effective_core(const TuckerModel& model, int c, int t, const std::array<int, 4>* reduced = nullptr);

Vector reconstruct(const TuckerModel& model, int s, int c, int t, const std::array<int, 4>* reduced = nullptr);
Vector reconstruct_pair(const TuckerModel& model, int c, int t, const std::array<int, 4>* reduced = nullptr);

// Splits a reconstruction into the part carried by the first age component
// and the remainder; their sum is the full reconstruction.
void level_residual(const TuckerModel& model, int c, int t, Vector& level, Vector& residual);

double max_orthonormality_error(const Matrix& m);

}  // namespace mdmx
