#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mdmx/data.hpp"
#include "mdmx/numerics/mlp.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

// R = S (x) A with sex as the slow index of rows and i * r2 + j as the column
// index of core entry (i, j); R_c keeps the first c_age age components.
struct ReconMatrix {
    Matrix r;   // 2A x r1*r2
    Matrix rc;  // 2A x r1*c_age
    int ages = 0, r1 = 0, r2 = 0, c_age = 0;

    std::vector<int> truncated_columns() const;  // positions of R_c columns inside R
};

ReconMatrix build_recon(const Matrix& s, const Matrix& a, int c_age = 6);
ReconMatrix build_recon(const TuckerModel& model, int c_age = 6);

Vector vec_core(const Matrix& g);                    // row-major
Vector truncated_core(const Matrix& g, int c_age);  // first c_age columns, row-major

struct Indicators {
    std::array<double, 2> q5{0, 0};   // 5q0 female, male
    std::array<double, 2> q45{0, 0};  // 45q15 female, male
};

Indicators indicators_from_qx(const Vector& qx);  // stacked [female; male]
Indicators indicators_from_logit(const Vector& z);

enum class IndicatorVariant { OneParameter, TwoParameter };

int input_dim(IndicatorVariant v);
// logit of the indicators used by the variant; probabilities must lie in (0, 1)
Vector indicator_inputs(const Indicators& ind, IndicatorVariant v);
Vector indicator_inputs(const std::vector<double>& probs, IndicatorVariant v);

struct IndicatorOptions {
    std::vector<int> hidden{64, 64};
    double alpha = 10.0;
    int epochs = 3000;
    int batch_size = 256;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    int patience = 30;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
};

// 1/(2A) on every cell plus alpha/10 on ages 0-4 of both sexes.
Vector indicator_loss_weights(int ages, double alpha);

struct IndicatorModel {
    IndicatorVariant variant = IndicatorVariant::OneParameter;
    int c_age = 6;
    Mlp net;
    Vector input_mean, input_sd;
    TrainReport report;
    double val_rmse = 0.0;          // logit schedule RMSE on the held-out rows
    double val_rmse_working = 0.0;  // same, ages 15-59 only
    int n_train = 0;

    Vector predict_weights(const Vector& logit_inputs) const;
};

IndicatorModel train_indicator_model(const ReconMatrix& recon, const Matrix& schedules, IndicatorVariant variant,
                                     const IndicatorOptions& opts = {});
// observed, non-exceptional cells of the tensor
IndicatorModel train_indicator_model(const ReconMatrix& recon, const MortalityTensor& tensor,
                                     IndicatorVariant variant, const IndicatorOptions& opts = {});

// Inputs are probabilities (5q0 F, 5q0 M [, 45q15 F, 45q15 M]).
Vector predict_logit(const IndicatorModel& model, const ReconMatrix& recon, const std::vector<double>& probs);
Vector predict_schedule(const IndicatorModel& model, const ReconMatrix& recon, const std::vector<double>& probs);

}  // namespace mdmx
