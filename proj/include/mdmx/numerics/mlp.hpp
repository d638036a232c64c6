#pragma once

#include <cstdint>
#include <vector>

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

struct Layer {
    Matrix w;  // out x in
    Vector b;
};

// Fully connected ReLU network with a linear output layer.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<int>& dims, std::uint64_t seed);  // He-normal weights, zero biases

    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().b.size()); }
    std::vector<int> dims() const;
    long n_parameters() const;

    Matrix forward(const Matrix& x) const;  // rows are samples
    Vector forward_one(const Vector& x) const;

    Vector flatten() const;
    void unflatten(const Vector& theta);
};

// Loss per sample: sum_j cell_weights[j] * ((map * f(x))_j - y_j)^2, averaged
// over the batch, plus weight_decay * sum ||W||^2 over weight matrices.
// An empty map means identity; empty cell_weights means all ones.
struct LossSpec {
    Matrix map;
    Vector cell_weights;
    double weight_decay = 0.0;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<Layer> grad;
};

LossGrad mlp_loss_grad(const Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec);
double mlp_loss(const Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec);

struct TrainOptions {
    int epochs = 100;
    int batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double validation_fraction = 0.0;  // held out after a seeded shuffle
    int patience = 0;                  // 0 disables early stopping
    bool restore_best = true;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> train_loss;  // mean batch loss per epoch
    std::vector<double> val_loss;
    int best_epoch = -1;
    int epochs_run = 0;
    bool stopped_early = false;
    std::vector<std::size_t> validation_rows;  // rows of x held out for early stopping
};

// Adam. Throws TrainingDiverged on a non-finite loss.
TrainReport mlp_train(Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec,
                      const TrainOptions& opts);

}  // namespace mdmx
