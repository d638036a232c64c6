#include "mdmx/numerics/mlp.hpp"

#include <cmath>
#include <limits>

#include "mdmx/error.hpp"
#include "mdmx/numerics/random.hpp"

namespace mdmx {

Mlp::Mlp(const std::vector<int>& dims, std::uint64_t seed) {
    require(dims.size() >= 2, ErrorCode::InvalidInput, "Mlp: need input and output dimensions");
    for (int d : dims) require(d > 0, ErrorCode::InvalidInput, "Mlp: dimensions must be positive");
    Rng rng(seed);
    for (std::size_t l = 1; l < dims.size(); ++l) {
        Layer layer;
        layer.w.resize(dims[l], dims[l - 1]);
        const double sd = std::sqrt(2.0 / dims[l - 1]);
        for (Eigen::Index j = 0; j < layer.w.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.w.rows(); ++i) layer.w(i, j) = sd * rng.normal();
        layer.b = Vector::Zero(dims[l]);
        layers.push_back(std::move(layer));
    }
}

std::vector<int> Mlp::dims() const {
    std::vector<int> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers) d.push_back(static_cast<int>(l.b.size()));
    return d;
}

long Mlp::n_parameters() const {
    long n = 0;
    for (const auto& l : layers) n += static_cast<long>(l.w.size() + l.b.size());
    return n;
}

Matrix Mlp::forward(const Matrix& x) const {
    require(x.cols() == input_dim(), ErrorCode::InvalidInput, "Mlp::forward: input width mismatch");
    Matrix a = x.transpose();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].w * a;
        z.colwise() += layers[l].b;
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a.transpose();
}

Vector Mlp::forward_one(const Vector& x) const {
    require(x.size() == input_dim(), ErrorCode::InvalidInput, "Mlp::forward_one: input width mismatch");
    Vector a = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector z = layers[l].w * a + layers[l].b;
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a;
}

Vector Mlp::flatten() const {
    Vector theta(n_parameters());
    Eigen::Index k = 0;
    for (const auto& l : layers) {
        theta.segment(k, l.w.size()) = Eigen::Map<const Vector>(l.w.data(), l.w.size());
        k += l.w.size();
        theta.segment(k, l.b.size()) = l.b;
        k += l.b.size();
    }
    return theta;
}

void Mlp::unflatten(const Vector& theta) {
    require(theta.size() == n_parameters(), ErrorCode::InvalidInput, "Mlp::unflatten: size mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers) {
        Eigen::Map<Vector>(l.w.data(), l.w.size()) = theta.segment(k, l.w.size());
        k += l.w.size();
        l.b = theta.segment(k, l.b.size());
        k += l.b.size();
    }
}

namespace {

void check_spec(const Mlp& net, const Matrix& y, const LossSpec& spec) {
    const Eigen::Index out = spec.map.size() ? spec.map.rows() : net.output_dim();
    if (spec.map.size())
        require(spec.map.cols() == net.output_dim(), ErrorCode::InvalidInput, "loss: map width mismatch");
    require(y.cols() == out, ErrorCode::InvalidInput, "loss: target width mismatch");
    if (spec.cell_weights.size())
        require(spec.cell_weights.size() == out, ErrorCode::InvalidInput, "loss: weight length mismatch");
}

double decay_term(const Mlp& net, double wd) {
    if (wd == 0.0) return 0.0;
    double s = 0.0;
    for (const auto& l : net.layers) s += l.w.squaredNorm();
    return wd * s;
}

}  // namespace

LossGrad mlp_loss_grad(const Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec) {
    check_spec(net, y, spec);
    require(x.rows() == y.rows() && x.rows() > 0, ErrorCode::InvalidInput, "loss: batch size mismatch");
    const std::size_t nl = net.layers.size();
    const double inv_b = 1.0 / static_cast<double>(x.rows());
    std::vector<Matrix> acts(nl + 1);  // acts[0] = input, acts[l] = post-activation of layer l
    acts[0] = x.transpose();
    for (std::size_t l = 0; l < nl; ++l) {
        Matrix z = net.layers[l].w * acts[l];
        z.colwise() += net.layers[l].b;
        if (l + 1 < nl) z = z.cwiseMax(0.0);
        acts[l + 1] = std::move(z);
    }
    const Matrix pred = spec.map.size() ? Matrix(spec.map * acts[nl]) : acts[nl];
    Matrix err = pred - y.transpose();  // out x B
    Matrix werr = spec.cell_weights.size() ? Matrix(spec.cell_weights.asDiagonal() * err) : err;
    LossGrad out;
    out.loss = (err.array() * werr.array()).sum() * inv_b + decay_term(net, spec.weight_decay);
    Matrix delta = 2.0 * inv_b * (spec.map.size() ? Matrix(spec.map.transpose() * werr) : werr);
    out.grad.resize(nl);
    for (std::size_t l = nl; l-- > 0;) {
        out.grad[l].w = delta * acts[l].transpose();
        if (spec.weight_decay != 0.0) out.grad[l].w += 2.0 * spec.weight_decay * net.layers[l].w;
        out.grad[l].b = delta.rowwise().sum();
        if (l > 0) {
            Matrix back = net.layers[l].w.transpose() * delta;
            delta = (acts[l].array() > 0.0).select(back, 0.0);
        }
    }
    return out;
}

double mlp_loss(const Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec) {
    check_spec(net, y, spec);
    const Matrix f = net.forward(x).transpose();
    const Matrix pred = spec.map.size() ? Matrix(spec.map * f) : f;
    const Matrix err = pred - y.transpose();
    const Matrix werr = spec.cell_weights.size() ? Matrix(spec.cell_weights.asDiagonal() * err) : err;
    return (err.array() * werr.array()).sum() / static_cast<double>(x.rows()) + decay_term(net, spec.weight_decay);
}

TrainReport mlp_train(Mlp& net, const Matrix& x, const Matrix& y, const LossSpec& spec, const TrainOptions& opts) {
    require(x.rows() == y.rows() && x.rows() > 0, ErrorCode::InvalidInput, "mlp_train: sample count mismatch");
    require(opts.batch_size > 0 && opts.epochs >= 0, ErrorCode::InvalidInput, "mlp_train: bad schedule");
    require(x.allFinite() && y.allFinite(), ErrorCode::DomainError, "mlp_train: non-finite data");
    check_spec(net, y, spec);
    Rng rng(opts.seed);
    const Eigen::Index n = x.rows();
    std::vector<std::size_t> order = rng.permutation(static_cast<std::size_t>(n));
    Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(opts.validation_fraction * static_cast<double>(n)));
    if (n - n_val < 1) n_val = 0;
    std::vector<std::size_t> train_idx(order.begin(), order.end() - n_val);
    std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
    auto gather = [](const Matrix& m, const std::vector<std::size_t>& idx) {
        Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
        return out;
    };
    const Matrix xv = gather(x, val_idx), yv = gather(y, val_idx);

    std::vector<Layer> m1(net.layers.size()), m2(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        m1[l].w = m2[l].w = Matrix::Zero(net.layers[l].w.rows(), net.layers[l].w.cols());
        m1[l].b = m2[l].b = Vector::Zero(net.layers[l].b.size());
    }
    TrainReport rep;
    rep.validation_rows = val_idx;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Layer> best_layers = net.layers;
    int since_best = 0;
    long step = 0;
    const std::size_t nt = train_idx.size();
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(train_idx);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < nt; start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t stop = std::min(nt, start + static_cast<std::size_t>(opts.batch_size));
            std::vector<std::size_t> bi(train_idx.begin() + static_cast<long>(start), train_idx.begin() + static_cast<long>(stop));
            const LossGrad lg = mlp_loss_grad(net, gather(x, bi), gather(y, bi), spec);
            if (!std::isfinite(lg.loss)) fail(ErrorCode::TrainingDiverged, "mlp_train: non-finite loss");
            loss_sum += lg.loss;
            ++batches;
            ++step;
            const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                m1[l].w = opts.beta1 * m1[l].w + (1 - opts.beta1) * lg.grad[l].w;
                m2[l].w = opts.beta2 * m2[l].w + (1 - opts.beta2) * lg.grad[l].w.cwiseAbs2();
                m1[l].b = opts.beta1 * m1[l].b + (1 - opts.beta1) * lg.grad[l].b;
                m2[l].b = opts.beta2 * m2[l].b + (1 - opts.beta2) * lg.grad[l].b.cwiseAbs2();
                net.layers[l].w.array() -= opts.lr * (m1[l].w.array() / c1) / ((m2[l].w.array() / c2).sqrt() + opts.eps);
                net.layers[l].b.array() -= opts.lr * (m1[l].b.array() / c1) / ((m2[l].b.array() / c2).sqrt() + opts.eps);
            }
        }
        rep.train_loss.push_back(batches ? loss_sum / batches : 0.0);
        rep.epochs_run = epoch + 1;
        const double monitored = n_val > 0 ? mlp_loss(net, xv, yv, spec) : rep.train_loss.back();
        if (!std::isfinite(monitored)) fail(ErrorCode::TrainingDiverged, "mlp_train: non-finite loss");
        if (n_val > 0) rep.val_loss.push_back(monitored);
        if (monitored < best) {
            best = monitored;
            rep.best_epoch = epoch;
            since_best = 0;
            if (opts.restore_best && opts.patience > 0) best_layers = net.layers;
        } else if (opts.patience > 0 && ++since_best >= opts.patience) {
            rep.stopped_early = true;
            break;
        }
    }
    if (opts.restore_best && opts.patience > 0 && rep.best_epoch >= 0) net.layers = best_layers;
    return rep;
}

}  // namespace mdmx
