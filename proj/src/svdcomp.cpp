#include "mdmx/svdcomp.hpp"

#include <cmath>

#include "mdmx/error.hpp"
#include "mdmx/lifetable.hpp"

namespace mdmx {

std::vector<int> ReconMatrix::truncated_columns() const {
    std::vector<int> cols;
    for (int i = 0; i < r1; ++i)
        for (int j = 0; j < c_age; ++j) cols.push_back(i * r2 + j);
    return cols;
}

ReconMatrix build_recon(const Matrix& s, const Matrix& a, int c_age) {
    require(s.rows() == 2, ErrorCode::InvalidInput, "build_recon: sex factor must have two rows");
    require(c_age >= 1 && c_age <= a.cols(), ErrorCode::InvalidInput, "build_recon: c_age must lie in [1, r2]");
    ReconMatrix rm;
    rm.ages = static_cast<int>(a.rows());
    rm.r1 = static_cast<int>(s.cols());
    rm.r2 = static_cast<int>(a.cols());
    rm.c_age = c_age;
    rm.r.resize(2 * a.rows(), s.cols() * a.cols());
    for (Eigen::Index si = 0; si < 2; ++si)
        for (Eigen::Index i = 0; i < s.cols(); ++i)
            rm.r.block(si * a.rows(), i * a.cols(), a.rows(), a.cols()) = s(si, i) * a;
    rm.rc.resize(rm.r.rows(), rm.r1 * c_age);
    const auto cols = rm.truncated_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) rm.rc.col(static_cast<Eigen::Index>(k)) = rm.r.col(cols[k]);
    return rm;
}

ReconMatrix build_recon(const TuckerModel& model, int c_age) { return build_recon(model.S(), model.A(), c_age); }

Vector vec_core(const Matrix& g) {
    Vector v(g.size());
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) v[i * g.cols() + j] = g(i, j);
    return v;
}

Vector truncated_core(const Matrix& g, int c_age) {
    require(c_age >= 1 && c_age <= g.cols(), ErrorCode::InvalidInput, "truncated_core: c_age out of range");
    return vec_core(g.leftCols(c_age));
}

Indicators indicators_from_qx(const Vector& qx) {
    require(qx.size() % 2 == 0 && qx.size() / 2 >= 60, ErrorCode::InvalidInput,
            "indicators: schedule must cover ages 0-59 for both sexes");
    const Eigen::Index ages = qx.size() / 2;
    Indicators out;
    for (int s = 0; s < 2; ++s) {
        double p5 = 1.0, p45 = 1.0;
        for (int a = 0; a <= 4; ++a) p5 *= 1.0 - qx[s * ages + a];
        for (int a = 15; a <= 59; ++a) p45 *= 1.0 - qx[s * ages + a];
        out.q5[static_cast<std::size_t>(s)] = 1.0 - p5;
        out.q45[static_cast<std::size_t>(s)] = 1.0 - p45;
    }
    return out;
}

Indicators indicators_from_logit(const Vector& z) { return indicators_from_qx(expit(z)); }

int input_dim(IndicatorVariant v) { return v == IndicatorVariant::OneParameter ? 2 : 4; }

Vector indicator_inputs(const std::vector<double>& probs, IndicatorVariant v) {
    require(static_cast<int>(probs.size()) == input_dim(v), ErrorCode::InvalidInput,
            "indicator inputs: expected " + std::to_string(input_dim(v)) + " values");
    Vector x(static_cast<Eigen::Index>(probs.size()));
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        require(p > 0.0 && p < 1.0, ErrorCode::DomainError, "indicator inputs must lie strictly inside (0, 1)");
        x[static_cast<Eigen::Index>(i)] = logit(p);
    }
    return x;
}

Vector indicator_inputs(const Indicators& ind, IndicatorVariant v) {
    std::vector<double> p{ind.q5[0], ind.q5[1]};
    if (v == IndicatorVariant::TwoParameter) p.insert(p.end(), {ind.q45[0], ind.q45[1]});
    return indicator_inputs(p, v);
}

Vector indicator_loss_weights(int ages, double alpha) {
    Vector w = Vector::Constant(2 * ages, 1.0 / (2.0 * ages));
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a <= 4 && a < ages; ++a) w[s * ages + a] += alpha / 10.0;
    return w;
}

Vector IndicatorModel::predict_weights(const Vector& logit_inputs) const {
    require(logit_inputs.size() == net.input_dim(), ErrorCode::InvalidInput, "indicator model: input size mismatch");
    return net.forward_one(((logit_inputs - input_mean).array() / input_sd.array()).matrix());
}

IndicatorModel train_indicator_model(const ReconMatrix& recon, const Matrix& schedules, IndicatorVariant variant,
                                     const IndicatorOptions& opts) {
    require(schedules.cols() == recon.r.rows(), ErrorCode::InvalidInput, "train_indicator_model: schedule length mismatch");
    require(schedules.rows() >= 10, ErrorCode::InsufficientData, "train_indicator_model: need at least 10 schedules");
    const Eigen::Index n = schedules.rows();
    const int d_in = input_dim(variant);
    Matrix x(n, d_in);
    for (Eigen::Index i = 0; i < n; ++i)
        x.row(i) = indicator_inputs(indicators_from_logit(schedules.row(i).transpose()), variant).transpose();

    IndicatorModel m;
    m.variant = variant;
    m.c_age = recon.c_age;
    m.input_mean = x.colwise().mean().transpose();
    m.input_sd = ((x.rowwise() - m.input_mean.transpose()).colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < d_in; ++j)
        if (!(m.input_sd[j] > 1e-12)) m.input_sd[j] = 1.0;
    const Matrix xs = (x.rowwise() - m.input_mean.transpose()).array().rowwise() / m.input_sd.transpose().array();

    std::vector<int> dims{d_in};
    dims.insert(dims.end(), opts.hidden.begin(), opts.hidden.end());
    dims.push_back(static_cast<int>(recon.rc.cols()));
    m.net = Mlp(dims, opts.seed);
    // start from the projection of the mean schedule
    m.net.layers.back().w.setZero();
    m.net.layers.back().b = recon.rc.transpose() * schedules.colwise().mean().transpose();

    LossSpec spec;
    spec.map = recon.rc;
    spec.cell_weights = indicator_loss_weights(recon.ages, opts.alpha);
    spec.weight_decay = opts.weight_decay;
    TrainOptions to;
    to.epochs = opts.epochs;
    to.batch_size = opts.batch_size;
    to.lr = opts.lr;
    to.validation_fraction = opts.validation_fraction;
    to.patience = opts.patience;
    to.seed = opts.seed + 1;
    m.report = mlp_train(m.net, xs, schedules, spec, to);
    m.n_train = static_cast<int>(n - static_cast<Eigen::Index>(m.report.validation_rows.size()));

    double se = 0.0, se_w = 0.0;
    long cnt = 0, cnt_w = 0;
    for (std::size_t i : m.report.validation_rows) {
        const auto row = static_cast<Eigen::Index>(i);
        const Vector err = recon.rc * m.net.forward_one(xs.row(row).transpose()) - schedules.row(row).transpose();
        se += err.squaredNorm();
        cnt += err.size();
        for (int s = 0; s < 2; ++s)
            for (int a = 15; a <= 59; ++a) se_w += err[s * recon.ages + a] * err[s * recon.ages + a], ++cnt_w;
    }
    m.val_rmse = cnt ? std::sqrt(se / cnt) : 0.0;
    m.val_rmse_working = cnt_w ? std::sqrt(se_w / cnt_w) : 0.0;
    return m;
}

IndicatorModel train_indicator_model(const ReconMatrix& recon, const MortalityTensor& tensor, IndicatorVariant variant,
                                     const IndicatorOptions& opts) {
    std::vector<Vector> rows;
    for (int c = 0; c < tensor.n_pop(); ++c)
        for (int t = 0; t < tensor.n_year(); ++t)
            if (tensor.observed(c, t) == 1 && tensor.labels(c, t) == 0) rows.push_back(tensor.schedule(c, t));
    require(!rows.empty(), ErrorCode::InsufficientData, "train_indicator_model: no observed non-exceptional cells");
    Matrix z(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) z.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return train_indicator_model(recon, z, variant, opts);
}

Vector predict_logit(const IndicatorModel& model, const ReconMatrix& recon, const std::vector<double>& probs) {
    require(recon.c_age == model.c_age, ErrorCode::InvalidInput, "predict: reconstruction truncation does not match model");
    return recon.rc * model.predict_weights(indicator_inputs(probs, model.variant));
}

Vector predict_schedule(const IndicatorModel& model, const ReconMatrix& recon, const std::vector<double>& probs) {
    return expit(predict_logit(model, recon, probs));
}

}  // namespace mdmx
