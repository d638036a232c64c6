#include "mdmx/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mdmx/error.hpp"
#include "mdmx/numerics/optimize.hpp"
#include "mdmx/parallel.hpp"

namespace mdmx {

TrajectoryData trajectory_data(const TuckerModel& model, const AgeStructureFeatures& features,
                               const std::vector<int>& labels, int n_clusters, E0Summary summary) {
    require(labels.size() == features.cells.size(), ErrorCode::InvalidInput, "trajectory_data: label count mismatch");
    TrajectoryData d;
    d.cells = features.cells;
    d.labels = labels;
    d.n_clusters = n_clusters;
    const auto n = static_cast<Eigen::Index>(features.cells.size());
    d.z.resize(n, 2 * model.ages());
    d.e0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector z = reconstruct_pair(model, features.cells[i].c, features.cells[i].t);
        d.z.row(i) = z.transpose();
        d.e0[i] = forward_e0(z, summary);
    }
    return d;
}

Matrix grid_tangents(const Vector& e0, const Matrix& values) {
    const Eigen::Index n = values.rows();
    Matrix t(n, values.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lo = i == 0 ? 0 : i - 1;
        const Eigen::Index hi = i == n - 1 ? n - 1 : i + 1;
        t.row(i) = (values.row(hi) - values.row(lo)) / (e0[hi] - e0[lo]);
    }
    return t;
}

TrajectoryGrid fit_trajectory_grid(int cluster, const Vector& e0, const Matrix& z, const TrajectoryOptions& opts) {
    require(e0.size() == z.rows(), ErrorCode::InvalidInput, "trajectory: row mismatch");
    require(opts.nodes >= 2, ErrorCode::ConfigError, "trajectory: need at least two grid nodes");
    const double lo = e0.minCoeff(), hi = e0.maxCoeff();
    require(hi > lo, ErrorCode::InsufficientData, "trajectory: observed e0 range is degenerate");
    TrajectoryGrid g;
    g.cluster = cluster;
    g.n_obs = static_cast<int>(e0.size());
    g.e0.resize(opts.nodes);
    for (int i = 0; i < opts.nodes; ++i) g.e0[i] = lo + (hi - lo) * i / (opts.nodes - 1);
    g.e0[opts.nodes - 1] = hi;
    g.values = lowess_columns(e0, z, g.e0, opts.lowess);
    g.tangents = grid_tangents(g.e0, g.values);
    return g;
}

const TrajectoryGrid* TrajectorySet::find(int cluster) const {
    for (const auto& g : grids)
        if (g.cluster == cluster) return &g;
    return nullptr;
}

TrajectorySet fit_trajectories(const TrajectoryData& data, const TrajectoryOptions& opts,
                               std::vector<std::string>* warnings) {
    TrajectorySet set;
    std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(data.n_clusters) + 1);
    for (Eigen::Index i = 0; i < data.z.rows(); ++i) {
        rows[0].push_back(i);
        const int l = data.labels[static_cast<std::size_t>(i)];
        if (l >= 0 && l < data.n_clusters) rows[static_cast<std::size_t>(l) + 1].push_back(i);
    }
    std::vector<int> ids;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (static_cast<int>(rows[k].size()) < opts.min_observations) {
            set.skipped.push_back(static_cast<int>(k));
            if (warnings)
                warnings->push_back("trajectory for cluster " + std::to_string(k) + " skipped: " +
                                    std::to_string(rows[k].size()) + " observations");
            continue;
        }
        ids.push_back(static_cast<int>(k));
    }
    set.grids.resize(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
        const auto& r = rows[static_cast<std::size_t>(ids[i])];
        Vector e(static_cast<Eigen::Index>(r.size()));
        Matrix z(static_cast<Eigen::Index>(r.size()), data.z.cols());
        for (std::size_t j = 0; j < r.size(); ++j) {
            e[static_cast<Eigen::Index>(j)] = data.e0[r[j]];
            z.row(static_cast<Eigen::Index>(j)) = data.z.row(r[j]);
        }
        set.grids[i] = fit_trajectory_grid(ids[i], e, z, opts);
    });
    return set;
}

namespace {

[[noreturn]] void out_of_range(const TrajectoryGrid& g, double x) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "e0 " << x << " outside the supported range [" << g.e0_min() << ", " << g.e0_max() << "] of trajectory "
        << g.cluster;
    fail(ErrorCode::ExtrapolationError, msg.str());
}

}  // namespace

Vector interpolate(const TrajectoryGrid& g, double x, bool allow_extrapolation) {
    const Eigen::Index n = g.e0.size();
    if (x < g.e0_min() || x > g.e0_max()) {
        if (!allow_extrapolation) out_of_range(g, x);
        if (x < g.e0_min()) return (g.values.row(0) + (x - g.e0_min()) * g.tangents.row(0)).transpose();
        return (g.values.row(n - 1) + (x - g.e0_max()) * g.tangents.row(n - 1)).transpose();
    }
    const double h = (g.e0_max() - g.e0_min()) / static_cast<double>(n - 1);
    auto j = static_cast<Eigen::Index>(std::floor((x - g.e0_min()) / h));
    j = std::clamp<Eigen::Index>(j, 0, n - 2);
    while (j > 0 && x < g.e0[j]) --j;
    while (j < n - 2 && x >= g.e0[j + 1]) ++j;
    const double w = (x - g.e0[j]) / (g.e0[j + 1] - g.e0[j]);
    if (w == 0.0) return g.values.row(j).transpose();
    if (w == 1.0) return g.values.row(j + 1).transpose();
    return (g.values.row(j) + w * (g.values.row(j + 1) - g.values.row(j))).transpose();
}

Vector interpolate_tangent(const TrajectoryGrid& g, double x) {
    const Eigen::Index n = g.e0.size();
    if (x <= g.e0_min()) return g.tangents.row(0).transpose();
    if (x >= g.e0_max()) return g.tangents.row(n - 1).transpose();
    const double h = (g.e0_max() - g.e0_min()) / static_cast<double>(n - 1);
    auto j = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor((x - g.e0_min()) / h)), 0, n - 2);
    while (j > 0 && x < g.e0[j]) --j;
    while (j < n - 2 && x >= g.e0[j + 1]) ++j;
    if (x == g.e0[j]) return g.tangents.row(j).transpose();
    return ((g.values.row(j + 1) - g.values.row(j)) / (g.e0[j + 1] - g.e0[j])).transpose();
}

Reconstruction reconstruct_at(const TrajectoryGrid& g, double e0_star, const RefineOptions& opts) {
    if (!opts.allow_extrapolation && (e0_star < g.e0_min() || e0_star > g.e0_max())) out_of_range(g, e0_star);
    Reconstruction r;
    r.eval_point = e0_star;
    r.z = interpolate(g, e0_star, true);
    r.e0 = forward_e0(r.z, opts.summary);
    if (!opts.refine) return r;

    const double lo = g.e0_min() - opts.extension, hi = g.e0_max() + opts.extension;
    auto gap = [&](double x) { return forward_e0(interpolate(g, x, true), opts.summary) - e0_star; };
    const double flo = gap(lo), fhi = gap(hi);
    double x;
    if (flo * fhi <= 0.0) {
        x = brent_root(gap, lo, hi, 1e-9);
    } else {
        // no sign change over the extended range: best node
        x = std::abs(flo) < std::abs(fhi) ? lo : hi;
        double best = std::min(std::abs(flo), std::abs(fhi));
        for (Eigen::Index i = 0; i < g.e0.size(); ++i) {
            const double v = std::abs(gap(g.e0[i]));
            if (v < best) best = v, x = g.e0[i];
        }
    }
    r.eval_point = x;
    r.z = interpolate(g, x, true);
    r.e0 = forward_e0(r.z, opts.summary);
    r.converged = std::abs(r.e0 - e0_star) <= opts.tolerance;
    return r;
}

// ---- neural trajectory --------------------------------------------------

Vector E0Encoding::features(double e0) const {
    const double e = (e0 - e0_min) / (e0_max - e0_min);
    const double pi = std::numbers::pi;
    Vector f(7);
    f << e, e * e, e * e * e, std::sin(pi * e), std::cos(pi * e), std::sin(2 * pi * e), std::cos(2 * pi * e);
    return f;
}

ClusterEmbeddings cluster_embeddings(const TrajectoryData& data) {
    const int K = data.n_clusters;
    require(K >= 1, ErrorCode::InvalidInput, "cluster_embeddings: no clusters");
    const Vector global = data.z.colwise().mean().transpose();
    Matrix centroids = Matrix::Zero(K, data.z.cols());
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < data.z.rows(); ++i) {
        const int l = data.labels[static_cast<std::size_t>(i)];
        if (l < 0 || l >= K) continue;
        centroids.row(l) += data.z.row(i);
        ++counts[static_cast<std::size_t>(l)];
    }
    for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] > 0)
            centroids.row(k) /= counts[static_cast<std::size_t>(k)];
        else
            centroids.row(k) = global.transpose();
    }
    const int d = std::min(8, K);
    ClusterEmbeddings out;
    out.e = Matrix::Zero(K, d);
    if (K >= 2) {
        const Matrix centred = centroids.rowwise() - centroids.colwise().mean();
        Svd svd = thin_svd(centred.transpose());  // components are left vectors
        Matrix comps = svd.u;
        fix_column_signs(comps);
        const int avail = std::min<int>(d, static_cast<int>(comps.cols()));
        out.e.leftCols(avail) = centred * comps.leftCols(avail);
    }
    const double m = out.e.cwiseAbs().maxCoeff();
    if (m > 0) {
        out.scale = m;
        out.e /= m;
    }
    return out;
}

Vector NeuralTrajectory::input(const Vector& embedding, double e0) const {
    Vector x(embedding.size() + 7);
    x << embedding, encoding.features(e0);
    return x;
}

Vector NeuralTrajectory::predict_embedding(const Vector& embedding, double e0) const {
    return net.forward_one(input(embedding, e0));
}

Vector NeuralTrajectory::predict(int cluster_label, double e0) const {
    require(cluster_label >= 0 && cluster_label < embeddings.e.rows(), ErrorCode::InvalidInput,
            "neural trajectory: unknown cluster " + std::to_string(cluster_label));
    return predict_embedding(embeddings.e.row(cluster_label).transpose(), e0);
}

NeuralTrajectory train_neural_trajectory(const TrajectoryData& data, const NeuralTrajectoryOptions& opts,
                                         std::vector<std::string>* warnings) {
    require(data.z.rows() > 1, ErrorCode::InsufficientData, "neural trajectory: no observations");
    NeuralTrajectory nt;
    nt.embeddings = cluster_embeddings(data);
    nt.encoding.e0_min = data.e0.minCoeff();
    nt.encoding.e0_max = data.e0.maxCoeff();
    require(nt.encoding.e0_max > nt.encoding.e0_min, ErrorCode::InsufficientData, "neural trajectory: degenerate e0 range");

    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < data.z.rows(); ++i)
        if (data.labels[static_cast<std::size_t>(i)] >= 0) rows.push_back(i);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const int d = nt.embeddings.dim();
    Matrix x(n, d + 7), y(n, data.z.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index i = rows[static_cast<std::size_t>(r)];
        x.row(r) = nt.input(nt.embeddings.e.row(data.labels[static_cast<std::size_t>(i)]).transpose(), data.e0[i]).transpose();
        y.row(r) = data.z.row(i);
    }
    std::vector<int> dims{d + 7};
    dims.insert(dims.end(), opts.hidden.begin(), opts.hidden.end());
    dims.push_back(static_cast<int>(data.z.cols()));
    nt.net = Mlp(dims, opts.seed);
    nt.net.layers.back().b = y.colwise().mean().transpose();
    nt.net.layers.back().w.setZero();

    TrainOptions to;
    to.epochs = opts.epochs;
    to.lr = opts.lr;
    to.seed = opts.seed;
    to.batch_size = opts.batch_size;
    if (n < 1000) {
        to.batch_size = std::min<int>(opts.batch_size, std::max<int>(32, static_cast<int>(n / 16)));
        if (warnings)
            warnings->push_back("neural trajectory: " + std::to_string(n) + " observations, batch size " +
                                std::to_string(to.batch_size));
    }
    LossSpec spec;
    spec.weight_decay = opts.weight_decay;
    if (opts.epochs > 0) nt.report = mlp_train(nt.net, x, y, spec, to);
    nt.train_mse = (nt.net.forward(x) - y).rowwise().squaredNorm().mean();
    return nt;
}

}  // namespace mdmx
