#include "mdmx/disruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdmx/error.hpp"
#include "mdmx/numerics/pca.hpp"
#include "mdmx/numerics/ward.hpp"
#include "mdmx/parallel.hpp"

namespace mdmx {

const char* baseline_name(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::Naive: return "naive";
        case BaselineMethod::Temporal: return "temporal";
        case BaselineMethod::Penalized: return "penalized";
        case BaselineMethod::Neural: return "neural";
    }
    return "neural";
}

BaselineMethod baseline_from_name(const std::string& name) {
    if (name == "naive") return BaselineMethod::Naive;
    if (name == "temporal") return BaselineMethod::Temporal;
    if (name == "penalized") return BaselineMethod::Penalized;
    if (name == "neural") return BaselineMethod::Neural;
    fail(ErrorCode::ConfigError, "unknown baseline method '" + name + "'");
}

Matrix kron_basis(const TuckerModel& model) {
    const Matrix& S = model.S();
    const Matrix& A = model.A();
    const int n = model.ages();
    const auto r1 = S.cols(), r2 = A.cols();
    Matrix b(2 * n, r1 * r2);
    for (Eigen::Index i = 0; i < r1; ++i)
        for (Eigen::Index j = 0; j < r2; ++j)
            for (int s = 0; s < 2; ++s) b.col(i * r2 + j).segment(s * n, n) = S(s, i) * A.col(j);
    return b;
}

BaselineEstimate baseline_naive(const TuckerModel& model, const Vector& y) {
    const Matrix b = kron_basis(model);
    require(y.size() == b.rows(), ErrorCode::InvalidInput, "baseline: schedule length mismatch");
    BaselineEstimate out;
    out.method = BaselineMethod::Naive;
    out.y = b * (b.transpose() * y);
    return out;
}

BaselineEstimate baseline_penalized(const TuckerModel& model, const Vector& y, const Vector& interp, double alpha) {
    require(alpha >= 0.0, ErrorCode::InvalidInput, "baseline_penalized: alpha must be non-negative");
    require(y.size() == interp.size(), ErrorCode::InvalidInput, "baseline_penalized: length mismatch");
    const Matrix b = kron_basis(model);
    BaselineEstimate out;
    out.method = BaselineMethod::Penalized;
    out.alpha = alpha;
    const Vector target = (y + alpha * interp) / (1.0 + alpha);
    out.y = b * (b.transpose() * target);
    return out;
}

BaselineEstimate baseline_temporal(const std::vector<int>& years, const Matrix& values, int year, LowessOptions opts) {
    require(static_cast<Eigen::Index>(years.size()) == values.rows(), ErrorCode::InvalidInput,
            "baseline_temporal: row mismatch");
    const bool before = std::any_of(years.begin(), years.end(), [&](int y) { return y < year; });
    const bool after = std::any_of(years.begin(), years.end(), [&](int y) { return y > year; });
    if (years.size() < 3 || !before || !after)
        fail(ErrorCode::NoSupport, "baseline_temporal: no two-sided support around " + std::to_string(year));
    BaselineEstimate out;
    out.method = BaselineMethod::Temporal;
    if (years.size() < 6) {
        int lo = -1, hi = -1;
        for (std::size_t i = 0; i < years.size(); ++i) {
            if (years[i] < year && (lo < 0 || years[i] > years[static_cast<std::size_t>(lo)])) lo = static_cast<int>(i);
            if (years[i] > year && (hi < 0 || years[i] < years[static_cast<std::size_t>(hi)])) hi = static_cast<int>(i);
        }
        const double y0 = years[static_cast<std::size_t>(lo)], y1 = years[static_cast<std::size_t>(hi)];
        const double w = (year - y0) / (y1 - y0);
        out.y = ((1.0 - w) * values.row(lo) + w * values.row(hi)).transpose();
        return out;
    }
    std::vector<std::size_t> order(years.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return years[a] < years[b]; });
    Vector x(static_cast<Eigen::Index>(years.size()));
    Matrix v(values.rows(), values.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        x[static_cast<Eigen::Index>(i)] = years[order[i]];
        v.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(order[i]));
    }
    Vector q(1);
    q[0] = year;
    out.y = lowess_columns(x, v, q, opts).row(0).transpose();
    return out;
}

BaselineEstimate baseline_temporal(const TuckerModel& model, const MortalityTensor& tensor, int c, int t,
                                   LowessOptions opts) {
    std::vector<int> years;
    std::vector<Vector> rows;
    for (int u = 0; u < tensor.n_year(); ++u) {
        if (u == t || tensor.observed(c, u) != 1) continue;
        years.push_back(tensor.years[static_cast<std::size_t>(u)]);
        rows.push_back(reconstruct_pair(model, c, u));
    }
    Matrix v(static_cast<Eigen::Index>(rows.size()), 2 * model.ages());
    for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return baseline_temporal(years, v, tensor.years[static_cast<std::size_t>(t)], opts);
}

// ---- neural core --------------------------------------------------------

Vector year_features(double year, double year_min, double year_max) {
    const double e = (year - year_min) / (year_max - year_min);
    const double pi = std::numbers::pi;
    Vector f(9);
    f << e, e * e, e * e * e, std::sin(2 * pi * e), std::cos(2 * pi * e), std::sin(4 * pi * e), std::cos(4 * pi * e),
        std::sin(10 * pi * e), std::cos(10 * pi * e);
    return f;
}

Vector NeuralCore::year_features(int year) const { return mdmx::year_features(year, year_min, year_max); }

Vector NeuralCore::input(int c, int year) const {
    require(c >= 0 && c < country_loadings.rows(), ErrorCode::InvalidInput, "neural core: country out of range");
    Vector x(country_loadings.cols() + 9);
    x << country_loadings.row(c).transpose(), year_features(year);
    return x;
}

Matrix NeuralCore::predict_core(int c, int year) const {
    const Vector out = net.forward_one(input(c, year));
    Matrix g(r1, r2);
    for (int i = 0; i < r1; ++i)
        for (int j = 0; j < r2; ++j) g(i, j) = out[i * r2 + j];
    return g;
}

Matrix projected_core(const TuckerModel& model, const Vector& y) {
    const int n = model.ages();
    Matrix m(2, n);
    for (int s = 0; s < 2; ++s) m.row(s) = y.segment(s * n, n).transpose();
    return model.S().transpose() * m * model.A();
}

Vector schedule_from_core(const TuckerModel& model, const Matrix& g) {
    const Matrix y = model.S() * g * model.A().transpose();
    const int n = model.ages();
    Vector out(2 * n);
    for (int s = 0; s < 2; ++s) out.segment(s * n, n) = y.row(s).transpose();
    return out;
}

NeuralCore train_neural_core(const TuckerModel& model, const MortalityTensor& tensor, const NeuralCoreOptions& opts) {
    NeuralCore core;
    core.country_loadings = model.C();
    core.year_min = tensor.years.front();
    core.year_max = tensor.years.back();
    require(core.year_max > core.year_min, ErrorCode::InsufficientData, "neural core: need at least two years");
    core.r1 = static_cast<int>(model.S().cols());
    core.r2 = static_cast<int>(model.A().cols());

    std::vector<Cell> cells;
    for (int c = 0; c < tensor.n_pop(); ++c)
        for (int t = 0; t < tensor.n_year(); ++t)
            if (tensor.observed(c, t) == 1) cells.push_back({c, t});
    require(!cells.empty(), ErrorCode::InsufficientData, "neural core: no observed cells");
    const auto n = static_cast<Eigen::Index>(cells.size());
    const int in = static_cast<int>(core.country_loadings.cols()) + 9;
    const int out = core.r1 * core.r2;
    Matrix x(n, in), y(n, out);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto [c, t] = cells[static_cast<std::size_t>(i)];
        x.row(i) = core.input(c, tensor.years[static_cast<std::size_t>(t)]).transpose();
        const Matrix g = projected_core(model, tensor.schedule(c, t));
        for (int a = 0; a < core.r1; ++a)
            for (int b = 0; b < core.r2; ++b) y(i, a * core.r2 + b) = g(a, b);
    }
    std::vector<int> dims{in};
    dims.insert(dims.end(), opts.hidden.begin(), opts.hidden.end());
    dims.push_back(out);
    core.net = Mlp(dims, opts.seed);
    core.net.layers.back().b = y.colwise().mean().transpose();
    core.net.layers.back().w.setZero();
    TrainOptions to;
    to.epochs = opts.epochs;
    to.batch_size = opts.batch_size;
    to.lr = opts.lr;
    to.seed = opts.seed;
    LossSpec spec;
    spec.weight_decay = opts.weight_decay;
    if (opts.epochs > 0) core.report = mlp_train(core.net, x, y, spec, to);
    return core;
}

BaselineEstimate baseline_neural(const NeuralCore& core, const TuckerModel& model, int c, int year) {
    BaselineEstimate out;
    out.method = BaselineMethod::Neural;
    out.core = core.predict_core(c, year);
    out.y = schedule_from_core(model, out.core);
    return out;
}

Vector residual(const Vector& y_obs, const Vector& baseline) {
    require(y_obs.size() == baseline.size() && y_obs.allFinite() && baseline.allFinite(), ErrorCode::InvalidInput,
            "residual: inputs must be finite and of equal length");
    return y_obs - baseline;
}

// ---- profiles -----------------------------------------------------------

Vector smooth_profile(const Vector& v, int ages, const ProfileSmoothing& sg) {
    require(v.size() == 2 * ages, ErrorCode::InvalidInput, "smooth_profile: length mismatch");
    require(ages >= sg.window, ErrorCode::InvalidInput, "smooth_profile: fewer ages than the filter window");
    const double nv = v.norm();
    require(nv > 0.0, ErrorCode::InvalidInput, "smooth_profile: zero vector");
    const Vector u = v / nv;
    Vector out(2 * ages);
    for (int s = 0; s < 2; ++s) out.segment(s * ages, ages) = savitzky_golay(u.segment(s * ages, ages), sg.window, sg.degree, true);
    return out / out.norm();
}

DisruptionProfile estimate_profile(int type, const Matrix& residuals, int ages, const ProfileSmoothing& sg) {
    require(residuals.rows() > 0, ErrorCode::InsufficientData, "estimate_profile: no events of this type");
    DisruptionProfile p;
    p.type = type;
    p.n_events = static_cast<int>(residuals.rows());
    const Vector mean = residuals.colwise().mean().transpose();
    const double n = mean.norm();
    require(n > 0.0, ErrorCode::InvalidInput, "estimate_profile: mean residual is zero");
    p.raw = mean / n;
    p.smoothed = smooth_profile(p.raw, ages, sg);
    p.cosine = p.raw.dot(p.smoothed);
    return p;
}

Intensity estimate_intensity(const Vector& r, const Vector& delta) {
    require(r.size() == delta.size(), ErrorCode::InvalidInput, "estimate_intensity: length mismatch");
    Intensity out;
    out.lambda = r.dot(delta);
    out.remainder = r - out.lambda * delta;
    out.orth_norm = out.remainder.norm();
    const double rr = r.squaredNorm();
    out.r2 = rr > 0 ? out.lambda * out.lambda / rr : 0.0;
    return out;
}

double span_r2(const Vector& r, const std::vector<Vector>& directions) {
    const double rr = r.squaredNorm();
    if (directions.empty() || rr == 0.0) return 0.0;
    Matrix d(r.size(), static_cast<Eigen::Index>(directions.size()));
    for (std::size_t i = 0; i < directions.size(); ++i) d.col(static_cast<Eigen::Index>(i)) = directions[i];
    const Eigen::ColPivHouseholderQR<Matrix> qr(d);
    const Eigen::Index rank = qr.rank();
    const Matrix q = Matrix(qr.householderQ()).leftCols(rank);
    return (q.transpose() * r).squaredNorm() / rr;
}

// ---- sub-clustering -----------------------------------------------------

Vector SubClustering::predict_profile(const Vector& embedding) const { return net.forward_one(embedding); }

SubClustering subcluster(int type, const Matrix& residuals, int ages, const SubClusterOptions& opts) {
    const auto n = static_cast<int>(residuals.rows());
    if (n < 2 * opts.min_size)
        fail(ErrorCode::SingleProfileFallback,
             "subcluster: " + std::to_string(n) + " events of type " + std::to_string(type) + " is too few");
    const Matrix centred = residuals.rowwise() - residuals.colwise().mean();
    if (!(centred.cwiseAbs().maxCoeff() > 1e-12))
        fail(ErrorCode::SingleProfileFallback, "subcluster: residuals of type " + std::to_string(type) + " are identical");

    const Pca probe = pca_fit(residuals, PcaTarget::variance(opts.pca_fraction));
    const int rank_cap = std::min<int>(n - 1, static_cast<int>(residuals.cols()));
    const int d = std::min(std::clamp(probe.dim(), opts.pca_min, opts.pca_max), rank_cap);
    const Pca pca = pca_fit(residuals, PcaTarget::components(d));
    const Matrix scores = pca.transform(residuals);

    SubClustering sc;
    sc.type = type;
    const auto merges = ward_linkage(scores);
    double best = -INFINITY;
    for (int k = opts.k_min; k <= std::min(opts.k_max, n); ++k) {
        const std::vector<int> labels = ward_cut(merges, n, k);
        std::vector<int> sizes(static_cast<std::size_t>(k), 0);
        for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
        if (*std::min_element(sizes.begin(), sizes.end()) < opts.min_size) continue;
        const double s = silhouette(scores, labels);
        sc.silhouettes.emplace_back(k, s);
        if (s > best) best = s, sc.k = k, sc.labels = labels;
    }
    if (sc.k == 0)
        fail(ErrorCode::SingleProfileFallback,
             "subcluster: no sub-cluster count meets the minimum size for type " + std::to_string(type));

    Matrix centroids(sc.k, residuals.cols());
    for (int k = 0; k < sc.k; ++k) {
        Vector sum = Vector::Zero(residuals.cols());
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (sc.labels[static_cast<std::size_t>(i)] == k) sum += residuals.row(i).transpose(), members.push_back(i);
        const Vector mean = sum / static_cast<double>(members.size());
        centroids.row(k) = mean.transpose();
        Vector raw = mean / mean.norm();
        Vector sm = smooth_profile(raw, ages, opts.sg);
        double proj = 0.0;
        for (int i : members) proj += residuals.row(i).dot(sm);
        if (proj < 0) raw = -raw, sm = -sm;
        sc.raw_profiles.push_back(raw);
        sc.profiles.push_back(sm);
    }

    // embeddings from the sub-cluster centroids
    const int dp = std::min(sc.k, 4);
    sc.embeddings = Matrix::Zero(sc.k, dp);
    const Matrix cc = centroids.rowwise() - centroids.colwise().mean();
    Svd svd = thin_svd(cc.transpose());
    Matrix comps = svd.u;
    fix_column_signs(comps);
    const int avail = std::min<int>(dp, static_cast<int>(comps.cols()));
    sc.embeddings.leftCols(avail) = cc * comps.leftCols(avail);
    const double m = sc.embeddings.cwiseAbs().maxCoeff();
    if (m > 0) sc.embeddings /= m;

    Matrix targets(sc.k, residuals.cols());
    for (int k = 0; k < sc.k; ++k) targets.row(k) = sc.profiles[static_cast<std::size_t>(k)].transpose();
    std::vector<int> dims{dp};
    dims.insert(dims.end(), opts.embed_hidden.begin(), opts.embed_hidden.end());
    dims.push_back(static_cast<int>(residuals.cols()));
    sc.net = Mlp(dims, opts.seed + static_cast<std::uint64_t>(type));
    sc.net.layers.back().b = targets.colwise().mean().transpose();
    sc.net.layers.back().w.setZero();
    TrainOptions to;
    to.epochs = opts.embed_epochs;
    to.batch_size = sc.k;
    to.lr = opts.embed_lr;
    to.seed = opts.seed;
    if (opts.embed_epochs > 0) mlp_train(sc.net, sc.embeddings, targets, LossSpec{}, to);
    return sc;
}

// ---- full model ---------------------------------------------------------

Vector overlay(const Vector& baseline, double lambda, const Vector& delta) {
    require(lambda >= 0.0, ErrorCode::InvalidInput, "overlay: intensity must be non-negative");
    require(baseline.size() == delta.size(), ErrorCode::InvalidInput, "overlay: length mismatch");
    if (lambda == 0.0) return baseline;
    return baseline + lambda * delta;
}

const Vector& DisruptionModel::profile(int type) const {
    const auto it = profiles.find(type);
    if (it == profiles.end()) fail(ErrorCode::InvalidInput, "no profile for disruption type " + std::to_string(type));
    return it->second.smoothed;
}

const Vector& DisruptionModel::profile(int type, int sub) const {
    if (sub < 0) return profile(type);
    const auto it = subclusters.find(type);
    if (it == subclusters.end() || sub >= it->second.k)
        fail(ErrorCode::InvalidInput,
             "no sub-profile " + std::to_string(sub) + " for disruption type " + std::to_string(type));
    return it->second.profiles[static_cast<std::size_t>(sub)];
}

Vector DisruptionModel::full_model(const Vector& baseline, int type, double lambda, int sub) const {
    if (type == kNone) return baseline;
    return overlay(baseline, lambda, profile(type, sub));
}

Vector DisruptionModel::compose(const Vector& baseline, const std::vector<std::pair<int, double>>& terms) const {
    Vector out = baseline;
    for (const auto& [type, lambda] : terms) {
        require(lambda >= 0.0, ErrorCode::InvalidInput, "compose: intensity must be non-negative");
        out += lambda * profile(type);
    }
    return out;
}

DisruptionModel fit_disruptions(const TuckerModel& model, const MortalityTensor& tensor,
                                const ExceptionalSet& exceptional, const DisruptionOptions& opts,
                                const NeuralCore* core) {
    DisruptionModel dm;
    dm.method = opts.method;
    dm.ages = model.ages();
    NeuralCore own;
    if (opts.method == BaselineMethod::Neural && core == nullptr) {
        own = train_neural_core(model, tensor, opts.neural);
        core = &own;
    }
    for (const auto& cell : exceptional.cells) {
        EventRecord ev;
        ev.c = cell.c;
        ev.t = cell.t;
        ev.type = cell.d;
        const int year = tensor.years[static_cast<std::size_t>(cell.t)];
        try {
            switch (opts.method) {
                case BaselineMethod::Naive: ev.baseline = baseline_naive(model, cell.z).y; break;
                case BaselineMethod::Temporal:
                    ev.baseline = baseline_temporal(model, tensor, cell.c, cell.t, opts.temporal).y;
                    break;
                case BaselineMethod::Penalized: {
                    const Vector interp = baseline_temporal(model, tensor, cell.c, cell.t, opts.temporal).y;
                    ev.baseline = baseline_penalized(model, cell.z, interp, opts.penalty).y;
                    break;
                }
                case BaselineMethod::Neural: ev.baseline = baseline_neural(*core, model, cell.c, year).y; break;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoSupport) throw;
            dm.warnings.push_back(tensor.pops[static_cast<std::size_t>(cell.c)] + " " + std::to_string(year) + ": " +
                                  e.what());
            continue;
        }
        ev.residual = residual(cell.z, ev.baseline);
        dm.events.push_back(std::move(ev));
    }

    for (int type : {kWar, kRespiratory, kEnteric}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dm.events.size(); ++i)
            if (dm.events[i].type == type) idx.push_back(i);
        if (idx.empty()) {
            dm.warnings.push_back(std::string("no events of type ") + disruption_name(type));
            continue;
        }
        Matrix r(static_cast<Eigen::Index>(idx.size()), 2 * dm.ages);
        for (std::size_t i = 0; i < idx.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = dm.events[idx[i]].residual.transpose();
        dm.profiles[type] = estimate_profile(type, r, dm.ages, opts.sg);
        try {
            dm.subclusters[type] = subcluster(type, r, dm.ages, opts.sub);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SingleProfileFallback) throw;
            dm.warnings.push_back(e.what());
        }
        const Vector& delta = dm.profiles[type].smoothed;
        const auto sub = dm.subclusters.find(type);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            EventRecord& ev = dm.events[idx[i]];
            const Intensity in = estimate_intensity(ev.residual, delta);
            ev.lambda = in.lambda;
            ev.r2 = in.r2;
            ev.orth_norm = in.orth_norm;
            if (sub != dm.subclusters.end()) {
                ev.subcluster = sub->second.labels[i];
                ev.r2_sub = span_r2(ev.residual, sub->second.profiles);
            } else {
                ev.r2_sub = ev.r2;
            }
        }
    }
    return dm;
}

}  // namespace mdmx
