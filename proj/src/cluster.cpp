#include "mdmx/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mdmx/error.hpp"
#include "mdmx/numerics/linalg.hpp"
#include "mdmx/numerics/smoothing.hpp"
#include "mdmx/numerics/ward.hpp"
#include "mdmx/parallel.hpp"

namespace mdmx {

Vector cell_feature(const Matrix& g) {
    const Eigen::Index r1 = g.rows(), r2 = g.cols();
    Vector f(r1 * (r2 - 1));
    for (Eigen::Index i = 0; i < r1; ++i)
        for (Eigen::Index j = 1; j < r2; ++j) f[i * (r2 - 1) + (j - 1)] = g(i, j);
    return f;
}

AgeStructureFeatures extract_features(const TuckerModel& model, const MortalityTensor& tensor) {
    AgeStructureFeatures out;
    for (int c = 0; c < tensor.n_pop(); ++c)
        for (int t = 0; t < tensor.n_year(); ++t)
            if (tensor.observed(c, t) == 1) out.cells.push_back({c, t});
    const int r1 = model.ranks[0], r2 = model.ranks[1];
    const auto n = static_cast<Eigen::Index>(out.cells.size());
    out.f.resize(n, r1 * (r2 - 1));
    out.level.resize(n, r1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Matrix g = effective_core(model, out.cells[i].c, out.cells[i].t);
        out.f.row(i) = cell_feature(g).transpose();
        out.level.row(i) = g.col(0).transpose();
    }
    return out;
}

Vector schedule_from_parts(const TuckerModel& model, const Vector& level, const Vector& feature) {
    const int r1 = static_cast<int>(level.size());
    const int r2 = static_cast<int>(feature.size()) / r1 + 1;
    Matrix g(r1, r2);
    g.col(0) = level;
    for (int i = 0; i < r1; ++i)
        for (int j = 1; j < r2; ++j) g(i, j) = feature[i * (r2 - 1) + (j - 1)];
    const Matrix y = model.S() * g * model.A().leftCols(r2).transpose();
    const int n = model.ages();
    Vector out(2 * n);
    for (int s = 0; s < 2; ++s) out.segment(s * n, n) = y.row(s).transpose();
    return out;
}

long gmm_free_parameters(int k, int d) {
    return static_cast<long>(k - 1) + static_cast<long>(k) * d + static_cast<long>(k) * d * (d + 1) / 2;
}

double bic_value(double log_likelihood, long n_parameters, std::size_t n) {
    return -2.0 * log_likelihood + static_cast<double>(n_parameters) * std::log(static_cast<double>(n));
}

int plurality(const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int l : labels)
        if (l >= 0) ++counts[l];
    int best = -1, best_n = 0;
    for (const auto& [l, n] : counts)
        if (n > best_n) best = l, best_n = n;  // map order: lowest label wins ties
    return best;
}

void derive_country_year_labels(const IntMatrix& cell_labels, std::vector<int>& country, std::vector<int>& year) {
    country.assign(static_cast<std::size_t>(cell_labels.rows()), -1);
    year.assign(static_cast<std::size_t>(cell_labels.cols()), -1);
    for (Eigen::Index c = 0; c < cell_labels.rows(); ++c) {
        std::vector<int> v;
        for (Eigen::Index t = 0; t < cell_labels.cols(); ++t) v.push_back(cell_labels(c, t));
        country[static_cast<std::size_t>(c)] = plurality(v);
    }
    for (Eigen::Index t = 0; t < cell_labels.cols(); ++t) {
        std::vector<int> v;
        for (Eigen::Index c = 0; c < cell_labels.rows(); ++c) v.push_back(cell_labels(c, t));
        year[static_cast<std::size_t>(t)] = plurality(v);
    }
}

ClusterModel fit_clusters(const AgeStructureFeatures& features, const ClusterOptions& opts) {
    require(opts.k_min >= 1 && opts.k_min <= opts.k_max, ErrorCode::ConfigError, "fit_clusters: bad k range");
    const auto n = static_cast<std::size_t>(features.f.rows());
    const int k_top = opts.k_override ? *opts.k_override : opts.k_max;
    require(n >= static_cast<std::size_t>(std::max(k_top, 2)), ErrorCode::InsufficientData,
            "fit_clusters: " + std::to_string(n) + " observations for k up to " + std::to_string(k_top));
    ClusterModel model;
    model.pca = pca_fit(features.f, PcaTarget::variance(opts.pca_fraction));
    const Matrix scores = model.pca.transform(features.f);

    std::vector<int> ks;
    if (opts.k_override)
        ks.push_back(*opts.k_override);
    else
        for (int k = opts.k_min; k <= opts.k_max; ++k) ks.push_back(k);
    std::vector<Gmm> fits(ks.size());
    parallel_for(ks.size(), [&](std::size_t i) {
        GmmOptions g = opts.gmm;
        g.seed = opts.gmm.seed + static_cast<std::uint64_t>(ks[i]);
        fits[i] = gmm_fit_em(scores, ks[i], g);
    });
    std::size_t best = 0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        BicEntry e;
        e.k = ks[i];
        e.log_likelihood = fits[i].log_likelihood;
        e.n_parameters = gmm_free_parameters(ks[i], scores.cols() > 0 ? static_cast<int>(scores.cols()) : 0);
        e.bic = bic_value(e.log_likelihood, e.n_parameters, n);
        model.bic_table.push_back(e);
        if (e.bic < model.bic_table[best].bic) best = i;
    }
    model.gmm = fits[best];
    model.k = ks[best];
    model.labels = model.gmm.predict(scores);
    model.ward_labels = ward_cluster(scores, model.k);
    model.ward_agreement = matched_agreement(model.labels, model.ward_labels);
    return model;
}

void attach_cell_labels(ClusterModel& model, const AgeStructureFeatures& features, int n_pop, int n_year) {
    model.cell_labels = IntMatrix::Constant(n_pop, n_year, -1);
    for (std::size_t i = 0; i < features.cells.size(); ++i)
        model.cell_labels(features.cells[i].c, features.cells[i].t) = model.labels[i];
    derive_country_year_labels(model.cell_labels, model.country_labels, model.year_labels);
}

// ---- epochs -------------------------------------------------------------

const char* epoch_name(Epoch e) {
    switch (e) {
        case Epoch::RapidImprovement: return "rapid_improvement";
        case Epoch::SlowImprovement: return "slow_improvement";
        case Epoch::Stagnation: return "stagnation";
        case Epoch::SlowWorsening: return "slow_worsening";
        case Epoch::RapidWorsening: return "rapid_worsening";
        case Epoch::Unassigned: return "unassigned";
    }
    return "unassigned";
}

Epoch classify_slope(double slope, const EpochParams& p) {
    if (slope < -p.delta_rapid) return Epoch::RapidImprovement;
    if (slope < -p.delta) return Epoch::SlowImprovement;
    if (slope <= p.delta) return Epoch::Stagnation;
    if (slope <= p.delta_rapid) return Epoch::SlowWorsening;
    return Epoch::RapidWorsening;
}

namespace {

int severity(Epoch e) {
    switch (e) {
        case Epoch::RapidImprovement:
        case Epoch::RapidWorsening: return 2;
        case Epoch::SlowImprovement:
        case Epoch::SlowWorsening: return 1;
        default: return 0;
    }
}

bool worsening(Epoch e) { return e == Epoch::SlowWorsening || e == Epoch::RapidWorsening; }

double ols_slope(const std::vector<double>& x, const std::vector<double>& y, std::size_t from, std::size_t len) {
    double mx = 0, my = 0;
    for (std::size_t i = from; i < from + len; ++i) mx += x[i], my += y[i];
    mx /= static_cast<double>(len);
    my /= static_cast<double>(len);
    double sxy = 0, sxx = 0;
    for (std::size_t i = from; i < from + len; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace

Epoch modal_epoch(const std::array<int, 5>& votes) {
    int best = -1;
    for (int c = 0; c < 5; ++c) {
        const int nv = votes[static_cast<std::size_t>(c)];
        if (nv == 0) continue;
        if (best < 0) {
            best = c;
            continue;
        }
        const int nb = votes[static_cast<std::size_t>(best)];
        const auto ec = static_cast<Epoch>(c), eb = static_cast<Epoch>(best);
        if (nv > nb || (nv == nb && (severity(ec) > severity(eb) ||
                                     (severity(ec) == severity(eb) && worsening(ec) && !worsening(eb)))))
            best = c;
    }
    return best < 0 ? Epoch::Unassigned : static_cast<Epoch>(best);
}

EpochSeries classify_epochs(const std::vector<int>& years, const std::vector<double>& level, const EpochParams& p) {
    require(years.size() == level.size(), ErrorCode::InvalidInput, "classify_epochs: length mismatch");
    require(p.window >= 2, ErrorCode::ConfigError, "classify_epochs: window must be at least 2");
    EpochSeries out;
    if (years.empty()) return out;
    const int y0 = *std::min_element(years.begin(), years.end());
    const int y1 = *std::max_element(years.begin(), years.end());
    for (int y = y0; y <= y1; ++y) out.years.push_back(y);
    out.category.assign(out.years.size(), Epoch::Unassigned);
    if (static_cast<int>(years.size()) < p.window) return out;

    Vector x(static_cast<Eigen::Index>(years.size())), v(static_cast<Eigen::Index>(years.size()));
    for (std::size_t i = 0; i < years.size(); ++i) {
        x[static_cast<Eigen::Index>(i)] = years[i];
        v[static_cast<Eigen::Index>(i)] = level[i];
    }
    const Lowess lw(x, v, LowessOptions{p.lowess_frac, 1});
    std::vector<double> xs;
    for (int y : out.years) {
        xs.push_back(y);
        out.smoothed.push_back(lw(static_cast<double>(y)));
    }
    const std::size_t n = out.years.size();
    const auto w = static_cast<std::size_t>(p.window);
    if (n < w) return out;
    std::vector<std::array<int, 5>> votes(n, std::array<int, 5>{0, 0, 0, 0, 0});
    for (std::size_t s = 0; s + w <= n; ++s) {
        const double slope = ols_slope(xs, out.smoothed, s, w);
        out.window_slopes.push_back(slope);
        const int cat = static_cast<int>(classify_slope(slope, p));
        for (std::size_t i = s; i < s + w; ++i) ++votes[i][static_cast<std::size_t>(cat)];
    }
    for (std::size_t i = 0; i < n; ++i) out.category[i] = modal_epoch(votes[i]);
    return out;
}

EpochCalendar epoch_calendar(const AgeStructureFeatures& features, const MortalityTensor& tensor, const EpochParams& p) {
    EpochCalendar cal;
    cal.params = p;
    const int C = tensor.n_pop(), T = tensor.n_year();
    cal.category.assign(static_cast<std::size_t>(C), std::vector<Epoch>(static_cast<std::size_t>(T), Epoch::Unassigned));
    std::vector<std::vector<int>> ys(static_cast<std::size_t>(C));
    std::vector<std::vector<double>> lv(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < features.cells.size(); ++i) {
        const auto [c, t] = features.cells[i];
        if (tensor.labels(c, t) != 0) continue;
        ys[static_cast<std::size_t>(c)].push_back(tensor.years[static_cast<std::size_t>(t)]);
        lv[static_cast<std::size_t>(c)].push_back(features.level(static_cast<Eigen::Index>(i), 0));
    }
    parallel_for(static_cast<std::size_t>(C), [&](std::size_t c) {
        const EpochSeries s = classify_epochs(ys[c], lv[c], p);
        for (std::size_t i = 0; i < s.years.size(); ++i) {
            const int t = tensor.year_index(s.years[i]);
            if (t >= 0) cal.category[c][static_cast<std::size_t>(t)] = s.category[i];
        }
    });
    return cal;
}

}  // namespace mdmx
