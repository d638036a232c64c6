#include "mdmx/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdmx/error.hpp"
#include "mdmx/numerics/random.hpp"
#include "mdmx/parallel.hpp"

namespace mdmx {

namespace {
constexpr double kRssFloor = 1e-300;
constexpr double kSingular = 1e-12;
}  // namespace

FitterCache make_fitter_cache(const std::vector<TrajectoryGrid>& grids, const std::map<int, Vector>& profiles) {
    require(!grids.empty(), ErrorCode::InvalidInput, "fitter: no trajectory grids");
    FitterCache c;
    c.grids = grids;
    c.n = grids.front().dim();
    for (const auto& [d, v] : profiles) {
        require(d >= 1 && d <= 3, ErrorCode::InvalidInput, "fitter: profile type out of range");
        require(v.size() == c.n, ErrorCode::InvalidInput, "fitter: profile length mismatch");
        c.profiles[static_cast<std::size_t>(d)] = v;
        c.has_profile[static_cast<std::size_t>(d)] = true;
        c.dd[static_cast<std::size_t>(d)] = dot(v.data(), v.data(), static_cast<std::size_t>(c.n));
    }
    for (const auto& g : grids) {
        require(g.dim() == c.n, ErrorCode::InvalidInput, "fitter: grids disagree on schedule length");
        c.z.emplace_back(g.values);
        c.t.emplace_back(g.tangents);
        const RowMatrix& t = c.t.back();
        Vector tt(t.rows());
        Matrix td = Matrix::Zero(t.rows(), 4);
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            const double* ti = t.row(i).data();
            tt[i] = dot(ti, ti, static_cast<std::size_t>(c.n));
            for (int d = 1; d <= 3; ++d)
                if (c.has_profile[static_cast<std::size_t>(d)])
                    td(i, d) = dot(ti, c.profiles[static_cast<std::size_t>(d)].data(), static_cast<std::size_t>(c.n));
        }
        c.tt.push_back(tt);
        c.td.push_back(td);
    }
    return c;
}

NodeFit solve_node(const double* r, const double* t, const double* d, double tt, double td, double dd, int n) {
    NodeFit f;
    const auto un = static_cast<std::size_t>(n);
    const double tr = dot(t, r, un);
    int p;
    double rss = 0.0;
    if (d == nullptr) {
        if (!(tt > 0.0)) {
            f.ok = false;
            return f;
        }
        f.delta = tr / tt;
        for (int i = 0; i < n; ++i) {
            const double e = r[i] - f.delta * t[i];
            rss += e * e;
        }
        p = 2;
    } else {
        const double dr = dot(d, r, un);
        const double det = tt * dd - td * td;
        if (std::abs(det) < kSingular) {
            f.ok = false;
            return f;
        }
        f.delta = (dd * tr - td * dr) / det;
        f.lambda = (tt * dr - td * tr) / det;
        for (int i = 0; i < n; ++i) {
            const double e = r[i] - f.delta * t[i] - f.lambda * d[i];
            rss += e * e;
        }
        p = 3;
    }
    f.rss = std::max(rss, kRssFloor);
    f.bic = n * std::log(f.rss / n) + p * std::log(static_cast<double>(n));
    return f;
}

std::vector<NodeFit> stage1_grid(const FitterCache& c, int grid, int d, const Vector& y) {
    const RowMatrix& z = c.z[static_cast<std::size_t>(grid)];
    const RowMatrix& t = c.t[static_cast<std::size_t>(grid)];
    const RowMatrix r = (-z).rowwise() + y.transpose();
    const double* dv = d > 0 ? c.profiles[static_cast<std::size_t>(d)].data() : nullptr;
    const double dd = d > 0 ? c.dd[static_cast<std::size_t>(d)] : 0.0;
    const Vector& tt = c.tt[static_cast<std::size_t>(grid)];
    const Matrix& td = c.td[static_cast<std::size_t>(grid)];
    std::vector<NodeFit> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        out[static_cast<std::size_t>(i)] = solve_node(r.row(i).data(), t.row(i).data(), dv, tt[i], d > 0 ? td(i, d) : 0.0, dd, c.n);
    return out;
}

std::vector<NodeFit> stage1_grid_scalar(const FitterCache& c, int grid, int d, const Vector& y) {
    const TrajectoryGrid& g = c.grids[static_cast<std::size_t>(grid)];
    const auto n = static_cast<std::size_t>(c.n);
    std::vector<NodeFit> out;
    std::vector<double> r(n), t(n), dv;
    if (d > 0) dv.assign(c.profiles[static_cast<std::size_t>(d)].data(), c.profiles[static_cast<std::size_t>(d)].data() + n);
    for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = y[static_cast<Eigen::Index>(j)] - g.values(i, static_cast<Eigen::Index>(j));
            t[j] = g.tangents(i, static_cast<Eigen::Index>(j));
        }
        const double tt = dot(t.data(), t.data(), n);
        const double td = d > 0 ? dot(t.data(), dv.data(), n) : 0.0;
        const double dd = d > 0 ? dot(dv.data(), dv.data(), n) : 0.0;
        out.push_back(solve_node(r.data(), t.data(), d > 0 ? dv.data() : nullptr, tt, td, dd, c.n));
    }
    return out;
}

namespace {

std::vector<int> hypotheses(const FitterCache& c) {
    std::vector<int> h{0};
    for (int d = 1; d <= 3; ++d)
        if (c.has_profile[static_cast<std::size_t>(d)]) h.push_back(d);
    return h;
}

int best_node(const std::vector<NodeFit>& fits) {
    int best = -1;
    for (std::size_t i = 0; i < fits.size(); ++i)
        if (fits[i].ok && (best < 0 || fits[i].bic < fits[static_cast<std::size_t>(best)].bic)) best = static_cast<int>(i);
    return best;
}

}  // namespace

Stage1Best stage1(const FitterCache& c, const Vector& y) {
    require(y.size() == c.n, ErrorCode::InvalidInput, "fitter: schedule length mismatch");
    require(y.allFinite(), ErrorCode::InvalidInput, "fitter: schedule must be finite");
    Stage1Best best;
    bool found = false;
    for (int g = 0; g < c.n_clusters(); ++g)
        for (int d : hypotheses(c)) {
            const auto fits = stage1_grid(c, g, d, y);
            for (std::size_t i = 0; i < fits.size(); ++i) {
                if (!fits[i].ok) {
                    ++best.skipped;
                    continue;
                }
                if (!found || fits[i].bic < best.fit.bic) {
                    found = true;
                    best.grid = g;
                    best.d = d;
                    best.node = static_cast<int>(i);
                    best.fit = fits[i];
                }
            }
        }
    require(found, ErrorCode::DomainError, "fitter: every stage-1 candidate was singular");
    return best;
}

Refinement stage2(const FitterCache& c, int grid, int d, int start_node, double start_delta, const Vector& y,
                  const FitOptions& opts) {
    const TrajectoryGrid& g = c.grids[static_cast<std::size_t>(grid)];
    Refinement out;
    double e_ref = g.e0[start_node];
    double delta = start_delta;
    const auto n = static_cast<std::size_t>(c.n);
    const double* dv = d > 0 ? c.profiles[static_cast<std::size_t>(d)].data() : nullptr;
    auto clamp = [&](double x) {
        if (x < g.e0_min() || x > g.e0_max()) out.clamped = true;
        return std::clamp(x, g.e0_min(), g.e0_max());
    };
    while (std::abs(delta) >= opts.refine_tol && out.iterations < opts.max_refine) {
        e_ref = clamp(e_ref + delta);
        const Vector z = interpolate(g, e_ref);
        const Vector t = interpolate_tangent(g, e_ref);
        const Vector r = y - z;
        const double tt = dot(t.data(), t.data(), n);
        const double td = d > 0 ? dot(t.data(), dv, n) : 0.0;
        const NodeFit f = solve_node(r.data(), t.data(), dv, tt, td, d > 0 ? c.dd[static_cast<std::size_t>(d)] : 0.0, c.n);
        ++out.iterations;
        if (!f.ok) {
            delta = 0.0;
            break;
        }
        delta = f.delta;
    }
    out.last_delta = delta;
    out.e0 = clamp(e_ref + delta);
    return out;
}

double log_bayes_factor(int p, double rss0, double rss, double lambda, double info, double sigma_lambda) {
    return 0.5 * p * std::log(rss0 / rss) - lambda * lambda / (2.0 * sigma_lambda * sigma_lambda) - 0.5 * std::log(info) +
           0.5 * std::log(2.0 * std::numbers::pi);
}

std::array<double, 3> multi_disruption(const Vector& r, const FitterCache& c) {
    std::vector<int> types;
    for (int d = 1; d <= 3; ++d)
        if (c.has_profile[static_cast<std::size_t>(d)]) types.push_back(d);
    std::array<double, 3> out{0, 0, 0};
    if (types.empty()) return out;
    Matrix x(r.size(), static_cast<Eigen::Index>(types.size()));
    for (std::size_t j = 0; j < types.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = c.profiles[static_cast<std::size_t>(types[j])];
    const Vector beta = x.colPivHouseholderQr().solve(r);
    for (std::size_t j = 0; j < types.size(); ++j) out[static_cast<std::size_t>(types[j] - 1)] = beta[static_cast<Eigen::Index>(j)];
    return out;
}

void decide(FitResult& fit, double sigma_lambda, double gap_threshold) {
    int best = 0;
    double best_bf = -INFINITY;
    for (int d = 1; d <= 3; ++d) {
        TypeEval& te = fit.types[static_cast<std::size_t>(d)];
        if (!te.available) {
            fit.log_bf[static_cast<std::size_t>(d)] = -INFINITY;
            continue;
        }
        const double bf = log_bayes_factor(fit.n, te.rss0, te.rss, te.lambda, te.info, sigma_lambda);
        fit.log_bf[static_cast<std::size_t>(d)] = bf;
        if (te.lambda > 0.0 && bf > best_bf) best_bf = bf, best = d;
    }
    fit.d = 0;
    if (best > 0 && best_bf > 0.0 && fit.types[static_cast<std::size_t>(best)].gap >= gap_threshold) fit.d = best;
    fit.lambda = fit.d > 0 ? fit.types[static_cast<std::size_t>(fit.d)].lambda : 0.0;
    fit.e0 = fit.types[static_cast<std::size_t>(fit.d)].e0;
    fit.gap = fit.d > 0 ? fit.types[static_cast<std::size_t>(fit.d)].gap : 0.0;
}

FitResult fit_schedule(const FitterCache& c, const Vector& y, const FitOptions& opts) {
    FitResult res;
    res.n = c.n;
    res.stage1 = stage1(c, y);
    res.grid = res.stage1.grid;
    const TrajectoryGrid& g = c.grids[static_cast<std::size_t>(res.grid)];
    res.cluster = g.cluster;
    const auto n = static_cast<std::size_t>(c.n);

    for (int d : hypotheses(c)) {
        const auto fits = stage1_grid(c, res.grid, d, y);
        const int node = best_node(fits);
        TypeEval& te = res.types[static_cast<std::size_t>(d)];
        if (node < 0) continue;
        te.available = true;
        te.refine = stage2(c, res.grid, d, node, fits[static_cast<std::size_t>(node)].delta, y, opts);
        te.e0 = te.refine.e0;
    }
    // exact evaluation at the refined e0 of each hypothesis
    const TypeEval& null = res.types[0];
    require(null.available, ErrorCode::DomainError, "fitter: null model could not be fit");
    for (int d : hypotheses(c)) {
        TypeEval& te = res.types[static_cast<std::size_t>(d)];
        if (!te.available) continue;
        const Vector r = y - interpolate(g, te.e0);
        te.rss0 = std::max(dot(r.data(), r.data(), n), kRssFloor);
        te.gap = te.e0 - null.e0;
        if (d == 0) {
            te.rss = te.rss0;
            continue;
        }
        const Vector& dv = c.profiles[static_cast<std::size_t>(d)];
        const double dd = c.dd[static_cast<std::size_t>(d)];
        te.lambda_raw = dot(dv.data(), r.data(), n) / dd;
        te.lambda = std::max(0.0, te.lambda_raw);
        const Vector e = r - te.lambda * dv;
        te.rss = std::max(dot(e.data(), e.data(), n), kRssFloor);
        const double sigma2 = te.rss0 / c.n;
        te.info = dd / sigma2;
    }
    decide(res, opts.sigma_lambda, opts.gap_threshold);
    res.multi = multi_disruption(y - interpolate(g, res.e0), c);
    return res;
}

std::vector<FitResult> fit_batch(const FitterCache& c, const std::vector<Vector>& ys, const FitOptions& opts) {
    std::vector<FitResult> out(ys.size());
    parallel_for(ys.size(), [&](std::size_t i) { out[i] = fit_schedule(c, ys[i], opts); });
    return out;
}

// ---- identifiability ----------------------------------------------------

IdentifiabilityEntry identifiability_pair(const Vector& tangent, const Vector& delta) {
    IdentifiabilityEntry e;
    const double tn = tangent.norm(), dn = delta.norm();
    require(tn > 0 && dn > 0, ErrorCode::InvalidInput, "identifiability: zero vector");
    const Vector that = tangent / tn;
    const double proj = delta.dot(that);
    e.rho = std::clamp(proj / dn, -1.0, 1.0);
    e.fraction = std::min(1.0, (delta - proj * that).norm() / dn);
    return e;
}

IdentifiabilityReport identifiability(const FitterCache& c) {
    IdentifiabilityReport rep;
    for (int d = 1; d <= 3; ++d) {
        if (!c.has_profile[static_cast<std::size_t>(d)]) continue;
        IdentifiabilitySummary s;
        s.d = d;
        int count = 0;
        for (std::size_t g = 0; g < c.grids.size(); ++g)
            for (Eigen::Index i = 0; i < c.grids[g].tangents.rows(); ++i) {
                const Vector t = c.grids[g].tangents.row(i).transpose();
                if (!(t.norm() > 0)) continue;
                IdentifiabilityEntry e = identifiability_pair(t, c.profiles[static_cast<std::size_t>(d)]);
                e.d = d;
                e.cluster = c.grids[g].cluster;
                e.node = static_cast<int>(i);
                rep.entries.push_back(e);
                s.max_abs_rho = std::max(s.max_abs_rho, std::abs(e.rho));
                s.min_fraction = std::min(s.min_fraction, e.fraction);
                s.mean_abs_rho += std::abs(e.rho);
                s.mean_fraction += e.fraction;
                ++count;
            }
        if (count > 0) s.mean_abs_rho /= count, s.mean_fraction /= count;
        rep.summary.push_back(s);
    }
    return rep;
}

// ---- planted corpus and cross-validation --------------------------------

std::vector<PlantedSchedule> planted_corpus(const FitterCache& c, const CorpusOptions& opts) {
    std::vector<int> types;
    for (int d = 1; d <= 3; ++d)
        if (c.has_profile[static_cast<std::size_t>(d)]) types.push_back(d);
    Rng rng(opts.seed);
    std::vector<PlantedSchedule> out;
    for (int i = 0; i < opts.n; ++i) {
        PlantedSchedule p;
        p.grid = static_cast<int>(rng.index(c.grids.size()));
        const TrajectoryGrid& g = c.grids[static_cast<std::size_t>(p.grid)];
        p.cluster = g.cluster;
        const double lo = g.e0_min() + opts.margin, hi = g.e0_max() - opts.margin;
        p.e0 = hi > lo ? rng.uniform(lo, hi) : 0.5 * (g.e0_min() + g.e0_max());
        const bool null = types.empty() || rng.uniform() < opts.null_fraction;
        p.y = interpolate(g, p.e0);
        if (!null) {
            p.d = types[rng.index(types.size())];
            p.lambda = rng.uniform(opts.lambda_min, opts.lambda_max);
            p.y += p.lambda * c.profiles[static_cast<std::size_t>(p.d)];
        }
        for (Eigen::Index j = 0; j < p.y.size(); ++j) p.y[j] += opts.noise_sd * rng.normal();
        out.push_back(std::move(p));
    }
    return out;
}

int Confusion::total() const {
    int t = 0;
    for (const auto& row : counts)
        for (int v : row) t += v;
    return t;
}

double Confusion::accuracy() const {
    const int t = total();
    if (t == 0) return 0.0;
    int ok = 0;
    for (int i = 0; i < 4; ++i) ok += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    return static_cast<double>(ok) / t;
}

CvMetrics evaluate_thresholds(const std::vector<FitResult>& fits, const std::vector<int>& true_d,
                              const std::vector<double>& true_lambda, const std::vector<std::size_t>& rows,
                              double sigma_lambda, double gap_threshold, double strong_lambda) {
    CvMetrics m;
    int strong = 0, strong_ok = 0, strong_det = 0, nulls = 0;
    for (std::size_t i : rows) {
        FitResult f = fits[i];
        decide(f, sigma_lambda, gap_threshold);
        const int td = true_d[i];
        m.all.counts[static_cast<std::size_t>(td)][static_cast<std::size_t>(f.d)]++;
        if (td == 0) {
            ++nulls;
            if (f.d > 0) ++m.false_positives;
        } else if (true_lambda[i] > strong_lambda) {
            ++strong;
            m.strong.counts[static_cast<std::size_t>(td)][static_cast<std::size_t>(f.d)]++;
            if (f.d == td) ++strong_ok;
            if (f.d > 0) ++strong_det;
        }
    }
    m.strong_accuracy = strong > 0 ? static_cast<double>(strong_ok) / strong : 0.0;
    m.detection = strong > 0 ? static_cast<double>(strong_det) / strong : 0.0;
    m.fp_rate = nulls > 0 ? static_cast<double>(m.false_positives) / nulls : 0.0;
    return m;
}

CvResult cv_sweep(const std::vector<FitResult>& fits, const std::vector<int>& true_d,
                  const std::vector<double>& true_lambda, const CvOptions& opts) {
    require(fits.size() == true_d.size() && fits.size() == true_lambda.size(), ErrorCode::InvalidInput,
            "cv_sweep: label count mismatch");
    require(opts.folds >= 2, ErrorCode::ConfigError, "cv_sweep: need at least two folds");
    require(!opts.sigma_grid.empty() && !opts.gap_grid.empty(), ErrorCode::ConfigError, "cv_sweep: empty grid");
    // stratified assignment: shuffle within each true class, deal round-robin
    std::vector<int> fold(fits.size(), 0);
    Rng rng(opts.seed);
    for (int cls = 0; cls < 4; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < fits.size(); ++i)
            if (true_d[i] == cls) idx.push_back(i);
        rng.shuffle(idx);
        for (std::size_t j = 0; j < idx.size(); ++j) fold[idx[j]] = static_cast<int>(j % static_cast<std::size_t>(opts.folds));
    }
    for (int f = 0; f < opts.folds; ++f) {
        bool pos = false;
        for (std::size_t i = 0; i < fits.size(); ++i) pos = pos || (fold[i] == f && true_d[i] > 0);
        if (!pos) fail(ErrorCode::StratificationError, "cv_sweep: fold " + std::to_string(f) + " has no positive schedules");
    }

    CvResult res;
    std::map<std::pair<std::size_t, std::size_t>, int> votes;
    for (int f = 0; f < opts.folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < fits.size(); ++i) (fold[i] == f ? test : train).push_back(i);
        std::size_t bs = 0, bg = 0;
        CvMetrics best;
        bool have = false, have_ok = false;
        for (std::size_t si = 0; si < opts.sigma_grid.size(); ++si)
            for (std::size_t gi = 0; gi < opts.gap_grid.size(); ++gi) {
                const CvMetrics m = evaluate_thresholds(fits, true_d, true_lambda, train, opts.sigma_grid[si],
                                                        opts.gap_grid[gi], opts.strong_lambda);
                const bool ok = m.fp_rate <= opts.fp_budget;
                bool take = false;
                if (!have)
                    take = true;
                else if (ok && !have_ok)
                    take = true;
                else if (ok == have_ok) {
                    if (ok)
                        take = m.strong_accuracy > best.strong_accuracy;
                    else
                        take = m.fp_rate < best.fp_rate;
                }
                if (take) {
                    best = m;
                    bs = si;
                    bg = gi;
                    have = true;
                    have_ok = ok;
                }
            }
        CvFold cf;
        cf.sigma_lambda = opts.sigma_grid[bs];
        cf.gap = opts.gap_grid[bg];
        cf.train = best;
        cf.test = evaluate_thresholds(fits, true_d, true_lambda, test, cf.sigma_lambda, cf.gap, opts.strong_lambda);
        res.folds.push_back(cf);
        ++votes[{bs, bg}];
    }
    std::pair<std::size_t, std::size_t> chosen{0, 0};
    int most = -1;
    for (const auto& [key, n] : votes)
        if (n > most) most = n, chosen = key;  // map order breaks ties toward the earlier grid entry
    res.sigma_lambda = opts.sigma_grid[chosen.first];
    res.gap = opts.gap_grid[chosen.second];
    std::vector<std::size_t> all(fits.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    res.overall = evaluate_thresholds(fits, true_d, true_lambda, all, res.sigma_lambda, res.gap, opts.strong_lambda);
    return res;
}

}  // namespace mdmx
