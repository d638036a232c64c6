#include "mdmx/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "mdmx/error.hpp"
#include "mdmx/forecast.hpp"
#include "mdmx/parallel.hpp"
#include "mdmx/store.hpp"
#include "mdmx/synth.hpp"

namespace mdmx {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

// Stage seeds are offsets from the configured seed so stages stay independent.
enum SeedStream : std::uint64_t {
    kSeedSynth = 0,
    kSeedCluster = 101,
    kSeedTrajectory = 202,
    kSeedDisruption = 303,
    kSeedSub = 404,
    kSeedFit = 505,
    kSeedPredict = 606,
    kSeedPlanted = 707,
};

std::string dir_of(const std::string& work, const std::string& stage) { return join_path(work, stage); }

std::string need_store(const std::string& work, const std::string& stage) {
    const std::string dir = dir_of(work, stage);
    const std::string manifest = join_path(dir, "manifest.json");
    if (!path_exists(manifest)) fail(ErrorCode::MissingInput, "missing upstream store: " + manifest);
    return dir;
}

std::string need_file(const std::string& path) {
    if (!path_exists(path)) fail(ErrorCode::MissingInput, "missing input file: " + path);
    return path;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

// Rows of a CSV written by this module, header dropped.
std::vector<std::vector<std::string>> read_rows(const std::string& path, const std::string& header) {
    std::ifstream in(need_file(path));
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::ParseError, path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header.empty() && line != header) fail(ErrorCode::ParseError, path + ": unexpected header '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) rows.push_back(split(line));
    }
    return rows;
}

double to_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::ParseError, where + ": not a number: '" + s + "'");
    }
}

int to_int(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::ParseError, where + ": not an integer: '" + s + "'");
    }
}

std::vector<int> row_major(const IntMatrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    return out;
}

IntMatrix from_row_major(const std::vector<int>& v, int rows, int cols) {
    require(static_cast<long>(v.size()) == static_cast<long>(rows) * cols, ErrorCode::ParseError,
            "integer matrix size mismatch");
    IntMatrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i) * cols + j];
    return m;
}

Vector std_to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---- run log ------------------------------------------------------------

class RunLog {
public:
    RunLog(std::string stage, std::string work, const PipelineConfig& cfg)
        : stage_(std::move(stage)), work_(std::move(work)), start_(Clock::now()), last_(start_) {
        log_["stage"] = stage_;
        log_["version"] = kVersion;
        log_["config_hash"] = config_hash(cfg);
        log_["seed"] = cfg.seed;
        log_["threads"] = thread_count();
        log_["inputs"] = json::object();
        log_["outputs"] = json::object();
        log_["timings"] = json::object();
        log_["warnings"] = json::array();
    }

    void input(const std::string& path) { log_["inputs"][path] = sha256_file(path); }
    void input_store(const std::string& dir) { input(join_path(dir, "manifest.json")); }
    void output(const std::string& path) { log_["outputs"][path] = sha256_file(path); }
    void warn(const std::string& w) { log_["warnings"].push_back(w); }
    void warn_all(const std::vector<std::string>& ws) {
        for (const auto& w : ws) warn(w);
    }

    void lap(const std::string& step) {
        const auto now = Clock::now();
        log_["timings"][step] = std::chrono::duration<double>(now - last_).count();
        last_ = now;
    }

    json finish(json summary) {
        log_["timings"]["total"] = std::chrono::duration<double>(Clock::now() - start_).count();
        log_["summary"] = summary;
        const std::string path = join_path(join_path(work_, "logs"), stage_ + ".json");
        write_text(path, log_.dump(1) + "\n");
        summary["log"] = path;
        summary["seconds"] = log_["timings"]["total"];
        return summary;
    }

private:
    using Clock = std::chrono::steady_clock;
    std::string stage_, work_;
    Clock::time_point start_, last_;
    json log_;
};

// Store writer whose CSV side files are listed with their hashes in the manifest.
void add_file(StoreWriter& w, RunLog& log, const std::string& name) {
    const std::string path = join_path(w.dir(), name);
    w.meta()["files"][name] = sha256_file(path);
    log.output(path);
}

void finish_store(StoreWriter& w, RunLog& log, const PipelineConfig& cfg) {
    w.meta()["config_hash"] = config_hash(cfg);
    w.meta()["seed"] = cfg.seed;
    w.finish();
    log.output(join_path(w.dir(), "manifest.json"));
}

// ---- shared readers -----------------------------------------------------

RawSeries read_series(const std::string& dir) {
    return ingest({need_file(join_path(dir, "lifetables.csv"))}, {need_file(join_path(dir, "counts.csv"))});
}

void write_labels(const YearLabels& labels, const std::string& path) {
    std::ostringstream out;
    out << "pop,year,type\n";
    for (const auto& [key, d] : labels) out << key.first << ',' << key.second << ',' << disruption_name(d) << '\n';
    write_text(path, out.str());
}

YearLabels read_labels(const std::string& path) {
    YearLabels labels;
    for (const auto& r : read_rows(path, "pop,year,type")) {
        require(r.size() == 3, ErrorCode::ParseError, path + ": expected 3 fields");
        labels[{r[0], to_int(r[1], path)}] = disruption_from_name(r[2]);
    }
    return labels;
}

TensorConfig tensor_config(const PipelineConfig& cfg) {
    TensorConfig tc;
    tc.min_years = cfg.data.min_years;
    tc.imputation_weight = cfg.data.imputation_weight;
    tc.q_min = cfg.data.q_min;
    return tc;
}

std::string events_path(const PipelineConfig& cfg) {
    return cfg.data.events.empty() ? default_events_path() : cfg.data.events;
}

ClusterOptions cluster_options(const PipelineConfig& cfg) {
    ClusterOptions o;
    o.k_min = cfg.cluster.k_min;
    o.k_max = cfg.cluster.k_max;
    o.k_override = cfg.cluster.k;
    o.pca_fraction = cfg.cluster.pca_fraction;
    o.gmm.restarts = cfg.cluster.restarts;
    o.gmm.max_iter = cfg.cluster.max_iter;
    o.gmm.seed = cfg.seed + kSeedCluster;
    return o;
}

EpochParams epoch_params(const PipelineConfig& cfg) {
    EpochParams p;
    p.window = cfg.cluster.epoch_window;
    p.delta = cfg.cluster.epoch_delta;
    p.delta_rapid = cfg.cluster.epoch_delta_rapid;
    p.lowess_frac = cfg.trajectory.lowess_frac;
    return p;
}

std::vector<int> load_cluster_labels(const std::string& work, int& k) {
    const StoreReader r(need_store(work, "cluster"));
    k = r.meta().at("k").get<int>();
    return r.ints("labels");
}

IndicatorOptions indicator_options(const PipelineConfig& cfg, int variant_offset) {
    IndicatorOptions o;
    o.alpha = cfg.predict.alpha;
    o.epochs = cfg.predict.epochs;
    o.patience = cfg.predict.patience;
    o.seed = cfg.seed + kSeedPredict + static_cast<std::uint64_t>(variant_offset);
    return o;
}

MleOptions mle_options(const PipelineConfig& cfg) {
    MleOptions m;
    m.rho_min = cfg.forecast.rho_min;
    m.rho_max = cfg.forecast.rho_max;
    m.min_years = cfg.forecast.min_train;
    return m;
}

void write_indicator(StoreWriter& w, const std::string& prefix, const IndicatorModel& m) {
    w.put_mlp(prefix + ".net", m.net);
    w.put(prefix + ".input_mean", m.input_mean);
    w.put(prefix + ".input_sd", m.input_sd);
    w.meta()["models"][prefix] = {{"variant", m.variant == IndicatorVariant::OneParameter ? "one" : "two"},
                                  {"c_age", m.c_age},
                                  {"val_rmse", m.val_rmse},
                                  {"val_rmse_working", m.val_rmse_working},
                                  {"n_train", m.n_train},
                                  {"epochs_run", m.report.epochs_run},
                                  {"best_epoch", m.report.best_epoch}};
}

std::vector<double> json_probs(const json& args, const char* a, const char* b) {
    std::vector<double> out;
    if (args.contains(a) || args.contains(b)) {
        if (!args.contains(a) || !args.contains(b))
            fail(ErrorCode::ConfigError, std::string("predict: ") + a + " and " + b + " must be given together");
        out.push_back(args.at(a).get<double>());
        out.push_back(args.at(b).get<double>());
    }
    return out;
}

std::string lifetable_rows(const std::string& pop, int year, const Vector& qx, int ages) {
    std::ostringstream out;
    const Vector ax = default_ax(ages);
    for (int s = 0; s < 2; ++s) {
        const Vector q = qx.segment(static_cast<Eigen::Index>(s) * ages, ages);
        const LifeTable lt = lifetable_from_mx_ax(mx_from_qx(q, ax), ax);
        for (int a = 0; a < ages; ++a)
            out << pop << ',' << (s == 0 ? "f" : "m") << ',' << year << ',' << a << ',' << fmt_double(lt.mx[a]) << ','
                << fmt_double(lt.qx[a]) << ',' << fmt_double(lt.ax[a]) << ',' << fmt_double(lt.lx[a]) << ','
                << fmt_double(lt.dx[a]) << ',' << fmt_double(lt.Lx[a]) << ',' << fmt_double(lt.Tx[a]) << ','
                << fmt_double(lt.ex[a]) << '\n';
    }
    return out.str();
}

constexpr const char* kLifetableHeader = "pop,sex,year,age,mx,qx,ax,lx,dx,Lx,Tx,ex\n";

}  // namespace

// ---- loaders ------------------------------------------------------------

MortalityTensor load_tensor(const std::string& work, ExceptionalSet* exceptional) {
    const StoreReader r(need_store(work, "tensor"));
    MortalityTensor t;
    t.ages = r.meta().at("ages").get<int>();
    t.pops = r.meta().at("pops").get<std::vector<std::string>>();
    t.years = r.meta().at("years").get<std::vector<int>>();
    const int c = t.n_pop(), n = t.n_year();
    t.values = Tensor4({2, t.ages, c, n});
    const Vector v = r.vector("values");
    require(static_cast<std::size_t>(v.size()) == t.values.size(), ErrorCode::ParseError, "tensor size mismatch");
    std::copy(v.data(), v.data() + v.size(), t.values.data().begin());
    t.observed = from_row_major(r.ints("observed"), c, n);
    t.labels = from_row_major(r.ints("labels"), c, n);
    t.weights = r.matrix("weights");
    if (exceptional) {
        exceptional->cells.clear();
        const std::vector<int> cells = r.ints("exceptional.cells");
        const Matrix z = r.matrix("exceptional.z");
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            const auto k = static_cast<std::size_t>(3 * i);
            exceptional->cells.push_back({cells[k], cells[k + 1], cells[k + 2], z.row(i).transpose()});
        }
    }
    return t;
}

TuckerModel load_tucker(const std::string& work) {
    const StoreReader r(need_store(work, "decompose"));
    TuckerModel m;
    const char* names[4] = {"S", "A", "C", "T"};
    for (int i = 0; i < 4; ++i) {
        m.factors[static_cast<std::size_t>(i)] = r.matrix(names[i]);
        m.spectra[static_cast<std::size_t>(i)] = r.vector(std::string("spectrum.") + names[i]);
    }
    const json& meta = r.meta();
    m.ranks = meta.at("ranks").get<std::array<int, 4>>();
    m.variance_fraction = meta.at("variance_fraction").get<std::array<double, 4>>();
    m.tau = meta.at("tau").get<double>();
    m.weighted = meta.at("weighted").get<bool>();
    m.core = Tensor4(m.ranks);
    const Vector g = r.vector("core");
    require(static_cast<std::size_t>(g.size()) == m.core.size(), ErrorCode::ParseError, "core size mismatch");
    std::copy(g.data(), g.data() + g.size(), m.core.data().begin());
    if (meta.contains("smoothing") && !meta["smoothing"].is_null()) {
        AgeSmoothingSpec spec;
        spec.leading.clear();
        auto params = [](const json& p) { return AgeSmoothingParams{p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()}; };
        for (const auto& p : meta["smoothing"].at("leading")) spec.leading.push_back(params(p));
        spec.tail = params(meta["smoothing"].at("tail"));
        spec.preserved_ages = meta["smoothing"].at("preserved_ages").get<std::vector<int>>();
        spec.tolerance = meta["smoothing"].at("tolerance").get<double>();
        m.smoothing = spec;
    }
    return m;
}

ClusterSummary load_cluster_summary(const std::string& work) {
    const StoreReader r(need_store(work, "cluster"));
    ClusterSummary s;
    s.k = r.meta().at("k").get<int>();
    s.cell_count.assign(static_cast<std::size_t>(s.k), 0);
    s.pops.resize(static_cast<std::size_t>(s.k));
    for (int l : r.ints("labels"))
        if (l >= 0 && l < s.k) ++s.cell_count[static_cast<std::size_t>(l)];
    const auto pops = r.meta().at("pops").get<std::vector<std::string>>();
    const auto country = r.ints("country_labels");
    for (std::size_t c = 0; c < pops.size() && c < country.size(); ++c)
        if (country[c] >= 0 && country[c] < s.k) s.pops[static_cast<std::size_t>(country[c])].push_back(pops[c]);
    return s;
}

std::vector<int> load_country_labels(const std::string& work) {
    const StoreReader r(need_store(work, "cluster"));
    return r.ints("country_labels");
}

TrajectorySet load_trajectories(const std::string& work) {
    const StoreReader r(need_store(work, "trajectory"));
    TrajectorySet set;
    for (const auto& g : r.meta().at("grids")) {
        TrajectoryGrid grid;
        grid.cluster = g.at("cluster").get<int>();
        grid.n_obs = g.at("n_obs").get<int>();
        const std::string p = "grid" + std::to_string(grid.cluster);
        grid.e0 = r.vector(p + ".e0");
        grid.values = r.matrix(p + ".values");
        grid.tangents = r.matrix(p + ".tangents");
        set.grids.push_back(std::move(grid));
    }
    set.skipped = r.meta().at("skipped").get<std::vector<int>>();
    return set;
}

bool has_neural_trajectory(const std::string& work) {
    const StoreReader r(need_store(work, "trajectory"));
    return r.meta().value("neural", false);
}

NeuralTrajectory load_neural_trajectory(const std::string& work) {
    const StoreReader r(need_store(work, "trajectory"));
    if (!r.meta().value("neural", false)) fail(ErrorCode::MissingInput, "trajectory store has no neural model");
    NeuralTrajectory nt;
    nt.net = r.mlp("neural.net");
    nt.embeddings.e = r.matrix("neural.embeddings");
    nt.embeddings.scale = r.meta().at("embedding_scale").get<double>();
    nt.encoding.e0_min = r.meta().at("encoding").at(0).get<double>();
    nt.encoding.e0_max = r.meta().at("encoding").at(1).get<double>();
    nt.train_mse = r.meta().at("neural_train_mse").get<double>();
    return nt;
}

DisruptionModel load_disruptions(const std::string& work) {
    const StoreReader r(need_store(work, "disruption"));
    DisruptionModel dm;
    dm.method = baseline_from_name(r.meta().at("method").get<std::string>());
    dm.ages = r.meta().at("ages").get<int>();
    for (const auto& p : r.meta().at("profiles")) {
        DisruptionProfile prof;
        prof.type = p.at("type").get<int>();
        prof.n_events = p.at("n_events").get<int>();
        prof.cosine = p.at("cosine").get<double>();
        const std::string n = "profile" + std::to_string(prof.type);
        prof.raw = r.vector(n + ".raw");
        prof.smoothed = r.vector(n + ".smoothed");
        dm.profiles[prof.type] = std::move(prof);
    }
    for (const auto& s : r.meta().at("subclusters")) {
        SubClustering sc;
        sc.type = s.at("type").get<int>();
        sc.k = s.at("k").get<int>();
        for (const auto& e : s.at("silhouettes")) sc.silhouettes.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
        const std::string n = "sub" + std::to_string(sc.type);
        sc.labels = r.ints(n + ".labels");
        for (int j = 0; j < sc.k; ++j) {
            sc.raw_profiles.push_back(r.vector(n + ".raw" + std::to_string(j)));
            sc.profiles.push_back(r.vector(n + ".profile" + std::to_string(j)));
        }
        sc.embeddings = r.matrix(n + ".embeddings");
        sc.net = r.mlp(n + ".net");
        dm.subclusters[sc.type] = std::move(sc);
    }
    const Matrix base = r.matrix("events.baseline"), res = r.matrix("events.residual"), stats = r.matrix("events.stats");
    const std::vector<int> keys = r.ints("events.keys");
    for (Eigen::Index i = 0; i < base.rows(); ++i) {
        EventRecord e;
        const std::size_t k = static_cast<std::size_t>(4 * i);
        e.c = keys[k];
        e.t = keys[k + 1];
        e.type = keys[k + 2];
        e.subcluster = keys[k + 3];
        e.lambda = stats(i, 0);
        e.r2 = stats(i, 1);
        e.orth_norm = stats(i, 2);
        e.r2_sub = stats(i, 3);
        e.baseline = base.row(i).transpose();
        e.residual = res.row(i).transpose();
        dm.events.push_back(std::move(e));
    }
    dm.warnings = r.meta().at("warnings").get<std::vector<std::string>>();
    return dm;
}

FitCalibration load_fit_calibration(const std::string& work) {
    const StoreReader r(need_store(work, "fit"));
    FitCalibration c;
    c.sigma_lambda = r.meta().at("sigma_lambda").get<double>();
    c.gap = r.meta().at("gap").get<double>();
    c.calibrated = r.meta().at("calibrated").get<bool>();
    return c;
}

IndicatorModel load_indicator_model(const std::string& work, IndicatorVariant variant) {
    const StoreReader r(need_store(work, "predict"));
    const std::string prefix = variant == IndicatorVariant::OneParameter ? "one" : "two";
    IndicatorModel m;
    m.variant = variant;
    const json& meta = r.meta().at("models").at(prefix);
    m.c_age = meta.at("c_age").get<int>();
    m.val_rmse = meta.at("val_rmse").get<double>();
    m.val_rmse_working = meta.at("val_rmse_working").get<double>();
    m.n_train = meta.at("n_train").get<int>();
    m.net = r.mlp(prefix + ".net");
    m.input_mean = r.vector(prefix + ".input_mean");
    m.input_sd = r.vector(prefix + ".input_sd");
    return m;
}

std::map<int, Vector> profile_map(const DisruptionModel& dm) {
    std::map<int, Vector> out;
    for (const auto& [type, p] : dm.profiles) out[type] = p.smoothed;
    return out;
}

std::vector<TrajectoryGrid> fitter_grids(const TrajectorySet& set) {
    std::vector<TrajectoryGrid> out;
    for (const auto& g : set.grids)
        if (g.cluster >= 1) out.push_back(g);
    if (out.empty())
        for (const auto& g : set.grids) out.push_back(g);
    require(!out.empty(), ErrorCode::InsufficientData, "no trajectory grids available for fitting");
    return out;
}

json fit_result_json(const FitResult& r) {
    json types = json::array();
    for (int d = 0; d < 4; ++d) {
        const TypeEval& t = r.types[static_cast<std::size_t>(d)];
        types.push_back({{"type", disruption_name(d)},
                         {"available", t.available},
                         {"e0", t.e0},
                         {"lambda", t.lambda},
                         {"lambda_raw", t.lambda_raw},
                         {"rss", t.rss},
                         {"rss0", t.rss0},
                         {"log_bf", r.log_bf[static_cast<std::size_t>(d)]},
                         {"gap", t.gap}});
    }
    return {{"cluster", r.cluster},
            {"e0", r.e0},
            {"type", disruption_name(r.d)},
            {"d", r.d},
            {"lambda", r.lambda},
            {"gap", r.gap},
            {"n", r.n},
            {"log_bf", {{"war", r.log_bf[1]}, {"respiratory", r.log_bf[2]}, {"enteric", r.log_bf[3]}}},
            {"multi", {{"war", r.multi[0]}, {"respiratory", r.multi[1]}, {"enteric", r.multi[2]}}},
            {"stage1", {{"cluster", r.cluster}, {"node", r.stage1.node}, {"type", disruption_name(r.stage1.d)},
                        {"bic", r.stage1.fit.bic}, {"skipped", r.stage1.skipped}}},
            {"types", types}};
}

namespace {

// ---- stages -------------------------------------------------------------

std::string truth_path(const std::string& out) {
    const auto dot = out.rfind('.');
    const auto slash = out.find_last_of('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out + ".truth.csv";
    return out.substr(0, dot) + ".truth" + out.substr(dot);
}

json stage_synth_schedules(const std::string& work, const PipelineConfig& cfg, const json& args) {
    const std::string bundle = args.value("bundle", work);
    const std::string out = args.at("out").get<std::string>();
    RunLog log("synth", work, cfg);
    const std::string tdir = need_store(bundle, "trajectory"), ddir = need_store(bundle, "disruption");
    log.input_store(tdir);
    log.input_store(ddir);
    const FitterCache cache = make_fitter_cache(fitter_grids(load_trajectories(bundle)), profile_map(load_disruptions(bundle)));
    CorpusOptions co;
    co.n = args.at("schedules").get<int>();
    require(co.n >= 1, ErrorCode::ConfigError, "synth: schedules must be positive");
    co.null_fraction = cfg.fit.null_fraction;
    co.seed = cfg.seed + kSeedPlanted;
    const auto corpus = planted_corpus(cache, co);
    log.lap("corpus");

    std::ostringstream z, t;
    z << "id";
    for (int i = 0; i < cache.n; ++i) z << ",z" << i;
    z << '\n';
    t << "id,cluster,e0,type,lambda\n";
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& p = corpus[i];
        z << "s" << i;
        for (Eigen::Index k = 0; k < p.y.size(); ++k) z << ',' << fmt_double(p.y[k]);
        z << '\n';
        t << "s" << i << ',' << p.cluster << ',' << fmt_double(p.e0) << ',' << disruption_name(p.d) << ','
          << fmt_double(p.lambda) << '\n';
    }
    write_text(out, z.str());
    write_text(truth_path(out), t.str());
    log.output(out);
    log.output(truth_path(out));
    return log.finish({{"schedules", corpus.size()}, {"out", out}, {"truth", truth_path(out)}});
}

json stage_synth(const std::string& work, const PipelineConfig& cfg, const json& args) {
    if (args.contains("schedules")) return stage_synth_schedules(work, cfg, args);
    RunLog log("synth", work, cfg);
    SynthConfig sc;
    sc.countries = cfg.synth.countries;
    sc.years = cfg.synth.years;
    sc.first_year = cfg.synth.first_year;
    sc.regimes = cfg.synth.regimes;
    sc.seed = cfg.seed + kSeedSynth;
    sc.plant_disruptions = cfg.synth.plant_disruptions;
    sc.plant_curation_cases = cfg.synth.plant_curation_cases;
    sc.events_path = cfg.data.events;
    SynthTruth truth;
    const RawSeries raw = synthesize(sc, &truth);
    log.lap("synthesize");

    StoreWriter w(dir_of(work, "raw"));
    write_lifetable_csv(raw, join_path(w.dir(), "lifetables.csv"));
    write_counts_csv(raw, join_path(w.dir(), "counts.csv"));
    std::ostringstream regimes, planted;
    regimes << "pop,regime\n";
    for (const auto& [pop, r] : truth.regime) regimes << pop << ',' << r << '\n';
    planted << "pop,year,intensity\n";
    for (const auto& [key, lambda] : truth.intensity) planted << key.first << ',' << key.second << ',' << fmt_double(lambda) << '\n';
    write_text(join_path(w.dir(), "truth_regimes.csv"), regimes.str());
    write_text(join_path(w.dir(), "truth_events.csv"), planted.str());
    for (const char* f : {"lifetables.csv", "counts.csv", "truth_regimes.csv", "truth_events.csv"}) add_file(w, log, f);
    w.meta()["countries"] = sc.countries;
    w.meta()["years"] = sc.years;
    w.meta()["first_year"] = sc.first_year;
    w.meta()["tables"] = raw.tables.size();
    finish_store(w, log, cfg);
    return log.finish({{"tables", raw.tables.size()}, {"populations", raw.populations().size()},
                       {"planted_events", truth.intensity.size()}});
}

json stage_ingest(const std::string& work, const PipelineConfig& cfg, const json& args) {
    RunLog log("ingest", work, cfg);
    std::vector<std::string> lt, counts;
    if (args.contains("lifetables")) {
        lt = args.at("lifetables").get<std::vector<std::string>>();
        if (args.contains("counts")) counts = args.at("counts").get<std::vector<std::string>>();
    } else {
        const std::string raw_dir = need_store(work, "raw");
        lt = {join_path(raw_dir, "lifetables.csv")};
        counts = {join_path(raw_dir, "counts.csv")};
    }
    for (const auto& p : lt) log.input(need_file(p));
    for (const auto& p : counts) log.input(need_file(p));
    const RawSeries raw = ingest(lt, counts);
    log.lap("read");

    CurationConfig cc;
    cc.flat_age_a = cfg.data.flat_age_a;
    cc.flat_age_b = cfg.data.flat_age_b;
    cc.excluded_pops = cfg.data.excluded_pops;
    CurationReport report;
    const RawSeries curated = curate(raw, cc, &report);
    const std::string ev = events_path(cfg);
    log.input(need_file(ev));
    LabelReport lr;
    const YearLabels labels = label_exceptional(curated, load_events(ev), &lr);
    log.lap("curate");

    StoreWriter w(dir_of(work, "ingest"));
    write_lifetable_csv(curated, join_path(w.dir(), "lifetables.csv"));
    write_counts_csv(curated, join_path(w.dir(), "counts.csv"));
    write_labels(labels, join_path(w.dir(), "labels.csv"));
    std::ostringstream cur;
    cur << "pop,sex,year,reason\n";
    for (const auto& e : report.dropped)
        cur << e.key.pop << ',' << (e.key.sex == kFemale ? 'f' : 'm') << ',' << e.key.year << ',' << e.reason << '\n';
    write_text(join_path(w.dir(), "curation.csv"), cur.str());
    for (const char* f : {"lifetables.csv", "counts.csv", "labels.csv", "curation.csv"}) add_file(w, log, f);
    w.meta()["unresolved_event_codes"] = lr.unresolved;
    w.meta()["tables"] = curated.tables.size();
    w.meta()["dropped"] = report.dropped.size();
    finish_store(w, log, cfg);
    return log.finish({{"tables", curated.tables.size()}, {"dropped", report.dropped.size()},
                       {"exceptional_years", labels.size()}});
}

json stage_pool(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("pool", work, cfg);
    const std::string in = need_store(work, "ingest");
    log.input_store(in);
    const RawSeries raw = read_series(in);
    const YearLabels labels = read_labels(join_path(in, "labels.csv"));
    PoolingReport report;
    const RawSeries pooled = adaptive_pool(raw, labels, {cfg.data.q_thresh}, &report);
    log.lap("pool");

    StoreWriter w(dir_of(work, "pool"));
    write_lifetable_csv(pooled, join_path(w.dir(), "lifetables.csv"));
    write_counts_csv(pooled, join_path(w.dir(), "counts.csv"));
    write_labels(labels, join_path(w.dir(), "labels.csv"));
    std::ostringstream blocks;
    blocks << "pop,sex,first_year,last_year,n_years,exceptional,resolved\n";
    int multi = 0;
    for (const auto& b : report.blocks) {
        blocks << b.pop << ',' << (b.sex == kFemale ? 'f' : 'm') << ',' << b.years.front() << ',' << b.years.back()
               << ',' << b.years.size() << ',' << b.exceptional << ',' << b.resolved << '\n';
        multi += b.years.size() > 1;
    }
    write_text(join_path(w.dir(), "pooling.csv"), blocks.str());
    for (const char* f : {"lifetables.csv", "counts.csv", "labels.csv", "pooling.csv"}) add_file(w, log, f);
    w.meta()["valley_ages"] = report.valley_ages;
    w.meta()["flagged"] = report.flagged;
    w.meta()["q_thresh"] = cfg.data.q_thresh;
    finish_store(w, log, cfg);
    return log.finish({{"blocks", report.blocks.size()}, {"pooled_blocks", multi}, {"flagged", report.flagged}});
}

json stage_tensor(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("tensor", work, cfg);
    const std::string in = need_store(work, "pool");
    log.input_store(in);
    const RawSeries pooled = read_series(in);
    const YearLabels labels = read_labels(join_path(in, "labels.csv"));
    ExceptionalSet exc;
    const MortalityTensor t = assemble_tensor(pooled, labels, tensor_config(cfg), &exc);
    log.lap("assemble");

    StoreWriter w(dir_of(work, "tensor"));
    w.put("values", std_to_vector(t.values.data()));
    w.put_ints("observed", row_major(t.observed), {t.n_pop(), t.n_year()});
    w.put_ints("labels", row_major(t.labels), {t.n_pop(), t.n_year()});
    w.put("weights", t.weights);
    std::vector<int> cells;
    Matrix z(static_cast<Eigen::Index>(exc.cells.size()), 2 * t.ages);
    for (std::size_t i = 0; i < exc.cells.size(); ++i) {
        cells.insert(cells.end(), {exc.cells[i].c, exc.cells[i].t, exc.cells[i].d});
        z.row(static_cast<Eigen::Index>(i)) = exc.cells[i].z.transpose();
    }
    w.put_ints("exceptional.cells", cells, {static_cast<long>(exc.cells.size()), 3});
    w.put("exceptional.z", z);
    w.meta()["ages"] = t.ages;
    w.meta()["pops"] = t.pops;
    w.meta()["years"] = t.years;
    w.meta()["dims"] = t.values.dims();
    w.meta()["observed_cells"] = t.observed.sum();
    w.meta()["exceptional_cells"] = exc.cells.size();
    finish_store(w, log, cfg);
    return log.finish({{"dims", t.values.dims()}, {"observed_cells", t.observed.sum()},
                       {"exceptional_cells", exc.cells.size()}});
}

json smoothing_json(const AgeSmoothingSpec& s) {
    auto params = [](const AgeSmoothingParams& p) { return json::array({p.x_ramp, p.s_min, p.sigma_max}); };
    json leading = json::array();
    for (const auto& p : s.leading) leading.push_back(params(p));
    return {{"leading", leading}, {"tail", params(s.tail)}, {"preserved_ages", s.preserved_ages}, {"tolerance", s.tolerance}};
}

json stage_decompose(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("decompose", work, cfg);
    const std::string in = need_store(work, "tensor");
    log.input_store(in);
    const MortalityTensor t = load_tensor(work);
    RankPolicy policy;
    policy.tau = cfg.tucker.tau;
    TuckerModel m = hosvd(t, policy, cfg.tucker.weighted);
    log.lap("hosvd");
    if (cfg.tucker.smoothing) {
        m = smooth_age_basis(m, t.values);
        log.lap("smoothing");
    }

    StoreWriter w(dir_of(work, "decompose"));
    const char* names[4] = {"S", "A", "C", "T"};
    for (std::size_t i = 0; i < 4; ++i) {
        w.put(names[i], m.factors[i]);
        w.put(std::string("spectrum.") + names[i], m.spectra[i]);
    }
    w.put("core", std_to_vector(m.core.data()));
    w.meta()["ranks"] = m.ranks;
    w.meta()["variance_fraction"] = m.variance_fraction;
    w.meta()["tau"] = m.tau;
    w.meta()["weighted"] = m.weighted;
    w.meta()["smoothing"] = m.smoothing ? smoothing_json(*m.smoothing) : json(nullptr);
    w.meta()["data_hash"] = sha256_file(join_path(in, "manifest.json"));
    w.meta()["pops"] = t.pops;
    w.meta()["years"] = t.years;
    finish_store(w, log, cfg);
    return log.finish({{"ranks", m.ranks}, {"variance_fraction", m.variance_fraction}});
}

json stage_cluster(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("cluster", work, cfg);
    log.input_store(need_store(work, "tensor"));
    log.input_store(need_store(work, "decompose"));
    const MortalityTensor t = load_tensor(work);
    const TuckerModel m = load_tucker(work);
    const AgeStructureFeatures f = extract_features(m, t);
    ClusterModel cm = fit_clusters(f, cluster_options(cfg));
    attach_cell_labels(cm, f, t.n_pop(), t.n_year());
    log.lap("gmm");
    const EpochCalendar cal = epoch_calendar(f, t, epoch_params(cfg));
    log.lap("epochs");

    StoreWriter w(dir_of(work, "cluster"));
    std::ostringstream csv;
    csv << "pop,year,cluster,epoch\n";
    for (std::size_t i = 0; i < f.cells.size(); ++i) {
        const Cell& c = f.cells[i];
        const Epoch e = cal.category[static_cast<std::size_t>(c.c)][static_cast<std::size_t>(c.t)];
        csv << t.pops[static_cast<std::size_t>(c.c)] << ',' << t.years[static_cast<std::size_t>(c.t)] << ','
            << cm.labels[i] + 1 << ',' << epoch_name(e) << '\n';
    }
    write_text(join_path(w.dir(), "clusters.csv"), csv.str());
    add_file(w, log, "clusters.csv");

    w.put("pca.mean", cm.pca.mean);
    w.put("pca.components", cm.pca.components);
    w.put("pca.explained_ratio", cm.pca.explained_ratio);
    w.put("gmm.weights", cm.gmm.weights);
    json gmm_meta = json::array();
    for (int k = 0; k < cm.gmm.k(); ++k) {
        w.put("gmm.mean" + std::to_string(k), cm.gmm.means[static_cast<std::size_t>(k)]);
        w.put("gmm.cov" + std::to_string(k), cm.gmm.covs[static_cast<std::size_t>(k)]);
    }
    w.put_ints("labels", cm.labels);
    w.put_ints("ward_labels", cm.ward_labels);
    w.put_ints("cell_labels", row_major(cm.cell_labels), {t.n_pop(), t.n_year()});
    w.put_ints("country_labels", cm.country_labels);
    w.put_ints("year_labels", cm.year_labels);
    std::vector<int> epochs;
    for (const auto& row : cal.category)
        for (Epoch e : row) epochs.push_back(static_cast<int>(e));
    w.put_ints("epochs", epochs, {t.n_pop(), t.n_year()});
    json bic = json::array();
    for (const auto& b : cm.bic_table)
        bic.push_back({{"k", b.k}, {"log_likelihood", b.log_likelihood}, {"n_parameters", b.n_parameters}, {"bic", b.bic}});
    w.meta()["k"] = cm.k;
    w.meta()["bic_table"] = bic;
    w.meta()["pca_dim"] = cm.pca.dim();
    w.meta()["ward_agreement"] = cm.ward_agreement;
    w.meta()["gmm"] = {{"log_likelihood", cm.gmm.log_likelihood}, {"iterations", cm.gmm.iterations},
                       {"converged", cm.gmm.converged}, {"regularized", cm.gmm.regularized}};
    w.meta()["pops"] = t.pops;
    w.meta()["years"] = t.years;
    w.meta()["epoch_params"] = {{"window", cal.params.window}, {"delta", cal.params.delta},
                                {"delta_rapid", cal.params.delta_rapid}};
    finish_store(w, log, cfg);
    return log.finish({{"k", cm.k}, {"cells", f.cells.size()}, {"pca_dim", cm.pca.dim()},
                       {"ward_agreement", cm.ward_agreement}});
}

json stage_trajectory(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("trajectory", work, cfg);
    log.input_store(need_store(work, "tensor"));
    log.input_store(need_store(work, "decompose"));
    log.input_store(need_store(work, "cluster"));
    const MortalityTensor t = load_tensor(work);
    const TuckerModel m = load_tucker(work);
    int k = 0;
    const std::vector<int> labels = load_cluster_labels(work, k);
    const AgeStructureFeatures f = extract_features(m, t);
    require(labels.size() == f.cells.size(), ErrorCode::InvalidInput, "cluster labels do not match the tensor cells");
    const TrajectoryData data = trajectory_data(m, f, labels, k);
    TrajectoryOptions to;
    to.nodes = cfg.trajectory.nodes;
    to.lowess.frac = cfg.trajectory.lowess_frac;
    to.min_observations = cfg.trajectory.min_observations;
    std::vector<std::string> warnings;
    const TrajectorySet set = fit_trajectories(data, to, &warnings);
    log.lap("lowess");

    StoreWriter w(dir_of(work, "trajectory"));
    json grids = json::array();
    for (const auto& g : set.grids) {
        const std::string p = "grid" + std::to_string(g.cluster);
        w.put(p + ".e0", g.e0);
        w.put(p + ".values", g.values);
        w.put(p + ".tangents", g.tangents);
        grids.push_back({{"cluster", g.cluster}, {"n_obs", g.n_obs}, {"e0_min", g.e0_min()}, {"e0_max", g.e0_max()},
                         {"nodes", g.e0.size()}});
    }
    w.meta()["grids"] = grids;
    w.meta()["skipped"] = set.skipped;
    w.meta()["neural"] = cfg.trajectory.neural;
    if (cfg.trajectory.neural) {
        NeuralTrajectoryOptions no;
        no.epochs = cfg.trajectory.neural_epochs;
        no.seed = cfg.seed + kSeedTrajectory;
        const NeuralTrajectory nt = train_neural_trajectory(data, no, &warnings);
        log.lap("neural");
        w.put_mlp("neural.net", nt.net);
        w.put("neural.embeddings", nt.embeddings.e);
        w.meta()["embedding_scale"] = nt.embeddings.scale;
        w.meta()["encoding"] = {nt.encoding.e0_min, nt.encoding.e0_max};
        w.meta()["neural_train_mse"] = nt.train_mse;
        w.meta()["neural_epochs_run"] = nt.report.epochs_run;
    }
    w.meta()["warnings"] = warnings;
    log.warn_all(warnings);
    finish_store(w, log, cfg);
    return log.finish({{"grids", grids}, {"skipped", set.skipped}});
}

json stage_disruption(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("disruption", work, cfg);
    log.input_store(need_store(work, "tensor"));
    log.input_store(need_store(work, "decompose"));
    ExceptionalSet exc;
    const MortalityTensor t = load_tensor(work, &exc);
    const TuckerModel m = load_tucker(work);
    DisruptionOptions o;
    o.method = baseline_from_name(cfg.disruption.method);
    o.penalty = cfg.disruption.penalty;
    o.neural.epochs = cfg.disruption.neural_epochs;
    o.neural.seed = cfg.seed + kSeedDisruption;
    o.sg = {cfg.disruption.sg_window, cfg.disruption.sg_degree};
    o.sub.sg = o.sg;
    o.sub.embed_epochs = cfg.disruption.embed_epochs;
    o.sub.seed = cfg.seed + kSeedSub;
    o.temporal.frac = cfg.trajectory.lowess_frac;
    const DisruptionModel dm = fit_disruptions(m, t, exc, o);
    log.lap("fit");

    StoreWriter w(dir_of(work, "disruption"));
    std::ostringstream csv;
    csv << "pop,year,type,subcluster,lambda,r2,orth_norm,r2_sub\n";
    Matrix base(static_cast<Eigen::Index>(dm.events.size()), 2 * dm.ages), res(base.rows(), base.cols());
    Matrix stats(base.rows(), 4);
    std::vector<int> keys;
    for (std::size_t i = 0; i < dm.events.size(); ++i) {
        const EventRecord& e = dm.events[i];
        keys.insert(keys.end(), {e.c, e.t, e.type, e.subcluster});
        stats.row(static_cast<Eigen::Index>(i)) << e.lambda, e.r2, e.orth_norm, e.r2_sub;
        csv << t.pops[static_cast<std::size_t>(e.c)] << ',' << t.years[static_cast<std::size_t>(e.t)] << ','
            << disruption_name(e.type) << ',' << e.subcluster << ',' << fmt_double(e.lambda) << ',' << fmt_double(e.r2)
            << ',' << fmt_double(e.orth_norm) << ',' << fmt_double(e.r2_sub) << '\n';
        base.row(static_cast<Eigen::Index>(i)) = e.baseline.transpose();
        res.row(static_cast<Eigen::Index>(i)) = e.residual.transpose();
    }
    write_text(join_path(w.dir(), "disruptions.csv"), csv.str());
    add_file(w, log, "disruptions.csv");
    w.put("events.baseline", base);
    w.put("events.residual", res);
    w.put_ints("events.keys", keys, {static_cast<int>(dm.events.size()), 4});  // c, t, type, subcluster
    w.put("events.stats", stats);                                             // lambda, r2, orth_norm, r2_sub

    json profiles = json::array(), subs = json::array();
    for (const auto& [type, p] : dm.profiles) {
        const std::string n = "profile" + std::to_string(type);
        w.put(n + ".raw", p.raw);
        w.put(n + ".smoothed", p.smoothed);
        profiles.push_back({{"type", type}, {"name", disruption_name(type)}, {"n_events", p.n_events}, {"cosine", p.cosine}});
    }
    for (const auto& [type, sc] : dm.subclusters) {
        const std::string n = "sub" + std::to_string(type);
        w.put_ints(n + ".labels", sc.labels);
        for (int j = 0; j < sc.k; ++j) {
            w.put(n + ".raw" + std::to_string(j), sc.raw_profiles[static_cast<std::size_t>(j)]);
            w.put(n + ".profile" + std::to_string(j), sc.profiles[static_cast<std::size_t>(j)]);
        }
        w.put(n + ".embeddings", sc.embeddings);
        w.put_mlp(n + ".net", sc.net);
        json sil = json::array();
        for (const auto& [kk, s] : sc.silhouettes) sil.push_back({kk, s});
        subs.push_back({{"type", type}, {"name", disruption_name(type)}, {"k", sc.k}, {"silhouettes", sil}});
    }
    w.meta()["method"] = baseline_name(dm.method);
    w.meta()["ages"] = dm.ages;
    w.meta()["profiles"] = profiles;
    w.meta()["subclusters"] = subs;
    w.meta()["warnings"] = dm.warnings;
    log.warn_all(dm.warnings);
    finish_store(w, log, cfg);
    return log.finish({{"events", dm.events.size()}, {"profiles", profiles}, {"subclusters", subs}});
}

struct ScheduleRows {
    std::vector<std::string> ids;
    std::vector<Vector> z;
};

ScheduleRows read_schedules(const std::string& path, int n) {
    ScheduleRows out;
    const auto rows = read_rows(path, "");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (static_cast<int>(r.size()) != n + 1)
            fail(ErrorCode::InvalidInput, path + ": row " + std::to_string(i + 2) + " has " + std::to_string(r.size() - 1) +
                                              " values, expected " + std::to_string(n));
        Vector z(n);
        for (int k = 0; k < n; ++k) z[k] = to_double(r[static_cast<std::size_t>(k) + 1], path);
        out.ids.push_back(r[0]);
        out.z.push_back(std::move(z));
    }
    return out;
}

std::string fit_rows(const std::vector<std::string>& ids, const std::vector<FitResult>& fits) {
    std::ostringstream out;
    out << "id,cluster,e0,type,lambda,gap,logbf_war,logbf_respiratory,logbf_enteric,multi_war,multi_respiratory,"
           "multi_enteric\n";
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const FitResult& r = fits[i];
        out << ids[i] << ',' << r.cluster << ',' << fmt_double(r.e0) << ',' << disruption_name(r.d) << ','
            << fmt_double(r.lambda) << ',' << fmt_double(r.gap);
        for (int d = 1; d < 4; ++d) out << ',' << fmt_double(r.log_bf[static_cast<std::size_t>(d)]);
        for (double v : r.multi) out << ',' << fmt_double(v);
        out << '\n';
    }
    return out.str();
}

json metrics_json(const CvMetrics& m) {
    return {{"strong_accuracy", m.strong_accuracy}, {"detection", m.detection}, {"fp_rate", m.fp_rate},
            {"false_positives", m.false_positives}, {"accuracy", m.all.accuracy()}};
}

json stage_fit_batch(const std::string& work, const PipelineConfig& cfg, const json& args, const FitterCache& cache) {
    RunLog log("fit-batch", work, cfg);
    const std::string in = args.at("in").get<std::string>();
    const std::string out = args.value("out", join_path(work, "fits.csv"));
    log.input(need_file(in));
    log.input_store(need_store(work, "fit"));
    const FitCalibration cal = load_fit_calibration(work);
    const ScheduleRows rows = read_schedules(in, cache.n);
    FitOptions fo;
    fo.sigma_lambda = cal.sigma_lambda;
    fo.gap_threshold = cal.gap;
    const auto fits = fit_batch(cache, rows.z, fo);
    log.lap("fit");
    write_text(out, fit_rows(rows.ids, fits));
    log.output(out);
    std::array<int, 4> counts{0, 0, 0, 0};
    for (const auto& f : fits) ++counts[static_cast<std::size_t>(f.d)];
    return log.finish({{"rows_in", rows.ids.size()}, {"rows_out", fits.size()}, {"out", out},
                       {"types", {{"none", counts[0]}, {"war", counts[1]}, {"respiratory", counts[2]}, {"enteric", counts[3]}}}});
}

json stage_fit(const std::string& work, const PipelineConfig& cfg, const json& args) {
    const std::string tdir = need_store(work, "trajectory"), ddir = need_store(work, "disruption");
    const FitterCache cache = make_fitter_cache(fitter_grids(load_trajectories(work)), profile_map(load_disruptions(work)));
    const bool batch = args.contains("in");
    if (batch && path_exists(join_path(dir_of(work, "fit"), "manifest.json"))) return stage_fit_batch(work, cfg, args, cache);

    RunLog log("fit", work, cfg);
    log.input_store(tdir);
    log.input_store(ddir);
    StoreWriter w(dir_of(work, "fit"));
    double sigma = cfg.fit.sigma_lambda, gap = cfg.fit.gap;
    bool calibrated = false;
    if (cfg.fit.calibrate) {
        CorpusOptions co;
        co.n = cfg.fit.cv_schedules;
        co.null_fraction = cfg.fit.null_fraction;
        co.seed = cfg.seed + kSeedFit;
        const auto corpus = planted_corpus(cache, co);
        std::vector<Vector> ys;
        std::vector<int> td;
        std::vector<double> tl;
        for (const auto& p : corpus) {
            ys.push_back(p.y);
            td.push_back(p.d);
            tl.push_back(p.lambda);
        }
        FitOptions fo;
        fo.sigma_lambda = sigma;
        fo.gap_threshold = gap;
        const auto fits = fit_batch(cache, ys, fo);
        CvOptions cv;
        cv.fp_budget = cfg.fit.fp_budget;
        cv.seed = cfg.seed + kSeedFit;
        try {
            const CvResult r = cv_sweep(fits, td, tl, cv);
            sigma = r.sigma_lambda;
            gap = r.gap;
            calibrated = true;
            json folds = json::array();
            for (const auto& f : r.folds)
                folds.push_back({{"sigma_lambda", f.sigma_lambda}, {"gap", f.gap}, {"train", metrics_json(f.train)},
                                 {"test", metrics_json(f.test)}});
            w.meta()["cv"] = {{"folds", folds}, {"overall", metrics_json(r.overall)}, {"schedules", corpus.size()}};
        } catch (const Error& e) {
            if (e.code() != ErrorCode::StratificationError) throw;
            log.warn(std::string("calibration skipped: ") + e.what());
        }
        log.lap("calibration");
    }
    const IdentifiabilityReport idr = identifiability(cache);
    std::ostringstream ident;
    ident << "type,max_abs_rho,mean_abs_rho,min_fraction,mean_fraction\n";
    for (const auto& s : idr.summary)
        ident << disruption_name(s.d) << ',' << fmt_double(s.max_abs_rho) << ',' << fmt_double(s.mean_abs_rho) << ','
              << fmt_double(s.min_fraction) << ',' << fmt_double(s.mean_fraction) << '\n';
    write_text(join_path(w.dir(), "identifiability.csv"), ident.str());
    add_file(w, log, "identifiability.csv");
    log.lap("identifiability");

    std::vector<int> clusters;
    for (const auto& g : cache.grids) clusters.push_back(g.cluster);
    w.meta()["sigma_lambda"] = sigma;
    w.meta()["gap"] = gap;
    w.meta()["calibrated"] = calibrated;
    w.meta()["clusters"] = clusters;
    w.meta()["profiles"] = {cache.has_profile[1], cache.has_profile[2], cache.has_profile[3]};
    finish_store(w, log, cfg);
    json summary = log.finish({{"sigma_lambda", sigma}, {"gap", gap}, {"calibrated", calibrated}});
    if (batch) summary["batch"] = stage_fit_batch(work, cfg, args, cache);
    return summary;
}

json stage_predict(const std::string& work, const PipelineConfig& cfg, const json& args) {
    const std::vector<double> q5 = json_probs(args, "q5f", "q5m"), q45 = json_probs(args, "q45f", "q45m");
    const bool query = !q5.empty();
    if (!query && !q45.empty()) fail(ErrorCode::ConfigError, "predict: adult inputs need q5f and q5m");
    const std::string ddir = need_store(work, "decompose");
    const TuckerModel m = load_tucker(work);
    const ReconMatrix recon = build_recon(m, std::min(cfg.predict.c_age, m.ranks[1]));
    const bool have_store = path_exists(join_path(dir_of(work, "predict"), "manifest.json"));
    json summary;

    if (!query || !have_store) {
        RunLog log("predict", work, cfg);
        log.input_store(ddir);
        log.input_store(need_store(work, "tensor"));
        const MortalityTensor t = load_tensor(work);
        const IndicatorModel one = train_indicator_model(recon, t, IndicatorVariant::OneParameter, indicator_options(cfg, 0));
        log.lap("one_parameter");
        const IndicatorModel two = train_indicator_model(recon, t, IndicatorVariant::TwoParameter, indicator_options(cfg, 1));
        log.lap("two_parameter");
        StoreWriter w(dir_of(work, "predict"));
        write_indicator(w, "one", one);
        write_indicator(w, "two", two);
        w.meta()["c_age"] = recon.c_age;
        w.meta()["alpha"] = cfg.predict.alpha;
        finish_store(w, log, cfg);
        summary = log.finish({{"one", {{"val_rmse", one.val_rmse}, {"val_rmse_working", one.val_rmse_working}}},
                              {"two", {{"val_rmse", two.val_rmse}, {"val_rmse_working", two.val_rmse_working}}}});
    }
    if (query) {
        RunLog log("predict-query", work, cfg);
        log.input_store(need_store(work, "predict"));
        const bool adult = !q45.empty();
        const IndicatorModel model =
            load_indicator_model(work, adult ? IndicatorVariant::TwoParameter : IndicatorVariant::OneParameter);
        std::vector<double> probs = q5;
        probs.insert(probs.end(), q45.begin(), q45.end());
        const Vector qx = predict_schedule(model, recon, probs);
        const std::string out = args.value("out", join_path(work, "prediction.csv"));
        write_text(out, kLifetableHeader + lifetable_rows("predicted", 0, qx, m.ages()));
        log.output(out);
        double ef = 0, em = 0;
        forward_e0_pair(logit(qx), ef, em);
        summary["query"] = log.finish({{"variant", adult ? "two-parameter" : "one-parameter"}, {"out", out},
                                       {"e0_female", ef}, {"e0_male", em}});
    }
    return summary;
}

std::string summary_row(int origin, int h, const CvSummary& s, const char* kind) {
    std::ostringstream out;
    out << kind << ',' << origin << ',' << h << ',' << s.n << ',' << fmt_double(s.mae) << ',' << fmt_double(s.bias) << ','
        << fmt_double(s.cover80) << ',' << fmt_double(s.cover95) << '\n';
    return out.str();
}

json stage_forecast(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("forecast", work, cfg);
    log.input_store(need_store(work, "tensor"));
    log.input_store(need_store(work, "decompose"));
    log.input_store(need_store(work, "cluster"));
    const MortalityTensor t = load_tensor(work);
    const TuckerModel m = load_tucker(work);
    const ScoreSpace space = fit_score_space(m, t, cfg.forecast.n_pc);
    const auto series = score_series(space, m, t, load_country_labels(work));
    log.lap("scores");

    ForecastCvOptions o;
    o.origins = cfg.forecast.origins;
    o.horizon = cfg.forecast.horizon;
    o.min_train = cfg.forecast.min_train;
    o.window = cfg.forecast.window;
    o.weights = {cfg.forecast.weights[0], cfg.forecast.weights[1], cfg.forecast.weights[2]};
    o.mle = mle_options(cfg);

    StoreWriter w(dir_of(work, "forecast"));
    if (cfg.forecast.search) {
        const HierarchySearch hs = hierarchy_search(space, series, o, cfg.forecast.search_step);
        o.weights = hs.best.w;
        json table = json::array();
        for (const auto& p : hs.table) table.push_back({p.w.hmd, p.w.cluster, p.w.country, p.mae});
        w.meta()["hierarchy_search"] = {{"step", cfg.forecast.search_step}, {"table", table}};
        log.lap("hierarchy");
    }
    double kappa = 1.0;
    std::ostringstream cvcsv;
    cvcsv << "kind,origin,h,n,mae,bias,cover80,cover95\n";
    const ForecastCvResult cv = rolling_cv(space, series, o);
    if (cv.points.empty()) {
        log.warn("no forecast origin has enough training data; intervals are not calibrated");
    } else {
        kappa = cv.kappa;
        cvcsv << summary_row(0, 0, cv.overall, "raw") << summary_row(0, 0, cv.calibrated, "calibrated");
        for (const auto& s : cv.by_origin) cvcsv << summary_row(s.origin, 0, s, "origin");
        for (const auto& s : cv.by_horizon) cvcsv << summary_row(0, s.h, s, "horizon");
    }
    log.lap("cross_validation");
    const ForecastBundle b = build_forecasts(space, series, o.weights, o.horizon, kappa, o.mle, o.window);
    log.lap("forecast");

    const int ages = t.ages;
    std::ostringstream fc, e0;
    fc << "pop,year,sex,age,logit_qx_median,lo80,hi80,lo95,hi95\n";
    e0 << "pop,year,h,e0,e0_sd,lo80,hi80,lo95,hi95\n";
    for (const auto& c : b.countries) {
        for (const auto& h : c.horizons) {
            for (int s = 0; s < 2; ++s)
                for (int a = 0; a < ages; ++a) {
                    const Eigen::Index i = static_cast<Eigen::Index>(s) * ages + a;
                    const double z = h.z[i], sd = kappa * h.z_sd[i];
                    fc << c.pop << ',' << h.year << ',' << (s == 0 ? 'f' : 'm') << ',' << a << ',' << fmt_double(z) << ','
                       << fmt_double(z - kZ80 * sd) << ',' << fmt_double(z + kZ80 * sd) << ','
                       << fmt_double(z - kZ95 * sd) << ',' << fmt_double(z + kZ95 * sd) << '\n';
                }
            const double sd = kappa * h.e0_sd;
            e0 << c.pop << ',' << h.year << ',' << h.h << ',' << fmt_double(h.e0) << ',' << fmt_double(sd) << ','
               << fmt_double(h.e0 - kZ80 * sd) << ',' << fmt_double(h.e0 + kZ80 * sd) << ','
               << fmt_double(h.e0 - kZ95 * sd) << ',' << fmt_double(h.e0 + kZ95 * sd) << '\n';
        }
    }
    write_text(join_path(w.dir(), "forecast.csv"), fc.str());
    write_text(join_path(w.dir(), "e0.csv"), e0.str());
    write_text(join_path(w.dir(), "cv.csv"), cvcsv.str());
    for (const char* f : {"forecast.csv", "e0.csv", "cv.csv"}) add_file(w, log, f);

    w.put("space.mean", space.pca.mean);
    w.put("space.components", space.pca.components);
    w.put("space.l", space.l);
    w.put("space.z_mean", space.z_mean);
    json specs = json::array();
    for (const auto& c : b.countries)
        specs.push_back({{"pop", c.pop}, {"cluster", c.cluster}, {"last_year", c.last_year}, {"rho", c.spec.rho},
                         {"q_level", to_json(c.spec.q_level)}, {"q_drift", to_json(c.spec.q_drift)},
                         {"r_obs", to_json(c.spec.r_obs)}, {"drift_target", to_json(c.drift_target)}});
    w.meta()["weights"] = {{"hmd", o.weights.hmd}, {"cluster", o.weights.cluster}, {"country", o.weights.country}};
    w.meta()["kappa"] = kappa;
    w.meta()["raw_kappa"] = cv.raw_kappa;
    w.meta()["origins"] = cv.origins;
    w.meta()["skipped_origins"] = cv.skipped_origins;
    w.meta()["horizon"] = o.horizon;
    w.meta()["n_pc"] = space.n_pc;
    w.meta()["explained_ratio"] = to_json(space.pca.explained_ratio);
    w.meta()["countries"] = specs;
    w.meta()["skipped_countries"] = b.skipped;
    finish_store(w, log, cfg);
    return log.finish({{"countries", b.countries.size()}, {"kappa", kappa}, {"origins", cv.origins},
                       {"mae", cv.points.empty() ? json(nullptr) : json(cv.overall.mae)},
                       {"cover95_calibrated", cv.points.empty() ? json(nullptr) : json(cv.calibrated.cover95)}});
}

json stage_report(const std::string& work, const PipelineConfig& cfg, const json&) {
    RunLog log("report", work, cfg);
    for (const char* s : {"tensor", "decompose", "cluster", "trajectory", "disruption", "fit", "predict", "forecast"})
        log.input_store(need_store(work, s));
    const MortalityTensor t = load_tensor(work);
    const TuckerModel m = load_tucker(work);
    const StoreReader cr(dir_of(work, "cluster"));
    const IntMatrix cells = from_row_major(cr.ints("cell_labels"), t.n_pop(), t.n_year());
    const TrajectorySet set = load_trajectories(work);
    const DisruptionModel dm = load_disruptions(work);
    const FitCalibration cal = load_fit_calibration(work);
    const StoreReader pr(dir_of(work, "predict")), fr(dir_of(work, "forecast"));

    StoreWriter w(dir_of(work, "report"));
    std::ostringstream e0;
    e0 << "pop,year,sex,e0_observed,e0_reconstructed,cluster\n";
    for (int c = 0; c < t.n_pop(); ++c)
        for (int y = 0; y < t.n_year(); ++y) {
            if (!t.observed(c, y)) continue;
            double of = 0, om = 0, rf = 0, rm = 0;
            forward_e0_pair(t.schedule(c, y), of, om);
            forward_e0_pair(reconstruct_pair(m, c, y), rf, rm);
            const int k = cells(c, y) < 0 ? 0 : cells(c, y) + 1;
            const auto& pop = t.pops[static_cast<std::size_t>(c)];
            const int year = t.years[static_cast<std::size_t>(y)];
            e0 << pop << ',' << year << ",f," << fmt_double(of) << ',' << fmt_double(rf) << ',' << k << '\n';
            e0 << pop << ',' << year << ",m," << fmt_double(om) << ',' << fmt_double(rm) << ',' << k << '\n';
        }
    write_text(join_path(w.dir(), "e0_long.csv"), e0.str());

    std::ostringstream traj;
    traj << "cluster,node,e0,sex,age,logit_qx\n";
    for (const auto& g : set.grids)
        for (Eigen::Index n = 0; n < g.e0.size(); ++n)
            for (int i = 0; i < g.dim(); ++i)
                traj << g.cluster << ',' << n << ',' << fmt_double(g.e0[n]) << ',' << (i < t.ages ? 'f' : 'm') << ','
                     << i % t.ages << ',' << fmt_double(g.values(n, i)) << '\n';
    write_text(join_path(w.dir(), "trajectory_long.csv"), traj.str());

    std::ostringstream prof;
    prof << "type,subcluster,sex,age,value\n";
    auto emit = [&](int type, int sub, const Vector& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i)
            prof << disruption_name(type) << ',' << sub << ',' << (i < t.ages ? 'f' : 'm') << ',' << i % t.ages << ','
                 << fmt_double(v[i]) << '\n';
    };
    for (const auto& [type, p] : dm.profiles) emit(type, -1, p.smoothed);
    for (const auto& [type, sc] : dm.subclusters)
        for (int j = 0; j < sc.k; ++j) emit(type, j, sc.profiles[static_cast<std::size_t>(j)]);
    write_text(join_path(w.dir(), "profiles_long.csv"), prof.str());

    std::ostringstream bic;
    bic << "k,log_likelihood,n_parameters,bic\n";
    for (const auto& b : cr.meta().at("bic_table"))
        bic << b.at("k").get<int>() << ',' << fmt_double(b.at("log_likelihood").get<double>()) << ','
            << b.at("n_parameters").get<long>() << ',' << fmt_double(b.at("bic").get<double>()) << '\n';
    write_text(join_path(w.dir(), "bic.csv"), bic.str());

    std::ostringstream sum;
    sum << "section,key,value\n";
    auto row = [&](const char* section, const std::string& key, const std::string& value) {
        sum << section << ',' << key << ',' << value << '\n';
    };
    row("tensor", "populations", std::to_string(t.n_pop()));
    row("tensor", "years", std::to_string(t.n_year()));
    row("tensor", "observed_cells", std::to_string(t.observed.sum()));
    for (int i = 0; i < 4; ++i) {
        row("decompose", "rank_" + std::to_string(i + 1), std::to_string(m.ranks[static_cast<std::size_t>(i)]));
        row("decompose", "variance_fraction_" + std::to_string(i + 1), fmt_double(m.variance_fraction[static_cast<std::size_t>(i)]));
    }
    row("cluster", "k", std::to_string(cr.meta().at("k").get<int>()));
    row("cluster", "ward_agreement", fmt_double(cr.meta().at("ward_agreement").get<double>()));
    for (const auto& g : set.grids) {
        row("trajectory", "e0_min_" + std::to_string(g.cluster), fmt_double(g.e0_min()));
        row("trajectory", "e0_max_" + std::to_string(g.cluster), fmt_double(g.e0_max()));
    }
    row("disruption", "events", std::to_string(dm.profiles.empty() ? 0 : [&] {
            int n = 0;
            for (const auto& [type, p] : dm.profiles) n += p.n_events;
            return n;
        }()));
    for (const auto& [type, p] : dm.profiles) row("disruption", std::string("cosine_") + disruption_name(type), fmt_double(p.cosine));
    for (const auto& [type, sc] : dm.subclusters) row("disruption", std::string("subclusters_") + disruption_name(type), std::to_string(sc.k));
    row("fit", "sigma_lambda", fmt_double(cal.sigma_lambda));
    row("fit", "gap", fmt_double(cal.gap));
    for (const char* v : {"one", "two"}) {
        const json& mm = pr.meta().at("models").at(v);
        row("predict", std::string(v) + "_val_rmse", fmt_double(mm.at("val_rmse").get<double>()));
        row("predict", std::string(v) + "_val_rmse_working", fmt_double(mm.at("val_rmse_working").get<double>()));
    }
    row("forecast", "kappa", fmt_double(fr.meta().at("kappa").get<double>()));
    const json& fw = fr.meta().at("weights");
    row("forecast", "weight_hmd", fmt_double(fw.at("hmd").get<double>()));
    row("forecast", "weight_cluster", fmt_double(fw.at("cluster").get<double>()));
    row("forecast", "weight_country", fmt_double(fw.at("country").get<double>()));
    write_text(join_path(w.dir(), "summary.csv"), sum.str());

    for (const char* f : {"e0_long.csv", "trajectory_long.csv", "profiles_long.csv", "bic.csv", "summary.csv"}) add_file(w, log, f);
    finish_store(w, log, cfg);
    return log.finish({{"files", w.meta()["files"]}});
}

using StageFn = json (*)(const std::string&, const PipelineConfig&, const json&);

const std::vector<std::pair<std::string, StageFn>>& stage_table() {
    static const std::vector<std::pair<std::string, StageFn>> table{
        {"synth", stage_synth},         {"ingest", stage_ingest},       {"pool", stage_pool},
        {"tensor", stage_tensor},       {"decompose", stage_decompose}, {"cluster", stage_cluster},
        {"trajectory", stage_trajectory}, {"disruption", stage_disruption}, {"fit", stage_fit},
        {"predict", stage_predict},     {"forecast", stage_forecast},   {"report", stage_report}};
    return table;
}

}  // namespace

const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [n, f] : stage_table()) v.push_back(n);
        return v;
    }();
    return names;
}

bool is_stage(const std::string& name) {
    const auto& s = pipeline_stages();
    return std::find(s.begin(), s.end(), name) != s.end();
}

json run_stage(const std::string& stage, const std::string& work, const PipelineConfig& cfg, const json& args) {
    if (cfg.threads > 0) set_thread_count(cfg.threads);
    for (const auto& [name, fn] : stage_table())
        if (name == stage) {
            ensure_dir(work);
            json out = fn(work, cfg, args);
            out["stage"] = stage;
            return out;
        }
    fail(ErrorCode::ConfigError, "unknown stage: " + stage);
}

json run_pipeline(const std::string& work, const PipelineConfig& cfg) {
    json out = json::array();
    for (const auto& name : pipeline_stages()) out.push_back(run_stage(name, work, cfg));
    return out;
}

}  // namespace mdmx
