#include "mdmx/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mdmx/error.hpp"
#include "mdmx/store.hpp"

namespace mdmx {

using nlohmann::json;

namespace {

// Reads keys out of one JSON object and complains about the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(ErrorCode::ConfigError, "config: " + where() + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            fail(ErrorCode::ConfigError, "config: bad value for " + name(key));
        }
    }

    void get_optional(const char* key, std::optional<int>& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return;
        if (!it->is_number_integer()) fail(ErrorCode::ConfigError, "config: " + name(key) + " must be an integer or null");
        out = it->get<int>();
    }

    Section sub(const char* key) {
        seen_.insert(key);
        static const json empty = json::object();
        const auto it = j_.find(key);
        return Section(it == j_.end() ? empty : *it, name(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail(ErrorCode::ConfigError, "config: unknown key " + name(k.c_str()));
    }

private:
    std::string where() const { return path_.empty() ? "top level" : path_; }
    std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check(bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::ConfigError, "config: " + what);
}

void validate(const PipelineConfig& c) {
    check(c.threads >= 0, "threads must be >= 0");
    check(c.synth.countries >= 1 && c.synth.years >= 1 && c.synth.regimes >= 1, "synth sizes must be positive");
    check(c.data.q_min > 0 && c.data.q_min < 0.5, "data.q_min must lie in (0, 0.5)");
    check(c.data.q_thresh > 0 && c.data.q_thresh < 1, "data.q_thresh must lie in (0, 1)");
    check(c.data.imputation_weight >= 0 && c.data.imputation_weight <= 1, "data.imputation_weight must lie in [0, 1]");
    check(c.tucker.tau > 0 && c.tucker.tau <= 1, "tucker.tau must lie in (0, 1]");
    check(c.cluster.k_min >= 1 && c.cluster.k_max >= c.cluster.k_min, "cluster.k_min/k_max out of order");
    check(!c.cluster.k || *c.cluster.k >= 1, "cluster.k must be positive");
    check(c.cluster.pca_fraction > 0 && c.cluster.pca_fraction <= 1, "cluster.pca_fraction must lie in (0, 1]");
    check(c.trajectory.nodes >= 2, "trajectory.nodes must be >= 2");
    check(c.trajectory.lowess_frac > 0 && c.trajectory.lowess_frac <= 1, "trajectory.lowess_frac must lie in (0, 1]");
    check(c.disruption.method == "naive" || c.disruption.method == "temporal" || c.disruption.method == "penalized" ||
              c.disruption.method == "neural",
          "disruption.method must be naive, temporal, penalized or neural");
    check(c.disruption.sg_window % 2 == 1 && c.disruption.sg_window > c.disruption.sg_degree, "disruption.sg_window must be odd and exceed sg_degree");
    check(c.fit.sigma_lambda > 0, "fit.sigma_lambda must be positive");
    check(c.fit.cv_schedules >= 10, "fit.cv_schedules must be >= 10");
    check(c.fit.null_fraction >= 0 && c.fit.null_fraction < 1, "fit.null_fraction must lie in [0, 1)");
    check(c.predict.c_age >= 1, "predict.c_age must be positive");
    check(c.forecast.n_pc >= 1, "forecast.n_pc must be positive");
    check(c.forecast.rho_min > 0 && c.forecast.rho_min <= c.forecast.rho_max && c.forecast.rho_max <= 1,
          "forecast rho bounds must satisfy 0 < rho_min <= rho_max <= 1");
    const auto& w = c.forecast.weights;
    check(w[0] >= 0 && w[1] >= 0 && w[2] >= 0 && std::abs(w[0] + w[1] + w[2] - 1.0) < 1e-9,
          "forecast.weights must be nonnegative and sum to 1");
    check(c.forecast.horizon >= 1 && c.forecast.window >= 2 && c.forecast.min_train >= 2, "forecast sizes out of range");
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ConfigError, std::string("config: ") + e.what());
    }
    PipelineConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    {
        Section s = top.sub("synth");
        s.get("countries", c.synth.countries);
        s.get("years", c.synth.years);
        s.get("first_year", c.synth.first_year);
        s.get("regimes", c.synth.regimes);
        s.get("plant_disruptions", c.synth.plant_disruptions);
        s.get("plant_curation_cases", c.synth.plant_curation_cases);
        s.finish();
    }
    {
        Section s = top.sub("data");
        s.get("q_min", c.data.q_min);
        s.get("flat_age_a", c.data.flat_age_a);
        s.get("flat_age_b", c.data.flat_age_b);
        s.get("excluded_pops", c.data.excluded_pops);
        s.get("q_thresh", c.data.q_thresh);
        s.get("min_years", c.data.min_years);
        s.get("imputation_weight", c.data.imputation_weight);
        s.get("events", c.data.events);
        s.finish();
    }
    {
        Section s = top.sub("tucker");
        s.get("tau", c.tucker.tau);
        s.get("weighted", c.tucker.weighted);
        s.get("smoothing", c.tucker.smoothing);
        s.finish();
    }
    {
        Section s = top.sub("cluster");
        s.get("k_min", c.cluster.k_min);
        s.get("k_max", c.cluster.k_max);
        s.get_optional("k", c.cluster.k);
        s.get("pca_fraction", c.cluster.pca_fraction);
        s.get("restarts", c.cluster.restarts);
        s.get("max_iter", c.cluster.max_iter);
        s.get("epoch_window", c.cluster.epoch_window);
        s.get("epoch_delta", c.cluster.epoch_delta);
        s.get("epoch_delta_rapid", c.cluster.epoch_delta_rapid);
        s.finish();
    }
    {
        Section s = top.sub("trajectory");
        s.get("nodes", c.trajectory.nodes);
        s.get("lowess_frac", c.trajectory.lowess_frac);
        s.get("min_observations", c.trajectory.min_observations);
        s.get("neural", c.trajectory.neural);
        s.get("neural_epochs", c.trajectory.neural_epochs);
        s.finish();
    }
    {
        Section s = top.sub("disruption");
        s.get("method", c.disruption.method);
        s.get("penalty", c.disruption.penalty);
        s.get("neural_epochs", c.disruption.neural_epochs);
        s.get("sg_window", c.disruption.sg_window);
        s.get("sg_degree", c.disruption.sg_degree);
        s.get("embed_epochs", c.disruption.embed_epochs);
        s.finish();
    }
    {
        Section s = top.sub("fit");
        s.get("sigma_lambda", c.fit.sigma_lambda);
        s.get("gap", c.fit.gap);
        s.get("calibrate", c.fit.calibrate);
        s.get("cv_schedules", c.fit.cv_schedules);
        s.get("null_fraction", c.fit.null_fraction);
        s.get("fp_budget", c.fit.fp_budget);
        s.finish();
    }
    {
        Section s = top.sub("predict");
        s.get("c_age", c.predict.c_age);
        s.get("alpha", c.predict.alpha);
        s.get("epochs", c.predict.epochs);
        s.get("patience", c.predict.patience);
        s.finish();
    }
    {
        Section s = top.sub("forecast");
        s.get("n_pc", c.forecast.n_pc);
        s.get("rho_min", c.forecast.rho_min);
        s.get("rho_max", c.forecast.rho_max);
        s.get("weights", c.forecast.weights);
        s.get("window", c.forecast.window);
        s.get("horizon", c.forecast.horizon);
        s.get("min_train", c.forecast.min_train);
        s.get("origins", c.forecast.origins);
        s.get("search", c.forecast.search);
        s.get("search_step", c.forecast.search_step);
        s.finish();
    }
    top.finish();
    validate(c);
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

json config_to_json(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["synth"] = {{"countries", c.synth.countries}, {"years", c.synth.years}, {"first_year", c.synth.first_year},
                  {"regimes", c.synth.regimes}, {"plant_disruptions", c.synth.plant_disruptions},
                  {"plant_curation_cases", c.synth.plant_curation_cases}};
    j["data"] = {{"q_min", c.data.q_min}, {"flat_age_a", c.data.flat_age_a}, {"flat_age_b", c.data.flat_age_b},
                 {"excluded_pops", c.data.excluded_pops}, {"q_thresh", c.data.q_thresh}, {"min_years", c.data.min_years},
                 {"imputation_weight", c.data.imputation_weight}, {"events", c.data.events}};
    j["tucker"] = {{"tau", c.tucker.tau}, {"weighted", c.tucker.weighted}, {"smoothing", c.tucker.smoothing}};
    j["cluster"] = {{"k_min", c.cluster.k_min}, {"k_max", c.cluster.k_max},
                    {"k", c.cluster.k ? json(*c.cluster.k) : json(nullptr)}, {"pca_fraction", c.cluster.pca_fraction},
                    {"restarts", c.cluster.restarts}, {"max_iter", c.cluster.max_iter},
                    {"epoch_window", c.cluster.epoch_window}, {"epoch_delta", c.cluster.epoch_delta},
                    {"epoch_delta_rapid", c.cluster.epoch_delta_rapid}};
    j["trajectory"] = {{"nodes", c.trajectory.nodes}, {"lowess_frac", c.trajectory.lowess_frac},
                       {"min_observations", c.trajectory.min_observations}, {"neural", c.trajectory.neural},
                       {"neural_epochs", c.trajectory.neural_epochs}};
    j["disruption"] = {{"method", c.disruption.method}, {"penalty", c.disruption.penalty},
                       {"neural_epochs", c.disruption.neural_epochs}, {"sg_window", c.disruption.sg_window},
                       {"sg_degree", c.disruption.sg_degree}, {"embed_epochs", c.disruption.embed_epochs}};
    j["fit"] = {{"sigma_lambda", c.fit.sigma_lambda}, {"gap", c.fit.gap}, {"calibrate", c.fit.calibrate},
                {"cv_schedules", c.fit.cv_schedules}, {"null_fraction", c.fit.null_fraction},
                {"fp_budget", c.fit.fp_budget}};
    j["predict"] = {{"c_age", c.predict.c_age}, {"alpha", c.predict.alpha}, {"epochs", c.predict.epochs},
                    {"patience", c.predict.patience}};
    j["forecast"] = {{"n_pc", c.forecast.n_pc}, {"rho_min", c.forecast.rho_min}, {"rho_max", c.forecast.rho_max},
                     {"weights", c.forecast.weights}, {"window", c.forecast.window}, {"horizon", c.forecast.horizon},
                     {"min_train", c.forecast.min_train}, {"origins", c.forecast.origins},
                     {"search", c.forecast.search}, {"search_step", c.forecast.search_step}};
    return j;
}

std::string config_hash(const PipelineConfig& c) {
    json j = config_to_json(c);
    j.erase("threads");  // results do not depend on the worker count
    return sha256_hex(j.dump());
}

}  // namespace mdmx
