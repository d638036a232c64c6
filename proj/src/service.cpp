#include "mdmx/service.hpp"

#include <cmath>
#include <sstream>

#include "httplib.h"
#include "mdmx/error.hpp"
#include "mdmx/lifetable.hpp"
#include "mdmx/store.hpp"

namespace mdmx {

using nlohmann::json;

std::shared_ptr<const ModelBundle> load_bundle(const std::string& dir) {
    auto b = std::make_shared<ModelBundle>();
    b->dir = dir;
    std::string acc;
    for (const char* s : {"decompose", "cluster", "trajectory", "disruption", "fit", "predict"}) {
        const std::string manifest = join_path(join_path(dir, s), "manifest.json");
        if (!path_exists(manifest)) fail(ErrorCode::MissingInput, "bundle is missing " + manifest);
        acc += std::string(s) + ':' + sha256_file(manifest) + '\n';
    }
    b->hash = sha256_hex(acc);
    b->tucker = load_tucker(dir);
    b->ages = b->tucker.ages();
    b->clusters = load_cluster_summary(dir);
    b->trajectories = load_trajectories(dir);
    if (has_neural_trajectory(dir)) b->neural = load_neural_trajectory(dir);
    b->disruptions = load_disruptions(dir);
    b->fitter = make_fitter_cache(fitter_grids(b->trajectories), profile_map(b->disruptions));
    b->calibration = load_fit_calibration(dir);
    b->one_parameter = load_indicator_model(dir, IndicatorVariant::OneParameter);
    b->two_parameter = load_indicator_model(dir, IndicatorVariant::TwoParameter);
    b->recon = build_recon(b->tucker, b->one_parameter.c_age);
    return b;
}

namespace {

Response error(int status, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    return {status, extra};
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

json sex_tables(const Vector& qx, int ages) {
    const Vector ax = default_ax(ages);
    json out = json::object();
    for (int s = 0; s < 2; ++s) {
        const Vector q = qx.segment(static_cast<Eigen::Index>(s) * ages, ages);
        const LifeTable lt = lifetable_from_mx_ax(mx_from_qx(q, ax), ax);
        out[s == 0 ? "female" : "male"] = {{"qx", to_std(lt.qx)}, {"lx", to_std(lt.lx)}, {"ex", to_std(lt.ex)}};
    }
    return out;
}

std::optional<double> number_param(const Query& q, const std::string& key) {
    const auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(it->second, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != it->second.size() || !std::isfinite(v)) throw std::invalid_argument(key);
    return v;
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::parse_error&) {
        throw std::invalid_argument("request body is not valid JSON");
    }
}

std::vector<double> number_array(const json& j, const char* what) {
    if (!j.is_array()) throw std::invalid_argument(std::string(what) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw std::invalid_argument(std::string(what) + " must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

Response handle_meta(const ModelBundle& b) {
    json clusters = json::array();
    for (const auto& g : b.trajectories.grids) {
        json c = {{"id", g.cluster},
                  {"name", g.cluster == 0 ? "all" : "cluster " + std::to_string(g.cluster)},
                  {"observations", g.n_obs},
                  {"e0_range", {g.e0_min(), g.e0_max()}},
                  {"neural", static_cast<bool>(b.neural) && g.cluster >= 1}};
        if (g.cluster >= 1 && g.cluster <= b.clusters.k) c["populations"] = b.clusters.pops[static_cast<std::size_t>(g.cluster - 1)];
        clusters.push_back(c);
    }
    json types = json::array();
    for (const auto& [type, p] : b.disruptions.profiles) {
        const auto sub = b.disruptions.subclusters.find(type);
        types.push_back({{"id", type}, {"name", disruption_name(type)}, {"events", p.n_events},
                         {"subclusters", sub == b.disruptions.subclusters.end() ? 0 : sub->second.k}});
    }
    json engines = {"lowess"};
    if (b.neural) engines.push_back("neural");
    return {200,
            {{"bundle_hash", b.hash},
             {"ages", b.ages},
             {"k", b.clusters.k},
             {"clusters", clusters},
             {"disruption_types", types},
             {"engines", engines},
             {"neural_e0_range", b.neural ? json({b.neural->encoding.e0_min, b.neural->encoding.e0_max}) : json(nullptr)},
             {"fit", {{"sigma_lambda", b.calibration.sigma_lambda}, {"gap", b.calibration.gap}}},
             {"schedule_order", "female ages 0..A-1 then male ages 0..A-1"}}};
}

Response handle_schedule(const ModelBundle& b, const Query& q) {
    double e0 = 0.0, lambda = 0.0;
    int cluster = 0, sub = -1, type = kNone;
    std::string engine = "lowess";
    try {
        const auto e = number_param(q, "e0");
        if (!e) return error(400, "missing parameter e0");
        e0 = *e;
        if (const auto c = number_param(q, "cluster")) cluster = static_cast<int>(*c);
        if (const auto l = number_param(q, "lambda")) lambda = *l;
        if (const auto s = number_param(q, "subcluster")) sub = static_cast<int>(*s);
    } catch (const std::invalid_argument& e) {
        return error(400, std::string("parameter ") + e.what() + " must be a finite number");
    }
    if (q.count("engine")) engine = q.at("engine");
    if (q.count("type")) {
        const std::string t = q.at("type");
        type = t == "none" || t.empty() ? kNone : t == "war" ? kWar : t == "respiratory" ? kRespiratory : t == "enteric" ? kEnteric : -1;
        if (type < 0) return error(400, "type must be none, war, respiratory or enteric");
    }
    if (lambda < 0.0) return error(400, "lambda must be non-negative");
    if (type == kNone && lambda != 0.0) return error(400, "lambda needs a disruption type");
    if (type != kNone && !b.disruptions.profiles.count(type))
        return error(400, std::string("no profile for type ") + disruption_name(type));
    if (sub >= 0) {
        const auto it = b.disruptions.subclusters.find(type);
        if (it == b.disruptions.subclusters.end() || sub >= it->second.k) return error(400, "unknown subcluster");
    }

    const TrajectoryGrid* grid = b.trajectories.find(cluster);
    Vector base;
    double e0_achieved = 0.0;
    if (engine == "lowess") {
        if (!grid) return error(400, "unknown cluster " + std::to_string(cluster));
        if (e0 < grid->e0_min() || e0 > grid->e0_max())
            return error(422, "e0 outside the supported range", {{"supported_range", {grid->e0_min(), grid->e0_max()}}});
        const Reconstruction r = reconstruct_at(*grid, e0);
        base = r.z;
        e0_achieved = r.e0;
    } else if (engine == "neural") {
        if (!b.neural) return error(400, "bundle has no neural trajectory");
        if (cluster < 1 || cluster > b.neural->embeddings.e.rows())
            return error(400, "neural engine needs a cluster between 1 and " + std::to_string(b.neural->embeddings.e.rows()));
        const double lo = b.neural->encoding.e0_min, hi = b.neural->encoding.e0_max;
        if (e0 < lo || e0 > hi) return error(422, "e0 outside the supported range", {{"supported_range", {lo, hi}}});
        base = b.neural->predict(cluster - 1, e0);
        e0_achieved = forward_e0(base);
    } else {
        return error(400, "engine must be lowess or neural");
    }

    const Vector z = type == kNone || lambda == 0.0 ? base : b.disruptions.full_model(base, type, lambda, sub);
    double bf = 0, bm = 0, ef = 0, em = 0;
    forward_e0_pair(base, bf, bm);
    forward_e0_pair(z, ef, em);
    const Vector qx = expit(z);
    return {200,
            {{"cluster", cluster},
             {"engine", engine},
             {"e0_target", e0},
             {"e0_achieved", e0_achieved},
             {"type", disruption_name(type)},
             {"lambda", lambda},
             {"subcluster", sub},
             {"ages", b.ages},
             {"logit_qx", to_std(z)},
             {"qx", to_std(qx)},
             {"life_table", sex_tables(qx, b.ages)},
             {"e0_female", ef},
             {"e0_male", em},
             {"baseline_e0_female", bf},
             {"baseline_e0_male", bm},
             {"delta_e0_female", ef - bf},
             {"delta_e0_male", em - bm}}};
}

Response handle_fit(const ModelBundle& b, const std::string& body) {
    Vector y;
    try {
        const json j = parse_body(body);
        const int n = 2 * b.ages;
        std::vector<double> v;
        bool probs = false;
        if (j.is_array()) {
            v = number_array(j, "body");
        } else if (j.is_object() && j.contains("logit")) {
            v = number_array(j["logit"], "logit");
        } else if (j.is_object() && j.contains("qx")) {
            v = number_array(j["qx"], "qx");
            probs = true;
        } else {
            return error(400, "body must hold logit or qx");
        }
        if (static_cast<int>(v.size()) != n)
            return error(400, "expected " + std::to_string(n) + " values, got " + std::to_string(v.size()),
                         {{"expected", n}, {"received", v.size()}});
        y = Eigen::Map<const Vector>(v.data(), n);
        if (probs) {
            if ((y.array() <= 0.0).any() || (y.array() >= 1.0).any()) return error(400, "qx values must lie in (0, 1)");
            y = logit(y);
        }
        if (!y.allFinite()) return error(400, "values must be finite");
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    FitOptions fo;
    fo.sigma_lambda = b.calibration.sigma_lambda;
    fo.gap_threshold = b.calibration.gap;
    const FitResult r = fit_schedule(b.fitter, y, fo);
    json out = fit_result_json(r);
    out["sigma_lambda"] = fo.sigma_lambda;
    out["gap_threshold"] = fo.gap_threshold;
    return {200, out};
}

Response handle_predict(const ModelBundle& b, const std::string& body) {
    std::vector<double> probs;
    try {
        const json j = parse_body(body);
        if (!j.is_object() || !j.contains("q5")) return error(400, "body must hold q5: [female, male]");
        probs = number_array(j["q5"], "q5");
        if (probs.size() != 2) return error(400, "q5 must hold two values");
        if (j.contains("q45") && !j["q45"].is_null()) {
            const auto adult = number_array(j["q45"], "q45");
            if (adult.size() != 2) return error(400, "q45 must hold two values");
            probs.insert(probs.end(), adult.begin(), adult.end());
        }
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    for (double p : probs)
        if (!(p > 0.0 && p < 1.0)) return error(400, "probabilities must lie in (0, 1)");
    const bool adult = probs.size() == 4;
    const IndicatorModel& m = adult ? b.two_parameter : b.one_parameter;
    const Vector z = predict_logit(m, b.recon, probs);
    const Vector qx = expit(z);
    double ef = 0, em = 0;
    forward_e0_pair(z, ef, em);
    return {200,
            {{"variant", adult ? "two-parameter" : "one-parameter"},
             {"inputs", probs},
             {"ages", b.ages},
             {"logit_qx", to_std(z)},
             {"qx", to_std(qx)},
             {"life_table", sex_tables(qx, b.ages)},
             {"e0_female", ef},
             {"e0_male", em}}};
}

// ---- HTTP ---------------------------------------------------------------

struct Service::Impl {
    std::shared_ptr<const ModelBundle> bundle;
    httplib::Server server;
    std::thread thread;
};

namespace {

void reply(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

}  // namespace

Service::Service(std::shared_ptr<const ModelBundle> bundle) : impl_(std::make_unique<Impl>()) {
    impl_->bundle = std::move(bundle);
    const ModelBundle* b = impl_->bundle.get();
    auto& s = impl_->server;
    s.Get("/v1/meta", [b](const httplib::Request&, httplib::Response& res) { reply(res, handle_meta(*b)); });
    s.Get("/v1/schedule", [b](const httplib::Request& req, httplib::Response& res) {
        Query q;
        for (const auto& [k, v] : req.params) q[k] = v;
        reply(res, handle_schedule(*b, q));
    });
    s.Post("/v1/fit", [b](const httplib::Request& req, httplib::Response& res) { reply(res, handle_fit(*b, req.body)); });
    s.Post("/v1/predict",
           [b](const httplib::Request& req, httplib::Response& res) { reply(res, handle_predict(*b, req.body)); });
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        Response r = error(500, "internal error");
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            r = error(e.code() == ErrorCode::DomainError || e.code() == ErrorCode::InvalidInput ? 400 : 500, e.what());
        } catch (const std::exception& e) {
            r = error(500, e.what());
        }
        reply(res, r);
    });
}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) fail(ErrorCode::IoError, "cannot bind " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void Service::run(const std::string& host, int port) {
    if (!impl_->server.bind_to_port(host, port)) fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace mdmx
