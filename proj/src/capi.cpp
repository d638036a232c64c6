#include "mdmx/mdmx.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "mdmx/config.hpp"
#include "mdmx/error.hpp"
#include "mdmx/lifetable.hpp"
#include "mdmx/parallel.hpp"
#include "mdmx/pipeline.hpp"
#include "mdmx/service.hpp"

using nlohmann::json;

struct mdmx_bundle {
    std::shared_ptr<const mdmx::ModelBundle> bundle;
};

namespace {

thread_local std::string g_last_error;

mdmx_status status_of(mdmx::ErrorCode c) { return static_cast<mdmx_status>(static_cast<int>(c) + 1); }

char* dup_string(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (p) std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

template <typename F>
mdmx_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return MDMX_OK;
    } catch (const mdmx::Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return MDMX_CONFIG_ERROR;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MDMX_INTERNAL_ERROR;
    } catch (...) {
        g_last_error = "unknown error";
        return MDMX_INTERNAL_ERROR;
    }
}

mdmx_status invalid(const char* what) {
    g_last_error = what;
    return MDMX_INVALID_INPUT;
}

// Overrides are merged into the config object before the strict parse, so
// they are validated exactly like file values.
mdmx::PipelineConfig resolve_config(const json& opts) {
    json cfg = json::object();
    if (opts.contains("config")) {
        const json& c = opts["config"];
        if (c.is_string()) {
            const std::string path = c.get<std::string>();
            cfg = mdmx::config_to_json(mdmx::load_config(path));
        } else if (c.is_object()) {
            cfg = mdmx::config_to_json(mdmx::parse_config(c.dump()));
        } else {
            mdmx::fail(mdmx::ErrorCode::ConfigError, "config must be a path or an object");
        }
    } else {
        cfg = mdmx::config_to_json(mdmx::PipelineConfig{});
    }
    if (opts.contains("overrides")) {
        const json& o = opts["overrides"];
        if (!o.is_object()) mdmx::fail(mdmx::ErrorCode::ConfigError, "overrides must be an object");
        // unknown override keys must fail, so merge only into the full default tree
        cfg.merge_patch(o);
    }
    return mdmx::parse_config(cfg.dump());
}

}  // namespace

extern "C" {

const char* mdmx_version(void) { return "1.0.0"; }

const char* mdmx_status_name(mdmx_status status) {
    if (status == MDMX_OK) return "ok";
    if (status == MDMX_INTERNAL_ERROR) return "internal";
    if (status < MDMX_OK || status > MDMX_INTERNAL_ERROR) return "unknown";
    return mdmx::to_string(static_cast<mdmx::ErrorCode>(static_cast<int>(status) - 1));
}

const char* mdmx_last_error(void) { return g_last_error.c_str(); }

void mdmx_set_threads(int n) { mdmx::set_thread_count(n < 0 ? 0 : n); }

void mdmx_free_string(char* s) { std::free(s); }

mdmx_status mdmx_run_stage(const char* stage, const char* options_json, char** result_json) {
    if (!stage || !result_json) return invalid("stage and result_json are required");
    *result_json = nullptr;
    return guarded([&] {
        json opts = json::object();
        if (options_json && *options_json) {
            try {
                opts = json::parse(options_json);
            } catch (const json::parse_error& e) {
                mdmx::fail(mdmx::ErrorCode::ConfigError, std::string("options: ") + e.what());
            }
        }
        if (!opts.is_object()) mdmx::fail(mdmx::ErrorCode::ConfigError, "options must be a JSON object");
        for (const auto& [k, v] : opts.items())
            if (k != "work" && k != "config" && k != "overrides" && k != "args")
                mdmx::fail(mdmx::ErrorCode::ConfigError, "options: unknown key " + k);
        const mdmx::PipelineConfig cfg = resolve_config(opts);
        const std::string work = opts.value("work", std::string("work"));
        const json args = opts.value("args", json::object());
        const std::string name(stage);
        json out = name == "all" ? json(mdmx::run_pipeline(work, cfg)) : mdmx::run_stage(name, work, cfg, args);
        *result_json = dup_string(out.dump());
    });
}

mdmx_status mdmx_bundle_open(const char* dir, mdmx_bundle** out) {
    if (!dir || !out) return invalid("dir and out are required");
    *out = nullptr;
    return guarded([&] { *out = new mdmx_bundle{mdmx::load_bundle(dir)}; });
}

void mdmx_bundle_close(mdmx_bundle* bundle) { delete bundle; }

mdmx_status mdmx_bundle_meta(const mdmx_bundle* bundle, char** result_json) {
    if (!bundle || !result_json) return invalid("bundle and result_json are required");
    return guarded([&] { *result_json = dup_string(mdmx::handle_meta(*bundle->bundle).body.dump()); });
}

mdmx_status mdmx_bundle_schedule(const mdmx_bundle* bundle, const char* request_json, int* http_status,
                                 char** result_json) {
    if (!bundle || !request_json || !result_json) return invalid("bundle, request and result_json are required");
    return guarded([&] {
        const json req = json::parse(request_json);
        mdmx::Query q;
        for (const auto& [k, v] : req.items()) q[k] = v.is_string() ? v.get<std::string>() : v.dump();
        const mdmx::Response r = mdmx::handle_schedule(*bundle->bundle, q);
        if (http_status) *http_status = r.status;
        *result_json = dup_string(r.body.dump());
    });
}

mdmx_status mdmx_bundle_fit(const mdmx_bundle* bundle, const double* logit_qx, size_t n, char** result_json) {
    if (!bundle || !logit_qx || !result_json) return invalid("bundle, values and result_json are required");
    return guarded([&] {
        const json body = {{"logit", std::vector<double>(logit_qx, logit_qx + n)}};
        const mdmx::Response r = mdmx::handle_fit(*bundle->bundle, body.dump());
        if (r.status != 200) mdmx::fail(mdmx::ErrorCode::InvalidInput, r.body.value("error", "fit failed"));
        *result_json = dup_string(r.body.dump());
    });
}

mdmx_status mdmx_bundle_predict(const mdmx_bundle* bundle, const double* probs, size_t n, char** result_json) {
    if (!bundle || !probs || !result_json) return invalid("bundle, probs and result_json are required");
    if (n != 2 && n != 4) return invalid("predict takes 2 or 4 probabilities");
    return guarded([&] {
        json body = {{"q5", {probs[0], probs[1]}}};
        if (n == 4) body["q45"] = {probs[2], probs[3]};
        const mdmx::Response r = mdmx::handle_predict(*bundle->bundle, body.dump());
        if (r.status != 200) mdmx::fail(mdmx::ErrorCode::DomainError, r.body.value("error", "predict failed"));
        *result_json = dup_string(r.body.dump());
    });
}

mdmx_status mdmx_serve(const char* bundle_dir, const char* host, int port) {
    if (!bundle_dir) return invalid("bundle_dir is required");
    return guarded([&] {
        mdmx::Service service(mdmx::load_bundle(bundle_dir));
        service.run(host ? host : "127.0.0.1", port);
    });
}

mdmx_status mdmx_e0_from_qx(const double* qx, size_t n, double* e0) {
    if (!qx || !e0 || n == 0) return invalid("qx, n and e0 are required");
    return guarded([&] {
        const Eigen::Map<const mdmx::Vector> q(qx, static_cast<Eigen::Index>(n));
        *e0 = mdmx::e0_from_qx(q);
    });
}

}  // extern "C"
