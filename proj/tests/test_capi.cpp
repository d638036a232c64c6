#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mdmx/mdmx.h"

using nlohmann::json;

namespace {

std::string take(char* s) {
    std::string out = s ? s : "";
    mdmx_free_string(s);
    return out;
}

const std::string& work_dir() {
    static const std::string dir = [] {
        const auto p = std::filesystem::temp_directory_path() / ("mdmx_capi_" + std::to_string(::getpid()));
        std::filesystem::remove_all(p);
        return p.string();
    }();
    return dir;
}

json small_overrides() {
    return {{"seed", 11},
            {"synth", {{"countries", 6}, {"years", 100}}},
            {"cluster", {{"k_max", 6}}},
            {"trajectory", {{"nodes", 80}, {"neural_epochs", 60}}},
            {"disruption", {{"neural_epochs", 60}, {"embed_epochs", 300}}},
            {"fit", {{"cv_schedules", 200}}},
            {"predict", {{"epochs", 300}}},
            {"forecast", {{"origins", {1970, 1980, 1990}}, {"horizon", 10}}}};
}

mdmx_bundle* bundle() {
    static mdmx_bundle* b = [] {
        char* out = nullptr;
        const json opts = {{"work", work_dir()}, {"overrides", small_overrides()}};
        const mdmx_status s = mdmx_run_stage("all", opts.dump().c_str(), &out);
        REQUIRE_MESSAGE(s == MDMX_OK, mdmx_last_error());
        take(out);
        mdmx_bundle* handle = nullptr;
        REQUIRE(mdmx_bundle_open(work_dir().c_str(), &handle) == MDMX_OK);
        return handle;
    }();
    return b;
}

}  // namespace

TEST_CASE("version and status names") {
    CHECK(std::strlen(mdmx_version()) > 0);
    CHECK(std::string(mdmx_status_name(MDMX_OK)) == "ok");
    CHECK(std::string(mdmx_status_name(MDMX_MISSING_INPUT)) == "MissingInput");
    CHECK(std::string(mdmx_status_name(MDMX_CONFIG_ERROR)) == "ConfigError");
    CHECK(std::string(mdmx_status_name(MDMX_INTERNAL_ERROR)) == "internal");
    CHECK(std::string(mdmx_status_name(static_cast<mdmx_status>(99))) == "unknown");
}

TEST_CASE("life expectancy through the C boundary") {
    std::vector<double> q(110, 0.5);
    double e0 = 0.0;
    REQUIRE(mdmx_e0_from_qx(q.data(), q.size(), &e0) == MDMX_OK);
    CHECK(std::abs(e0 - (0.65 + 0.75 * (1.0 - std::pow(2.0, -109)))) <= 1e-10);
    CHECK(mdmx_e0_from_qx(nullptr, 3, &e0) == MDMX_INVALID_INPUT);
    CHECK(std::strlen(mdmx_last_error()) > 0);
}

TEST_CASE("configuration and dependency errors map to their codes") {
    char* out = nullptr;
    CHECK(mdmx_run_stage("decompose", R"({"work": "/tmp", "bogus": 1})", &out) == MDMX_CONFIG_ERROR);
    CHECK(mdmx_run_stage("decompose", R"({"overrides": {"tucker": {"tauu": 1}}})", &out) == MDMX_CONFIG_ERROR);
    CHECK(std::string(mdmx_last_error()).find("tucker.tauu") != std::string::npos);
    CHECK(mdmx_run_stage("decompose", "{broken", &out) == MDMX_CONFIG_ERROR);
    CHECK(mdmx_run_stage("nonsense", "{}", &out) == MDMX_CONFIG_ERROR);
    CHECK(mdmx_run_stage("cluster", R"({"work": "/nonexistent/mdmx_work"})", &out) == MDMX_MISSING_INPUT);
    CHECK(std::string(mdmx_last_error()).find("/nonexistent/mdmx_work/tensor/manifest.json") != std::string::npos);
    CHECK(out == nullptr);
    mdmx_bundle* b = nullptr;
    CHECK(mdmx_bundle_open("/nonexistent/mdmx_work", &b) == MDMX_MISSING_INPUT);
    CHECK(b == nullptr);
}

TEST_CASE("bundle queries") {
    mdmx_bundle* b = bundle();
    char* out = nullptr;
    REQUIRE(mdmx_bundle_meta(b, &out) == MDMX_OK);
    const json meta = json::parse(take(out));
    CHECK(meta.at("k").get<int>() >= 1);
    const json c = meta.at("clusters").back();
    const double lo = c.at("e0_range")[0], hi = c.at("e0_range")[1];

    int status = 0;
    const json req = {{"cluster", c.at("id")}, {"e0", 0.5 * (lo + hi)}};
    REQUIRE(mdmx_bundle_schedule(b, req.dump().c_str(), &status, &out) == MDMX_OK);
    CHECK(status == 200);
    const json sched = json::parse(take(out));
    const auto z = sched.at("logit_qx").get<std::vector<double>>();
    CHECK(z.size() == 220);

    const json bad = {{"cluster", c.at("id")}, {"e0", hi + 4.0}};
    REQUIRE(mdmx_bundle_schedule(b, bad.dump().c_str(), &status, &out) == MDMX_OK);
    CHECK(status == 422);
    take(out);

    REQUIRE(mdmx_bundle_fit(b, z.data(), z.size(), &out) == MDMX_OK);
    CHECK(json::parse(take(out)).at("type") == "none");
    CHECK(mdmx_bundle_fit(b, z.data(), 219, &out) == MDMX_INVALID_INPUT);

    const double one[] = {0.02, 0.025}, two[] = {0.02, 0.025, 0.08, 0.15}, wrong[] = {1.2, 0.02};
    REQUIRE(mdmx_bundle_predict(b, one, 2, &out) == MDMX_OK);
    CHECK(json::parse(take(out)).at("variant") == "one-parameter");
    REQUIRE(mdmx_bundle_predict(b, two, 4, &out) == MDMX_OK);
    CHECK(json::parse(take(out)).at("variant") == "two-parameter");
    CHECK(mdmx_bundle_predict(b, wrong, 2, &out) == MDMX_DOMAIN_ERROR);
    CHECK(mdmx_bundle_predict(b, one, 3, &out) == MDMX_INVALID_INPUT);
}

TEST_CASE("single stages rerun through the C API") {
    bundle();
    char* out = nullptr;
    const json opts = {{"work", work_dir()}, {"overrides", small_overrides()}};
    REQUIRE(mdmx_run_stage("report", opts.dump().c_str(), &out) == MDMX_OK);
    const json r = json::parse(take(out));
    CHECK(r.at("stage") == "report");
    CHECK(std::filesystem::exists(work_dir() + "/report/summary.csv"));
    mdmx_bundle_close(bundle());
    std::filesystem::remove_all(work_dir());
}
