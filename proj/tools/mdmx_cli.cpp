#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdmx/mdmx.h"

using nlohmann::json;

namespace {

struct Common {
    std::string work = "work";
    std::string config;
    std::optional<int> threads;
    std::optional<unsigned long long> seed;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--work,-w", c.work, "work directory holding the stage stores")->capture_default_str();
    sub->add_option("--config,-c", c.config, "JSON config file");
    sub->add_option("--threads", c.threads, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", c.seed, "master seed");
}

int exit_code(mdmx_status s) {
    switch (s) {
        case MDMX_OK: return 0;
        case MDMX_MISSING_INPUT: return 2;
        case MDMX_CONFIG_ERROR: return 3;
        default: return 1;
    }
}

int report(mdmx_status s, char* result) {
    if (s != MDMX_OK) {
        std::fprintf(stderr, "mdmx: %s: %s\n", mdmx_status_name(s), mdmx_last_error());
        return exit_code(s);
    }
    std::printf("%s\n", json::parse(result).dump(2).c_str());
    mdmx_free_string(result);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mortality tensor toolkit: batch pipeline stages and model service"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(mdmx_version()));

    Common common;
    json overrides = json::object();
    json args = json::object();
    std::vector<std::pair<std::string, CLI::App*>> subs;

    auto stage = [&](const std::string& name, const std::string& help) {
        CLI::App* s = app.add_subcommand(name, help);
        add_common(s, common);
        subs.emplace_back(name, s);
        return s;
    };

    // stage-specific flags go into plain variables first, then into JSON
    std::optional<int> countries, years, first_year, regimes, schedules, k;
    std::string bundle, out, in;
    std::vector<std::string> lifetables, counts;
    std::optional<double> q5f, q5m, q45f, q45m;
    std::string method;
    bool search = false;

    CLI::App* synth = stage("synth", "generate a synthetic panel, or a planted fitting corpus with --schedules");
    synth->add_option("--countries", countries, "number of populations");
    synth->add_option("--years", years, "number of calendar years");
    synth->add_option("--first-year", first_year, "first calendar year");
    synth->add_option("--regimes", regimes, "number of mortality regimes");
    synth->add_option("--schedules", schedules, "write this many planted schedules instead of a panel");
    synth->add_option("--bundle", bundle, "work directory with trajectory and disruption stores (with --schedules)");
    synth->add_option("--out", out, "schedule CSV path (with --schedules)");

    CLI::App* ingest = stage("ingest", "read, curate and label life tables");
    ingest->add_option("--lifetables", lifetables, "life table CSV files (default: the synth output)");
    ingest->add_option("--counts", counts, "death and exposure CSV files");

    stage("pool", "pool small-population years");
    stage("tensor", "assemble the logit mortality tensor");
    stage("decompose", "weighted Tucker decomposition");
    CLI::App* cluster = stage("cluster", "regime clustering and epochs");
    cluster->add_option("--k", k, "fixed number of clusters");
    stage("trajectory", "cluster trajectories over e0");
    CLI::App* disruption = stage("disruption", "disruption profiles and intensities");
    disruption->add_option("--method", method, "baseline method: naive, temporal, penalized, neural");
    CLI::App* fit = stage("fit", "calibrate the fitter; with --in, fit a schedule CSV");
    fit->add_option("--in", in, "CSV of id plus 2A logit values per row");
    fit->add_option("--out", out, "output CSV of fit results");
    CLI::App* predict = stage("predict", "train indicator models; with --q5f/--q5m, predict a life table");
    predict->add_option("--q5f", q5f, "female 5q0");
    predict->add_option("--q5m", q5m, "male 5q0");
    predict->add_option("--q45f", q45f, "female 45q15");
    predict->add_option("--q45m", q45m, "male 45q15");
    predict->add_option("--out", out, "life table CSV path");
    CLI::App* forecast = stage("forecast", "Kalman forecasts with rolling-origin calibration");
    forecast->add_flag("--search", search, "grid-search the drift hierarchy weights");
    stage("report", "summary and long-format tables");

    CLI::App* serve = app.add_subcommand("serve", "serve the HTTP API over a work directory");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<int> serve_threads;
    serve->add_option("--bundle", bundle, "work directory produced by the pipeline")->required();
    serve->add_option("--port", port, "TCP port")->capture_default_str();
    serve->add_option("--host", host, "bind address")->capture_default_str();
    serve->add_option("--threads", serve_threads, "worker threads (default: all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int r = app.exit(e);
        return r == 0 ? 0 : 3;
    }

    if (serve->parsed()) {
        mdmx_set_threads(serve_threads.value_or(0));
        std::fprintf(stderr, "mdmx: serving %s on http://%s:%d\n", bundle.c_str(), host.c_str(), port);
        const mdmx_status s = mdmx_serve(bundle.c_str(), host.c_str(), port);
        if (s != MDMX_OK) std::fprintf(stderr, "mdmx: %s: %s\n", mdmx_status_name(s), mdmx_last_error());
        return exit_code(s);
    }

    std::string name;
    for (const auto& [n, s] : subs)
        if (s->parsed()) name = n;

    if (common.threads) overrides["threads"] = *common.threads;
    if (common.seed) overrides["seed"] = *common.seed;
    if (countries) overrides["synth"]["countries"] = *countries;
    if (years) overrides["synth"]["years"] = *years;
    if (first_year) overrides["synth"]["first_year"] = *first_year;
    if (regimes) overrides["synth"]["regimes"] = *regimes;
    if (k) overrides["cluster"]["k"] = *k;
    if (!method.empty()) overrides["disruption"]["method"] = method;
    if (search) overrides["forecast"]["search"] = true;
    if (schedules) {
        args["schedules"] = *schedules;
        if (out.empty()) {
            std::fprintf(stderr, "mdmx: --schedules needs --out\n");
            return 3;
        }
        args["bundle"] = bundle.empty() ? common.work : bundle;
    }
    if (!lifetables.empty()) args["lifetables"] = lifetables;
    if (!counts.empty()) args["counts"] = counts;
    if (!in.empty()) args["in"] = in;
    if (!out.empty()) args["out"] = out;
    if (q5f) args["q5f"] = *q5f;
    if (q5m) args["q5m"] = *q5m;
    if (q45f) args["q45f"] = *q45f;
    if (q45m) args["q45m"] = *q45m;

    json opts = {{"work", common.work}, {"overrides", overrides}, {"args", args}};
    if (!common.config.empty()) opts["config"] = common.config;
    // threads default to every core unless the config or a flag says otherwise
    mdmx_set_threads(0);
    char* result = nullptr;
    const mdmx_status s = mdmx_run_stage(name.c_str(), opts.dump().c_str(), &result);
    return report(s, result);
}
