#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "mdmx/disruption.hpp"
#include "mdmx/fitter.hpp"
#include "mdmx/pipeline.hpp"
#include "mdmx/svdcomp.hpp"
#include "mdmx/trajectory.hpp"
#include "mdmx/tucker.hpp"

namespace mdmx {

// Everything the HTTP handlers read. Loaded once from a pipeline work
// directory and never modified afterwards.
struct ModelBundle {
    std::string dir;
    std::string hash;
    int ages = kDefaultAges;
    TuckerModel tucker;
    ClusterSummary clusters;
    TrajectorySet trajectories;
    std::optional<NeuralTrajectory> neural;
    DisruptionModel disruptions;
    FitterCache fitter;
    FitCalibration calibration;
    ReconMatrix recon;
    IndicatorModel one_parameter, two_parameter;
};

std::shared_ptr<const ModelBundle> load_bundle(const std::string& dir);

struct Response {
    int status = 200;
    nlohmann::json body;
};

using Query = std::map<std::string, std::string>;

Response handle_meta(const ModelBundle& b);
Response handle_schedule(const ModelBundle& b, const Query& q);
Response handle_fit(const ModelBundle& b, const std::string& body);
Response handle_predict(const ModelBundle& b, const std::string& body);

// HTTP front end over the handlers.
class Service {
public:
    explicit Service(std::shared_ptr<const ModelBundle> bundle);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds and serves on a background thread; port 0 picks a free port.
    // Returns the bound port.
    int start(const std::string& host, int port);
    // Binds and serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mdmx
