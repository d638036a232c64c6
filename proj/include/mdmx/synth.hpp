#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdmx/data.hpp"

namespace mdmx {

struct SynthConfig {
    int countries = 8;
    int years = 120;
    int first_year = 1900;
    int ages = kDefaultAges;
    int regimes = 3;
    std::uint64_t seed = 7;
    bool plant_disruptions = true;
    bool plant_curation_cases = true;  // one flat table and one unpaired sex
    std::string events_path;           // empty: bundled dictionary
};

struct SynthTruth {
    std::map<std::string, int> regime;                       // per population
    std::map<std::pair<std::string, int>, double> intensity;  // planted exceptional years
};

// Gompertz-Makeham style hazards with an infant term, declining over time at
// country-specific speeds, with regime-specific age patterns. Deaths are
// Poisson below age 80 and expected values above, mimicking smoothed old-age
// rates. Exceptional years from the event dictionary receive a planted excess.
RawSeries synthesize(const SynthConfig& cfg, SynthTruth* truth = nullptr);

// Hazard of the deterministic part of the model (no sampling noise).
Vector synth_hazard(int sex, int regime, double progress, double speed, int ages);

// Excess hazard shape for a disruption type, scaled to unit intensity.
Vector synth_disruption_shape(int type, int sex, int ages, double centre_shift = 0.0);

}  // namespace mdmx
