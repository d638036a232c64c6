#pragma once

#include <algorithm>
#include <cmath>

#include "mdmx/data.hpp"
#include "mdmx/lifetable.hpp"
#include "mdmx/synth.hpp"

namespace mdmx::testing {

struct SyntheticPanel {
    RawSeries raw;
    SynthTruth truth;
    YearLabels labels;
    MortalityTensor tensor;
    ExceptionalSet exceptional;
};

inline SyntheticPanel synthetic_panel(int countries = 6, int years = 80, std::uint64_t seed = 7, int first_year = 1900) {
    SyntheticPanel p;
    SynthConfig cfg;
    cfg.countries = countries;
    cfg.years = years;
    cfg.first_year = first_year;
    cfg.seed = seed;
    cfg.plant_curation_cases = false;
    p.raw = synthesize(cfg, &p.truth);
    p.raw = curate(p.raw, CurationConfig{});
    p.labels = label_exceptional(p.raw, load_events(default_events_path()));
    p.raw = adaptive_pool(p.raw, p.labels, PoolingConfig{});
    p.tensor = assemble_tensor(p.raw, p.labels, TensorConfig{}, &p.exceptional);
    return p;
}

// Stacked logit-q schedule of the deterministic synthetic hazard.
inline Vector regime_schedule(int regime, double progress, int ages = kDefaultAges) {
    Vector z(2 * ages);
    for (int s : {kFemale, kMale}) {
        const Vector mu = synth_hazard(s, regime, progress, 1.0, ages);
        for (int a = 0; a < ages; ++a) z[s * ages + a] = logit(std::clamp(1.0 - std::exp(-mu[a]), kQMin, kQMax));
    }
    return z;
}

}  // namespace mdmx::testing
