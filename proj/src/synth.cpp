#include "mdmx/synth.hpp"

#include <cmath>

#include "mdmx/error.hpp"
#include "mdmx/numerics/random.hpp"

namespace mdmx {
namespace {

const char* const kCodes[] = {"SWE", "FRATNP", "ITA", "NOR", "DNK", "NLD", "CHE", "ISL", "FIN", "BEL",
                              "ESP", "GBRTENW", "AUS", "CAN", "USA", "JPN", "AUT", "PRT", "IRL", "GRC"};

double bump(double a, double centre, double width) {
    const double u = (a - centre) / width;
    return std::exp(-0.5 * u * u);
}

}  // namespace

Vector synth_hazard(int sex, int regime, double progress, double speed, int ages) {
    const double p = progress * speed;
    const bool male = sex == kMale;
    const double infant = 0.15 * std::exp(-4.0 * p) * (male ? 1.2 : 1.0);
    const double makeham = 0.006 * std::exp(-2.5 * p) * (male ? 1.2 : 1.0);
    const double gompertz = 0.006 * std::exp(-1.0 * p) * (male ? 1.5 : 1.0);
    const double slope = male ? 0.085 : 0.095;
    Vector mu(ages);
    for (int a = 0; a < ages; ++a) {
        double m = infant * std::exp(-0.9 * a) + makeham + gompertz * std::exp(slope * (a - 50));
        if (male) m += 0.0012 * std::exp(-1.5 * p) * bump(a, 22, 5);
        if (regime % 3 == 1 && male) m += 0.004 * std::exp(-0.5 * p) * bump(a, 55, 10);
        if (regime % 3 == 2) m += 0.012 * std::exp(-3.0 * p) * std::exp(-0.45 * a) * (a >= 1 ? 1.0 : 0.0);
        mu[a] = m;
    }
    return mu;
}

Vector synth_disruption_shape(int type, int sex, int ages, double centre_shift) {
    Vector s = Vector::Zero(ages);
    const bool male = sex == kMale;
    for (int a = 0; a < ages; ++a) {
        switch (type) {
            case kWar:
                s[a] = (male ? 0.012 : 0.001) * bump(a, 27 + centre_shift, 7);
                break;
            case kRespiratory:
                s[a] = 0.02 * std::exp(-0.8 * a) + 0.004 * bump(a, 28 + centre_shift, 8) +
                       0.002 * std::exp(0.06 * (a - 60));
                break;
            case kEnteric:
                s[a] = 0.004 + 0.015 * std::exp(-0.3 * a) + 0.00008 * a;
                break;
            default: break;
        }
    }
    return s;
}

RawSeries synthesize(const SynthConfig& cfg, SynthTruth* truth) {
    const int n_codes = static_cast<int>(sizeof(kCodes) / sizeof(kCodes[0]));
    require(cfg.countries >= 1 && cfg.countries <= n_codes, ErrorCode::InvalidInput,
            "synthesize: countries must be in [1, " + std::to_string(n_codes) + "]");
    require(cfg.years >= 1 && cfg.ages >= 20 && cfg.regimes >= 1, ErrorCode::InvalidInput, "synthesize: bad shape");
    const EventDictionary dict =
        cfg.plant_disruptions ? load_events(cfg.events_path.empty() ? default_events_path() : cfg.events_path)
                              : EventDictionary{};
    Rng rng(cfg.seed);
    RawSeries raw;
    raw.ages = cfg.ages;
    const Vector ax = default_ax(cfg.ages);
    const int old_age = std::min(80, cfg.ages);

    for (int c = 0; c < cfg.countries; ++c) {
        const std::string pop = kCodes[c];
        const int regime = c % cfg.regimes;
        if (truth) truth->regime[pop] = regime;
        const double speed = rng.uniform(0.8, 1.2);
        // Iceland-sized populations exercise pooling
        const double size = pop == "ISL" ? 3e5 : std::exp(rng.uniform(std::log(2e7), std::log(6e7)));
        const double shift = rng.uniform(-3, 3);
        double level = 0.0;
        for (int yi = 0; yi < cfg.years; ++yi) {
            const int year = cfg.first_year + yi;
            const double progress = cfg.years > 1 ? static_cast<double>(yi) / (cfg.years - 1) : 0.0;
            level = 0.6 * level + rng.normal(0.0, 0.03);
            const int d = cfg.plant_disruptions ? event_label(dict, pop, year) : kNone;
            const double lambda = d != kNone ? rng.uniform(0.6, 2.0) : 0.0;
            if (truth && d != kNone) truth->intensity[{pop, year}] = lambda;
            for (int sex : {kFemale, kMale}) {
                Vector mu = synth_hazard(sex, regime, progress, speed, cfg.ages) * std::exp(level);
                if (d != kNone) mu += lambda * synth_disruption_shape(d, sex, cfg.ages, shift);
                AgeTable t;
                t.ax = ax;
                t.exposure.resize(cfg.ages);
                t.deaths.resize(cfg.ages);
                t.mx.resize(cfg.ages);
                double surv = 1.0, total = 0.0;
                Vector share(cfg.ages);
                for (int a = 0; a < cfg.ages; ++a) {
                    share[a] = std::max(surv, 1e-5) * std::exp(-0.01 * a);
                    total += share[a];
                    surv *= std::exp(-mu[a]);
                }
                const double pop_size = size * (1.0 + 0.5 * progress) * (sex == kMale ? 0.49 : 0.51);
                for (int a = 0; a < cfg.ages; ++a) {
                    const double e = std::round(pop_size * share[a] / total * 10.0) / 10.0 + 1.0;
                    const double m = mu[a];  // constant force within the year
                    t.exposure[a] = e;
                    t.deaths[a] = a < old_age ? static_cast<double>(rng.poisson(m * e)) : m * e;
                    t.mx[a] = t.deaths[a] / e;
                }
                t.qx = lifetable_from_mx_ax(t.mx, ax).qx;
                t.has_counts = true;
                raw.tables.emplace(TableKey{pop, sex, year}, std::move(t));
            }
        }
    }
    if (cfg.plant_curation_cases && cfg.years >= 10 && cfg.ages > 109) {
        // a flat old-age segment (dropped with its partner) and a male-only year
        auto& flat = raw.tables.at({kCodes[0], kFemale, cfg.first_year + 5});
        for (int a = 105; a <= 109; ++a) flat.qx[a] = flat.qx[105];
        if (cfg.countries > 1) raw.tables.erase({kCodes[1], kFemale, cfg.first_year + 7});
    }
    return raw;
}

}  // namespace mdmx
