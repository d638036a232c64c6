#include "mdmx/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "mdmx/error.hpp"

namespace mdmx {
namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

bool is_missing_token(const std::string& s) {
    return s.empty() || s == "NA" || s == "." || s == "NaN" || s == "nan";
}

std::string where(const std::string& path, long line) { return path + ":" + std::to_string(line); }

double parse_value(const std::string& s, const std::string& path, long line) {
    if (is_missing_token(s)) return kNaN;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
        fail(ErrorCode::ParseError, "malformed number '" + s + "' at " + where(path, line));
    return v;
}

int parse_int(const std::string& s, const std::string& path, long line) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::ParseError, "malformed integer '" + s + "' at " + where(path, line));
    return v;
}

int parse_sex(const std::string& s, const std::string& path, long line) {
    if (s == "f" || s == "F") return kFemale;
    if (s == "m" || s == "M") return kMale;
    fail(ErrorCode::ParseError, "unknown sex '" + s + "' at " + where(path, line));
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path);
    return in;
}

void expect_header(std::ifstream& in, const std::string& path, const std::string& header) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::ParseError, "empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) fail(ErrorCode::ParseError, "unexpected header in " + path + ": expected '" + header + "'");
}

// Returns -1 for ages beyond the tracked range, including the open interval.
int parse_age(const std::string& s, int ages, const std::string& path, long line) {
    if (!s.empty() && s.back() == '+') return -1;
    const int a = parse_int(s, path, line);
    if (a < 0) fail(ErrorCode::ParseError, "negative age at " + where(path, line));
    return a < ages ? a : -1;
}

AgeTable empty_table(int ages) {
    AgeTable t;
    t.mx = t.qx = t.ax = Vector::Constant(ages, kNaN);
    t.deaths = t.exposure = Vector::Constant(ages, kNaN);
    return t;
}

std::string fmt(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

bool has_valley_zero(const AgeTable& t, const std::vector<int>& valley) {
    for (int a : valley)
        if (t.mx[a] == 0.0) return true;
    return false;
}

}  // namespace

std::set<std::string> RawSeries::populations() const {
    std::set<std::string> out;
    for (const auto& kv : tables) out.insert(kv.first.pop);
    return out;
}

RawSeries ingest_lifetables(const std::vector<std::string>& paths, int ages) {
    require(ages > 0, ErrorCode::InvalidInput, "ingest: ages must be positive");
    RawSeries raw;
    raw.ages = ages;
    std::map<TableKey, std::vector<char>> seen;
    for (const auto& path : paths) {
        auto in = open_input(path);
        expect_header(in, path, "pop,sex,year,age,mx,qx,ax,lx,dx,Lx,Tx,ex");
        std::string line;
        long lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            const auto f = split_csv(line);
            if (f.size() != 12) fail(ErrorCode::ParseError, "expected 12 fields at " + where(path, lineno));
            if (f[0].empty()) fail(ErrorCode::ParseError, "empty population code at " + where(path, lineno));
            TableKey key{f[0], parse_sex(f[1], path, lineno), parse_int(f[2], path, lineno)};
            const int age = parse_age(f[3], ages, path, lineno);
            const double mx = parse_value(f[4], path, lineno);
            const double qx = parse_value(f[5], path, lineno);
            const double ax = parse_value(f[6], path, lineno);
            for (int c = 7; c < 12; ++c) parse_value(f[c], path, lineno);
            if (age < 0) continue;
            auto it = raw.tables.find(key);
            if (it == raw.tables.end()) {
                it = raw.tables.emplace(key, empty_table(ages)).first;
                seen[key].assign(ages, 0);
            }
            auto& flags = seen[key];
            if (flags[age])
                fail(ErrorCode::DuplicateKey, "duplicate record " + key.pop + "/" + f[1] + "/" + f[2] + "/" +
                                                  std::to_string(age) + " at " + where(path, lineno));
            flags[age] = 1;
            it->second.mx[age] = mx;
            it->second.qx[age] = qx;
            it->second.ax[age] = ax;
        }
    }
    for (auto& [key, t] : raw.tables) {
        const auto& flags = seen[key];
        const bool all_ages = std::all_of(flags.begin(), flags.end(), [](char c) { return c != 0; });
        t.incomplete = !all_ages || !t.mx.allFinite() || !t.qx.allFinite() || !t.ax.allFinite();
        if (t.mx.allFinite() && (t.mx.array() < 0).any())
            fail(ErrorCode::ParseError, "negative mx in " + key.pop + " " + std::to_string(key.year));
    }
    return raw;
}

void attach_counts(RawSeries& raw, const std::vector<std::string>& paths) {
    std::map<TableKey, std::vector<char>> seen;
    for (const auto& path : paths) {
        auto in = open_input(path);
        expect_header(in, path, "pop,sex,year,age,deaths,exposure");
        std::string line;
        long lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            const auto f = split_csv(line);
            if (f.size() != 6) fail(ErrorCode::ParseError, "expected 6 fields at " + where(path, lineno));
            TableKey key{f[0], parse_sex(f[1], path, lineno), parse_int(f[2], path, lineno)};
            const int age = parse_age(f[3], raw.ages, path, lineno);
            const double d = parse_value(f[4], path, lineno);
            const double e = parse_value(f[5], path, lineno);
            if ((std::isfinite(d) && d < 0) || (std::isfinite(e) && e < 0))
                fail(ErrorCode::ParseError, "negative count at " + where(path, lineno));
            if (age < 0) continue;
            auto it = raw.tables.find(key);
            if (it == raw.tables.end()) continue;  // counts without a table are ignored
            auto& flags = seen[key];
            if (flags.empty()) flags.assign(raw.ages, 0);
            if (flags[age])
                fail(ErrorCode::DuplicateKey, "duplicate count record at " + where(path, lineno));
            flags[age] = 1;
            it->second.deaths[age] = d;
            it->second.exposure[age] = e;
        }
    }
    for (auto& [key, t] : raw.tables) t.has_counts = t.deaths.allFinite() && t.exposure.allFinite();
}

RawSeries ingest(const std::vector<std::string>& lifetable_paths, const std::vector<std::string>& count_paths,
                 int ages) {
    RawSeries raw = ingest_lifetables(lifetable_paths, ages);
    attach_counts(raw, count_paths);
    return raw;
}

void write_lifetable_csv(const RawSeries& raw, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
    out << "pop,sex,year,age,mx,qx,ax,lx,dx,Lx,Tx,ex\n";
    for (const auto& [key, t] : raw.tables) {
        const bool complete = t.mx.allFinite() && t.ax.allFinite();
        LifeTable lt;
        if (complete) lt = lifetable_from_mx_ax(t.mx, t.ax);
        for (int a = 0; a < raw.ages; ++a) {
            out << key.pop << ',' << (key.sex == kFemale ? 'f' : 'm') << ',' << key.year << ',' << a << ','
                << fmt(t.mx[a]) << ',' << fmt(t.qx[a]) << ',' << fmt(t.ax[a]) << ',';
            if (complete) {
                out << fmt(lt.lx[a]) << ',' << fmt(lt.dx[a]) << ',' << fmt(lt.Lx[a]) << ',' << fmt(lt.Tx[a]) << ','
                    << fmt(lt.ex[a]) << '\n';
            } else {
                out << "NA,NA,NA,NA,NA\n";
            }
        }
    }
}

void write_counts_csv(const RawSeries& raw, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
    out << "pop,sex,year,age,deaths,exposure\n";
    for (const auto& [key, t] : raw.tables) {
        if (!t.has_counts) continue;
        for (int a = 0; a < raw.ages; ++a)
            out << key.pop << ',' << (key.sex == kFemale ? 'f' : 'm') << ',' << key.year << ',' << a << ','
                << fmt(t.deaths[a]) << ',' << fmt(t.exposure[a]) << '\n';
    }
}

// ---- curation -------------------------------------------------------------

RawSeries curate(const RawSeries& raw, const CurationConfig& cfg, CurationReport* report) {
    RawSeries out;
    out.ages = raw.ages;
    std::map<TableKey, std::string> drop;
    const std::set<std::string> excluded(cfg.excluded_pops.begin(), cfg.excluded_pops.end());
    const bool flat_check = cfg.flat_age_a >= 0 && cfg.flat_age_b >= 0 && cfg.flat_age_a < raw.ages &&
                            cfg.flat_age_b < raw.ages;
    for (const auto& [key, t] : raw.tables) {
        if (excluded.count(key.pop)) {
            drop[key] = "excluded-population";
        } else if (t.incomplete) {
            drop[key] = "missing-values";
        } else if (flat_check && t.qx[cfg.flat_age_a] == t.qx[cfg.flat_age_b] && t.qx[cfg.flat_age_a] != 0.0) {
            drop[key] = "flat-table";
        }
    }
    for (const auto& [key, t] : raw.tables) {
        if (drop.count(key)) continue;
        TableKey partner = key;
        partner.sex = 1 - key.sex;
        const auto pit = raw.tables.find(partner);
        if (pit == raw.tables.end()) {
            drop[key] = "unpaired-sex";
        } else if (drop.count(partner)) {
            drop[key] = "partner-dropped";
        }
    }
    for (const auto& [key, t] : raw.tables) {
        const auto it = drop.find(key);
        if (it == drop.end()) {
            out.tables.emplace(key, t);
        } else if (report) {
            report->dropped.push_back({key, it->second});
        }
    }
    return out;
}

// ---- events ---------------------------------------------------------------

const char* disruption_name(int d) {
    switch (d) {
        case kWar: return "war";
        case kRespiratory: return "respiratory";
        case kEnteric: return "enteric";
        default: return "none";
    }
}

int disruption_from_name(const std::string& name) {
    if (name == "war") return kWar;
    if (name == "respiratory") return kRespiratory;
    if (name == "enteric") return kEnteric;
    if (name == "none") return kNone;
    fail(ErrorCode::InvalidInput, "unknown disruption type '" + name + "'");
}

EventDictionary parse_events(const std::string& json_text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("event dictionary: ") + e.what());
    }
    EventDictionary dict;
    try {
        dict.version = doc.value("version", 1);
        for (const auto& ev : doc.at("events")) {
            EventEntry e;
            e.name = ev.at("name").get<std::string>();
            const auto type = ev.at("type").get<std::string>();
            if (type != "war" && type != "respiratory" && type != "enteric")
                fail(ErrorCode::ParseError, "event '" + e.name + "': unknown type '" + type + "'");
            e.type = disruption_from_name(type);
            const auto& countries = ev.at("countries");
            if (countries.is_string()) {
                if (countries.get<std::string>() != "*")
                    fail(ErrorCode::ParseError, "event '" + e.name + "': countries must be a list or \"*\"");
                e.all_countries = true;
            } else {
                for (const auto& c : countries) e.countries.push_back(c.get<std::string>());
            }
            const auto& years = ev.at("years");
            if (!years.is_array() || years.size() != 2)
                fail(ErrorCode::ParseError, "event '" + e.name + "': years must be [first, last]");
            e.first_year = years[0].get<int>();
            e.last_year = years[1].get<int>();
            if (e.last_year < e.first_year)
                fail(ErrorCode::ParseError, "event '" + e.name + "': empty year range");
            if (ev.contains("peaks")) {
                for (const auto& [code, ys] : ev.at("peaks").items()) {
                    auto& v = e.peaks[code];
                    for (const auto& y : ys) v.push_back(y.get<int>());
                }
            }
            dict.events.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("event dictionary: ") + e.what());
    }
    return dict;
}

EventDictionary load_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "cannot open event dictionary " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_events(ss.str());
}

std::string default_events_path() {
#ifdef MDMX_DATA_DIR
    return std::string(MDMX_DATA_DIR) + "/events.json";
#else
    return "data/events.json";
#endif
}

int event_label(const EventDictionary& dict, const std::string& pop, int year) {
    int label = kNone;
    for (const auto& e : dict.events) {
        if (year < e.first_year || year > e.last_year) continue;
        if (!e.all_countries && std::find(e.countries.begin(), e.countries.end(), pop) == e.countries.end()) continue;
        const auto pk = e.peaks.find(pop);
        if (pk != e.peaks.end() && std::find(pk->second.begin(), pk->second.end(), year) == pk->second.end())
            continue;
        // war < respiratory < enteric numerically; the lowest code wins overlaps
        if (label == kNone || e.type < label) label = e.type;
    }
    return label;
}

YearLabels label_exceptional(const RawSeries& raw, const EventDictionary& dict, LabelReport* report) {
    YearLabels labels;
    for (const auto& kv : raw.tables) {
        const int d = event_label(dict, kv.first.pop, kv.first.year);
        if (d != kNone) labels[{kv.first.pop, kv.first.year}] = d;
    }
    if (report) {
        const auto pops = raw.populations();
        std::set<std::string> missing;
        for (const auto& e : dict.events)
            for (const auto& c : e.countries)
                if (!pops.count(c)) missing.insert(c);
        report->unresolved.assign(missing.begin(), missing.end());
    }
    return labels;
}

// ---- pooling --------------------------------------------------------------

std::vector<int> valley_ages(const RawSeries& raw, double q_thresh) {
    std::vector<int> out;
    if (raw.tables.empty()) return out;
    std::vector<double> col;
    for (int a = 0; a < raw.ages; ++a) {
        col.clear();
        for (const auto& kv : raw.tables)
            if (std::isfinite(kv.second.qx[a])) col.push_back(kv.second.qx[a]);
        if (col.empty()) continue;
        const std::size_t m = col.size() / 2;
        std::nth_element(col.begin(), col.begin() + m, col.end());
        double med = col[m];
        if (col.size() % 2 == 0) med = 0.5 * (med + *std::max_element(col.begin(), col.begin() + m));
        if (med < q_thresh) out.push_back(a);
    }
    return out;
}

namespace {

struct Pooled {
    AgeTable table;
    bool resolved = true;
};

Pooled pool_tables(const std::vector<const AgeTable*>& members, const std::vector<int>& valley, int ages) {
    Pooled p;
    p.table = *members.front();
    Vector d = Vector::Zero(ages), e = Vector::Zero(ages), ax = Vector::Zero(ages), mx_mean = Vector::Zero(ages);
    for (const AgeTable* t : members) {
        d += t->deaths;
        e += t->exposure;
        ax += t->ax;
        mx_mean += t->mx;
    }
    const double k = static_cast<double>(members.size());
    ax /= k;
    mx_mean /= k;
    Vector mx(ages);
    for (int a = 0; a < ages; ++a) mx[a] = e[a] > 0 ? d[a] / e[a] : mx_mean[a];
    for (int a : valley)
        if (!(mx[a] > 0)) p.resolved = false;
    const LifeTable lt = lifetable_from_mx_ax(mx, ax);
    p.table.mx = mx;
    p.table.ax = ax;
    p.table.qx = lt.qx;
    p.table.deaths = d;
    p.table.exposure = e;
    return p;
}

bool block_resolved(const std::vector<const AgeTable*>& members, const std::vector<int>& valley) {
    for (int a : valley) {
        double d = 0;
        for (const AgeTable* t : members) d += t->deaths[a];
        if (!(d > 0)) return false;
    }
    return true;
}

}  // namespace

RawSeries adaptive_pool(const RawSeries& raw, const YearLabels& labels, const PoolingConfig& cfg,
                        PoolingReport* report) {
    const std::vector<int> valley = valley_ages(raw, cfg.q_thresh);
    RawSeries out = raw;
    if (report) report->valley_ages = valley;
    auto is_exceptional = [&](const std::string& pop, int year) { return labels.count({pop, year}) > 0; };

    for (const auto& pop : raw.populations()) {
        bool flagged = false;
        for (const auto& [key, t] : raw.tables)
            if (key.pop == pop && !is_exceptional(pop, key.year) && has_valley_zero(t, valley)) flagged = true;
        if (!flagged) continue;
        if (report) report->flagged.push_back(pop);
        for (const auto& [key, t] : raw.tables)
            if (key.pop == pop && !t.has_counts)
                fail(ErrorCode::PoolingError, "population " + pop + " needs pooling but lacks deaths/exposures");

        for (int sex : {kFemale, kMale}) {
            std::vector<int> normal, special;
            for (const auto& [key, t] : raw.tables) {
                if (key.pop != pop || key.sex != sex) continue;
                (is_exceptional(pop, key.year) ? special : normal).push_back(key.year);
            }
            auto table_of = [&](int year) -> const AgeTable& { return raw.tables.at({pop, sex, year}); };

            // chronological blocks over non-exceptional years
            std::vector<std::vector<int>> blocks;
            std::vector<int> current;
            for (int y : normal) {
                current.push_back(y);
                std::vector<const AgeTable*> members;
                for (int yy : current) members.push_back(&table_of(yy));
                if (block_resolved(members, valley)) {
                    blocks.push_back(current);
                    current.clear();
                }
            }
            if (!current.empty()) {
                if (blocks.empty()) {
                    blocks.push_back(current);
                } else {
                    blocks.back().insert(blocks.back().end(), current.begin(), current.end());
                }
            }
            for (const auto& block : blocks) {
                std::vector<const AgeTable*> members;
                for (int y : block) members.push_back(&table_of(y));
                const bool ok = block_resolved(members, valley);
                if (block.size() > 1 || !ok) {
                    const Pooled p = pool_tables(members, valley, raw.ages);
                    for (int y : block) out.tables[{pop, sex, y}] = p.table;
                }
                if (report) report->blocks.push_back({pop, sex, block, false, ok});
            }

            // exceptional spells: consecutive years sharing a label
            std::vector<std::vector<int>> spells;
            for (int y : special) {
                const int d = labels.at({pop, y});
                if (!spells.empty() && spells.back().back() == y - 1 && labels.at({pop, spells.back().back()}) == d)
                    spells.back().push_back(y);
                else
                    spells.push_back({y});
            }
            for (const auto& spell : spells) {
                bool zeros = false;
                for (int y : spell)
                    if (has_valley_zero(table_of(y), valley)) zeros = true;
                if (!zeros) continue;
                std::vector<const AgeTable*> members;
                for (int y : spell) members.push_back(&table_of(y));
                // widen with the nearest non-exceptional neighbours, one then two per side
                for (int reach = 1; reach <= 2 && !block_resolved(members, valley); ++reach) {
                    members.clear();
                    for (int y : spell) members.push_back(&table_of(y));
                    const auto lo = std::lower_bound(normal.begin(), normal.end(), spell.front());
                    const auto hi = std::upper_bound(normal.begin(), normal.end(), spell.back());
                    for (int i = 1; i <= reach; ++i) {
                        if (lo - normal.begin() >= i) members.push_back(&table_of(*(lo - i)));
                        if (normal.end() - hi >= i) members.push_back(&table_of(*(hi + (i - 1))));
                    }
                }
                const Pooled p = pool_tables(members, valley, raw.ages);
                for (int y : spell) out.tables[{pop, sex, y}] = p.table;
                if (report) report->blocks.push_back({pop, sex, spell, true, p.resolved});
            }
        }
    }
    return out;
}

// ---- tensor ---------------------------------------------------------------

Vector MortalityTensor::schedule(int c, int t) const {
    Vector z(2 * ages);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < ages; ++a) z[s * ages + a] = values(s, a, c, t);
    return z;
}

void MortalityTensor::set_schedule(int c, int t, const Vector& z) {
    require(z.size() == 2 * ages, ErrorCode::InvalidInput, "set_schedule: length mismatch");
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < ages; ++a) values(s, a, c, t) = z[s * ages + a];
}

int MortalityTensor::year_index(int year) const {
    if (years.empty() || year < years.front() || year > years.back()) return -1;
    return year - years.front();
}

int MortalityTensor::pop_index(const std::string& pop) const {
    const auto it = std::find(pops.begin(), pops.end(), pop);
    return it == pops.end() ? -1 : static_cast<int>(it - pops.begin());
}

MortalityTensor assemble_tensor(const RawSeries& raw, const YearLabels& labels, const TensorConfig& cfg,
                                ExceptionalSet* exceptional) {
    require(cfg.imputation_weight >= 0 && cfg.imputation_weight <= 1, ErrorCode::InvalidInput,
            "assemble_tensor: imputation weight outside [0,1]");
    const int ages = raw.ages;
    // paired years per population
    std::map<std::string, std::vector<int>> paired;
    for (const auto& [key, t] : raw.tables) {
        if (key.sex != kFemale) continue;
        if (raw.tables.count({key.pop, kMale, key.year})) paired[key.pop].push_back(key.year);
    }
    MortalityTensor mt;
    mt.ages = ages;
    int y0 = std::numeric_limits<int>::max(), y1 = std::numeric_limits<int>::min();
    for (const auto& [pop, years] : paired) {
        int observed = 0;
        for (int y : years)
            if (!labels.count({pop, y})) ++observed;
        if (observed < cfg.min_years || observed == 0) continue;
        mt.pops.push_back(pop);
        y0 = std::min(y0, years.front());
        y1 = std::max(y1, years.back());
    }
    if (mt.pops.empty()) fail(ErrorCode::EmptyTensor, "assemble_tensor: no population has enough observed years");
    for (int y = y0; y <= y1; ++y) mt.years.push_back(y);
    const int C = mt.n_pop(), T = mt.n_year();
    mt.values = Tensor4({2, ages, C, T});
    mt.observed = IntMatrix::Zero(C, T);
    mt.labels = IntMatrix::Zero(C, T);
    mt.weights = Matrix::Constant(C, T, cfg.imputation_weight);

    for (int c = 0; c < C; ++c) {
        const auto& pop = mt.pops[c];
        Vector sum = Vector::Zero(2 * ages);
        int n_obs = 0;
        for (int y : paired[pop]) {
            const int t = y - y0;
            Vector z(2 * ages);
            z << floor_and_logit(raw.tables.at({pop, kFemale, y}).qx, cfg.q_min),
                floor_and_logit(raw.tables.at({pop, kMale, y}).qx, cfg.q_min);
            const auto lab = labels.find({pop, y});
            if (lab != labels.end()) {
                mt.labels(c, t) = lab->second;
                if (exceptional) exceptional->cells.push_back({c, t, lab->second, z});
                continue;
            }
            mt.set_schedule(c, t, z);
            mt.observed(c, t) = 1;
            mt.weights(c, t) = 1.0;
            sum += z;
            ++n_obs;
        }
        const Vector mean = sum / static_cast<double>(n_obs);
        for (int t = 0; t < T; ++t)
            if (!mt.observed(c, t)) mt.set_schedule(c, t, mean);
    }
    return mt;
}

}  // namespace mdmx
