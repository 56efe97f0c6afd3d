#include "ampwatch/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <thread>

namespace ampwatch::ingest {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double to_unit(std::uint64_t bits) noexcept { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

double number(const json& doc, const char* key, double fallback) {
    return doc.contains(key) ? doc[key].get<double>() : fallback;
}

}  // namespace

double deterministic_uniform(std::uint64_t seed, std::uint64_t counter) {
    return to_unit(splitmix64(splitmix64(seed) ^ counter));
}

double deterministic_gaussian(std::uint64_t seed, const std::string& sensor, std::int64_t ts_ms) {
    const std::uint64_t key = splitmix64(seed ^ fnv1a(sensor)) ^ static_cast<std::uint64_t>(ts_ms);
    const std::uint64_t a = splitmix64(key);
    const std::uint64_t b = splitmix64(a);
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - to_unit(a);
    const double u2 = to_unit(b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void validate_profile(const SimProfile& p) {
    if (p.sensor.empty()) fail(ErrorCode::validation, "profile needs a sensor id");
    if (!std::isfinite(p.base_w) || p.base_w < 0) fail(ErrorCode::validation, "base_w must be >= 0");
    if (p.sample_period_ms < 1) fail(ErrorCode::validation, "sample_period_ms must be >= 1");
    if (!(p.noise_sigma_w >= 0)) fail(ErrorCode::validation, "noise_sigma_w must be >= 0");
    for (double f : p.weekday_factor) {
        if (!(f >= 0.0 && f <= 1.0)) fail(ErrorCode::validation, "weekday_factor entries must be in [0,1]");
    }
    for (const auto& a : p.anomalies) {
        if (a.duration_ms < 0) fail(ErrorCode::validation, "anomaly duration must be >= 0");
    }
}

SimProfile profile_from_json(const json& doc) {
    codec::require_known_fields(doc,
                                {"sensor", "base_w", "night_peak_w", "weekday_factor", "noise_sigma_w",
                                 "sample_period_ms", "anomalies", "drift_w_per_week", "seed"},
                                "profile");
    try {
        SimProfile p;
        p.sensor = SensorId(doc.at("sensor").get<std::string>());
        p.base_w = number(doc, "base_w", 0.0);
        p.night_peak_w = number(doc, "night_peak_w", 0.0);
        if (doc.contains("weekday_factor")) {
            const auto f = doc["weekday_factor"].get<std::vector<double>>();
            if (f.size() != 7) fail(ErrorCode::validation, "weekday_factor needs 7 entries");
            std::copy(f.begin(), f.end(), p.weekday_factor.begin());
        }
        p.noise_sigma_w = number(doc, "noise_sigma_w", 0.0);
        p.sample_period_ms = doc.value("sample_period_ms", kMinuteMs);
        p.drift_w_per_week = number(doc, "drift_w_per_week", 0.0);
        p.seed = doc.value("seed", std::uint64_t{0});
        if (doc.contains("anomalies")) {
            for (const auto& a : doc["anomalies"]) {
                codec::require_known_fields(a, {"start", "duration_ms", "delta_w"}, "anomaly");
                p.anomalies.push_back({a.at("start").get<std::int64_t>(), a.at("duration_ms").get<std::int64_t>(),
                                       a.at("delta_w").get<double>()});
            }
        }
        validate_profile(p);
        return p;
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("bad profile: ") + e.what());
    }
}

json to_json(const SimProfile& p) {
    json anomalies = json::array();
    for (const auto& a : p.anomalies) {
        anomalies.push_back({{"start", a.start_ms}, {"duration_ms", a.duration_ms}, {"delta_w", a.delta_w}});
    }
    return json{{"sensor", p.sensor.str()},
                {"base_w", p.base_w},
                {"night_peak_w", p.night_peak_w},
                {"weekday_factor", p.weekday_factor},
                {"noise_sigma_w", p.noise_sigma_w},
                {"sample_period_ms", p.sample_period_ms},
                {"anomalies", anomalies},
                {"drift_w_per_week", p.drift_w_per_week},
                {"seed", p.seed}};
}

Scenario scenario_from_json(const json& doc) {
    codec::require_known_fields(doc, {"profiles", "disorder", "comment"}, "scenario");
    Scenario s;
    for (const auto& p : doc.at("profiles")) s.profiles.push_back(profile_from_json(p));
    if (doc.contains("disorder")) {
        const auto& d = doc["disorder"];
        codec::require_known_fields(d, {"max_delay_ms", "delayed_fraction", "seed"}, "disorder");
        DisorderSpec spec{d.value("max_delay_ms", std::int64_t{0}), d.value("delayed_fraction", 0.0),
                          d.value("seed", std::uint64_t{0})};
        if (spec.max_delay_ms < 0 || spec.delayed_fraction < 0 || spec.delayed_fraction > 1) {
            fail(ErrorCode::validation, "disorder needs max_delay_ms >= 0 and delayed_fraction in [0,1]");
        }
        s.disorder = spec;
    }
    return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::io, "cannot read scenario " + file.string());
    try {
        return scenario_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::format, file.string() + ": " + e.what());
    }
}

bool is_night(std::int64_t ts_ms) noexcept {
    const int h = hour_of_day(ts_ms);
    return h >= 22 || h < 6;
}

double simulate_value(const SimProfile& p, std::int64_t ts_ms) {
    double v = p.base_w;
    if (p.night_peak_w != 0.0 && is_night(ts_ms)) {
        v += p.night_peak_w * p.weekday_factor[static_cast<std::size_t>(day_of_week(ts_ms))];
    }
    if (p.drift_w_per_week != 0.0) {
        v += p.drift_w_per_week * static_cast<double>(floor_div(ts_ms, kWeekMs));
    }
    for (const auto& a : p.anomalies) {
        if (ts_ms >= a.start_ms && ts_ms < a.start_ms + a.duration_ms) v += a.delta_w;
    }
    if (p.noise_sigma_w > 0.0) {
        v += p.noise_sigma_w * deterministic_gaussian(p.seed, p.sensor.str(), ts_ms);
    }
    return std::max(0.0, v);
}

std::vector<Measurement> generate(const std::vector<SimProfile>& profiles, std::int64_t from_ms, std::int64_t to_ms) {
    if (!(from_ms < to_ms)) fail(ErrorCode::validation, "simulation range needs from < to");
    if (from_ms < 0) fail(ErrorCode::validation, "simulation range must start at >= 0");
    std::set<SensorId> sensors;
    for (const auto& p : profiles) {
        validate_profile(p);
        if (!sensors.insert(p.sensor).second) {
            fail(ErrorCode::validation, "duplicate profile for sensor '" + p.sensor.str() + "'");
        }
    }
    struct Tagged {
        std::int64_t ts;
        std::size_t profile;
    };
    std::vector<Tagged> order;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        for (std::int64_t ts = from_ms; ts < to_ms; ts += profiles[i].sample_period_ms) order.push_back({ts, i});
    }
    std::stable_sort(order.begin(), order.end(), [](const Tagged& a, const Tagged& b) {
        return a.ts != b.ts ? a.ts < b.ts : a.profile < b.profile;
    });
    std::vector<Measurement> out;
    out.reserve(order.size());
    for (const auto& t : order) {
        const auto& p = profiles[t.profile];
        out.push_back(Measurement{p.sensor, Timestamp{t.ts}, simulate_value(p, t.ts)});
    }
    return out;
}

std::vector<Measurement> apply_disorder(std::vector<Measurement> events, const DisorderSpec& spec) {
    if (spec.max_delay_ms <= 0 || spec.delayed_fraction <= 0.0) return events;
    struct Slot {
        std::int64_t deliver_at;
        std::size_t index;
    };
    std::vector<Slot> slots(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        std::int64_t deliver = events[i].ts.epoch_ms;
        if (deterministic_uniform(spec.seed, 2 * i) < spec.delayed_fraction) {
            const double u = deterministic_uniform(spec.seed, 2 * i + 1);
            deliver += 1 + static_cast<std::int64_t>(u * static_cast<double>(spec.max_delay_ms));
            deliver = std::min(deliver, events[i].ts.epoch_ms + spec.max_delay_ms);
        }
        slots[i] = {deliver, i};
    }
    std::stable_sort(slots.begin(), slots.end(),
                     [](const Slot& a, const Slot& b) { return a.deliver_at < b.deliver_at; });
    std::vector<Measurement> out;
    out.reserve(events.size());
    for (const auto& s : slots) out.push_back(std::move(events[s.index]));
    return out;
}

std::size_t run_simulator(topiclog::TopicLog& log, const Scenario& scenario, std::int64_t from_ms,
                          std::int64_t to_ms, double speedup) {
    auto events = generate(scenario.profiles, from_ms, to_ms);
    if (scenario.disorder) events = apply_disorder(std::move(events), *scenario.disorder);
    log.ensure_topic(topics::measurements);
    const auto started = std::chrono::steady_clock::now();
    for (const auto& m : events) {
        if (speedup > 0.0) {
            const auto due = started + std::chrono::duration<double, std::milli>(
                                           static_cast<double>(m.ts.epoch_ms - from_ms) / speedup);
            std::this_thread::sleep_until(std::chrono::time_point_cast<std::chrono::steady_clock::duration>(due));
        }
        log.append(topics::measurements, m.sensor.str(), m.ts.epoch_ms, codec::measurement_payload(m));
    }
    return events.size();
}

std::string format_csv_row(const Measurement& m) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, m.value_w);
    return m.sensor.str() + "," + std::to_string(m.ts.epoch_ms) + "," + std::string(buf, res.ptr);
}

Measurement parse_csv_row(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
        fail(ErrorCode::format, "expected 3 fields");
    }
    const auto sensor = line.substr(0, c1);
    const auto ts_text = line.substr(c1 + 1, c2 - c1 - 1);
    const auto value_text = line.substr(c2 + 1);
    std::int64_t ts = 0;
    auto r1 = std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), ts);
    if (r1.ec != std::errc{} || r1.ptr != ts_text.data() + ts_text.size()) fail(ErrorCode::format, "bad timestamp");
    double value = 0.0;
    auto r2 = std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (r2.ec != std::errc{} || r2.ptr != value_text.data() + value_text.size()) {
        fail(ErrorCode::format, "bad value");
    }
    return make_measurement(sensor, ts, value);
}

void write_csv(std::ostream& out, const std::vector<Measurement>& measurements) {
    out << kCsvHeader << '\n';
    for (const auto& m : measurements) out << format_csv_row(m) << '\n';
}

std::vector<Measurement> read_csv(std::istream& in, CsvReport& report) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::format, "missing CSV header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line != kCsvHeader) fail(ErrorCode::format, "CSV header must be '" + std::string(kCsvHeader) + "'");
    std::vector<Measurement> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        try {
            out.push_back(parse_csv_row(line));
        } catch (const Error& e) {
            ++report.rejected;
            report.reject_reasons.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

CsvReport ingest_csv(topiclog::TopicLog& log, std::istream& in) {
    CsvReport report;
    const auto rows = read_csv(in, report);
    log.ensure_topic(topics::measurements);
    for (const auto& m : rows) {
        log.append(topics::measurements, m.sensor.str(), m.ts.epoch_ms, codec::measurement_payload(m));
        ++report.appended;
    }
    return report;
}

CsvReport ingest_csv(topiclog::TopicLog& log, const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::io, "cannot read " + file.string());
    return ingest_csv(log, in);
}

}  // namespace ampwatch::ingest
