#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ampwatch/codec.hpp"
#include "ampwatch/domain.hpp"
#include "ampwatch/topiclog.hpp"

namespace ampwatch::ingest {

struct InjectedAnomaly {
    std::int64_t start_ms = 0;
    std::int64_t duration_ms = 0;
    double delta_w = 0.0;
};

/// Synthetic load shape: constant base, night peaks (22:00-06:00 UTC) scaled
/// per weekday, weekly drift, additive spikes and Gaussian noise.
struct SimProfile {
    SensorId sensor;
    double base_w = 0.0;
    double night_peak_w = 0.0;
    std::array<double, 7> weekday_factor{1, 1, 1, 1, 1, 1, 1};  // Mon..Sun
    double noise_sigma_w = 0.0;
    std::int64_t sample_period_ms = kMinuteMs;
    std::vector<InjectedAnomaly> anomalies;
    double drift_w_per_week = 0.0;
    std::uint64_t seed = 0;
};

/// Delays a random subset of measurements in delivery order only.
struct DisorderSpec {
    std::int64_t max_delay_ms = 0;
    double delayed_fraction = 0.0;
    std::uint64_t seed = 0;
};

struct Scenario {
    std::vector<SimProfile> profiles;
    std::optional<DisorderSpec> disorder;
};

void validate_profile(const SimProfile& p);
SimProfile profile_from_json(const json& doc);
json to_json(const SimProfile& p);
Scenario scenario_from_json(const json& doc);
Scenario load_scenario(const std::filesystem::path& file);

/// Standard normal deviate that depends only on (seed, sensor, ts).
double deterministic_gaussian(std::uint64_t seed, const std::string& sensor, std::int64_t ts_ms);
/// Uniform deviate in [0, 1) keyed like deterministic_gaussian.
double deterministic_uniform(std::uint64_t seed, std::uint64_t counter);

bool is_night(std::int64_t ts_ms) noexcept;
double simulate_value(const SimProfile& p, std::int64_t ts_ms);

/// All samples in [from, to), ordered by (ts, profile position).
std::vector<Measurement> generate(const std::vector<SimProfile>& profiles, std::int64_t from_ms, std::int64_t to_ms);
/// Reorders delivery: delayed records move behind later ones by at most
/// max_delay_ms of event time. Event timestamps are untouched.
std::vector<Measurement> apply_disorder(std::vector<Measurement> events, const DisorderSpec& spec);

/// Appends the generated (and optionally disordered) measurements. With
/// speedup > 0 delivery is paced at `speedup` times real time.
std::size_t run_simulator(topiclog::TopicLog& log, const Scenario& scenario, std::int64_t from_ms,
                          std::int64_t to_ms, double speedup = 0.0);

inline constexpr std::string_view kCsvHeader = "sensor_id,timestamp_ms,value_w";

struct CsvReport {
    std::size_t appended = 0;
    std::size_t rejected = 0;
    std::vector<std::string> reject_reasons;
};

std::string format_csv_row(const Measurement& m);
Measurement parse_csv_row(std::string_view line);
void write_csv(std::ostream& out, const std::vector<Measurement>& measurements);
/// Parses every row; invalid rows are reported, not fatal.
std::vector<Measurement> read_csv(std::istream& in, CsvReport& report);
CsvReport ingest_csv(topiclog::TopicLog& log, const std::filesystem::path& file);
CsvReport ingest_csv(topiclog::TopicLog& log, std::istream& in);

}  // namespace ampwatch::ingest
