#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>

#include "ampwatch/error.hpp"

namespace ampwatch {

inline constexpr std::int64_t kSecondMs = 1000;
inline constexpr std::int64_t kMinuteMs = 60 * kSecondMs;
inline constexpr std::int64_t kHourMs = 60 * kMinuteMs;
inline constexpr std::int64_t kDayMs = 24 * kHourMs;
inline constexpr std::int64_t kWeekMs = 7 * kDayMs;

/// Identifier of a physical sensor or hierarchy node: 1..128 chars of
/// [A-Za-z0-9_.-].
class SensorId {
public:
    SensorId() = default;
    explicit SensorId(std::string id);

    static bool is_valid(std::string_view id) noexcept;

    const std::string& str() const noexcept { return id_; }
    bool empty() const noexcept { return id_.empty(); }

    auto operator<=>(const SensorId&) const = default;

private:
    std::string id_;
};

struct Timestamp {
    std::int64_t epoch_ms = 0;

    auto operator<=>(const Timestamp&) const = default;
};

struct Measurement {
    SensorId sensor;
    Timestamp ts;
    double value_w = 0.0;

    bool operator==(const Measurement&) const = default;
};

/// Throws a validation error unless value is finite and non-negative.
void validate_watts(double value_w);
Measurement make_measurement(std::string_view sensor, std::int64_t ts_ms, double value_w);

/// Associative power summary. Sum is carried with a compensation term so
/// merge order does not change the total beyond rounding of the final add.
struct PowerStats {
    double sum_hi = 0.0;
    double sum_lo = 0.0;
    std::uint64_t count = 0;
    double min_w = std::numeric_limits<double>::infinity();
    double max_w = -std::numeric_limits<double>::infinity();

    double sum_w() const noexcept { return sum_hi + sum_lo; }
    bool empty() const noexcept { return count == 0; }

    static PowerStats identity() noexcept { return {}; }
    /// Rebuilds stats from their serialized fields.
    static PowerStats from_parts(double sum_w, std::uint64_t count, double min_w, double max_w);
};

PowerStats stats_from_value(double value_w);
PowerStats stats_merge(const PowerStats& a, const PowerStats& b) noexcept;
/// sum / count; throws empty_stats on the identity element.
double average(const PowerStats& s);

/// Exact equality of the observable fields (sum compared after compensation).
bool same_stats(const PowerStats& a, const PowerStats& b) noexcept;

std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept;
std::int64_t window_start_of(std::int64_t ts_ms, std::int64_t window_ms) noexcept;

/// Fixed UTC offset used for calendar attributes. Accepts "UTC", "Z",
/// "+HH:MM", "-HH:MM", "UTC+HH:MM".
struct TimeZone {
    std::int64_t offset_ms = 0;

    static TimeZone utc() noexcept { return {}; }
    static TimeZone parse(std::string_view text);
    /// AMPWATCH_TZ, falling back to UTC when unset.
    static TimeZone from_env();

    std::int64_t to_local(std::int64_t utc_ms) const noexcept { return utc_ms + offset_ms; }
    std::int64_t to_utc(std::int64_t local_ms) const noexcept { return local_ms - offset_ms; }
};

/// Monday = 0.
int day_of_week(std::int64_t ts_ms, const TimeZone& tz = {}) noexcept;
int hour_of_day(std::int64_t ts_ms, const TimeZone& tz = {}) noexcept;
/// 0..11
int month_of_year(std::int64_t ts_ms, const TimeZone& tz = {}) noexcept;

std::string format_iso8601(std::int64_t ts_ms);
/// Epoch milliseconds, or ISO-8601 "YYYY-MM-DD[THH:MM[:SS[.mmm]]][Z|+HH:MM]".
std::int64_t parse_time(std::string_view text);
/// Milliseconds, or a number with unit suffix ms, s, m, h, d, w ("5m").
std::int64_t parse_duration(std::string_view text);

}  // namespace ampwatch

template <>
struct std::hash<ampwatch::SensorId> {
    std::size_t operator()(const ampwatch::SensorId& id) const noexcept {
        return std::hash<std::string>{}(id.str());
    }
};
