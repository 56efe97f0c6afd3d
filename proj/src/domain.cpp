#include "ampwatch/domain.hpp"

#include <charconv>
#include <chrono>
#include <regex>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace ampwatch {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::already_exists: return "already_exists";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::empty_stats: return "empty_stats";
    case ErrorCode::undefined: return "undefined";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::format: return "format";
    case ErrorCode::io: return "io";
    case ErrorCode::internal: return "internal";
    }
    return "internal";
}

namespace {

bool id_char(char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '.' || c == '-';
}

// Knuth's TwoSum: s + e == a + b exactly.
void two_sum(double a, double b, double& s, double& e) noexcept {
    s = a + b;
    const double bb = s - a;
    e = (a - (s - bb)) + (b - bb);
}

}  // namespace

SensorId::SensorId(std::string id) : id_(std::move(id)) {
    if (!is_valid(id_)) {
        fail(ErrorCode::validation, "invalid sensor id '" + id_ + "'");
    }
}

bool SensorId::is_valid(std::string_view id) noexcept {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id) {
        if (!id_char(c)) return false;
    }
    return true;
}

void validate_watts(double value_w) {
    if (!std::isfinite(value_w)) {
        fail(ErrorCode::validation, "power value must be finite");
    }
    if (value_w < 0.0) {
        fail(ErrorCode::validation, "power value must be non-negative");
    }
}

Measurement make_measurement(std::string_view sensor, std::int64_t ts_ms, double value_w) {
    if (ts_ms < 0) fail(ErrorCode::validation, "timestamp must be >= 0");
    validate_watts(value_w);
    return Measurement{SensorId(std::string(sensor)), Timestamp{ts_ms}, value_w};
}

PowerStats PowerStats::from_parts(double sum_w, std::uint64_t count, double min_w, double max_w) {
    if (count == 0) return identity();
    PowerStats s;
    s.sum_hi = sum_w;
    s.count = count;
    s.min_w = min_w;
    s.max_w = max_w;
    return s;
}

PowerStats stats_from_value(double value_w) {
    validate_watts(value_w);
    PowerStats s;
    s.sum_hi = value_w;
    s.count = 1;
    s.min_w = value_w;
    s.max_w = value_w;
    return s;
}

PowerStats stats_merge(const PowerStats& a, const PowerStats& b) noexcept {
    PowerStats r;
    double err = 0.0;
    two_sum(a.sum_hi, b.sum_hi, r.sum_hi, err);
    r.sum_lo = a.sum_lo + b.sum_lo + err;
    r.count = a.count + b.count;
    r.min_w = std::min(a.min_w, b.min_w);
    r.max_w = std::max(a.max_w, b.max_w);
    return r;
}

double average(const PowerStats& s) {
    if (s.count == 0) fail(ErrorCode::empty_stats, "average of empty stats");
    return s.sum_w() / static_cast<double>(s.count);
}

bool same_stats(const PowerStats& a, const PowerStats& b) noexcept {
    if (a.count != b.count) return false;
    if (a.count == 0) return true;
    return a.sum_w() == b.sum_w() && a.min_w == b.min_w && a.max_w == b.max_w;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::int64_t window_start_of(std::int64_t ts_ms, std::int64_t window_ms) noexcept {
    return floor_div(ts_ms, window_ms) * window_ms;
}

TimeZone TimeZone::parse(std::string_view text) {
    std::string_view t = text;
    if (t == "UTC" || t == "Z" || t.empty()) return {};
    if (t.starts_with("UTC")) t.remove_prefix(3);
    if (t.size() != 6 || (t[0] != '+' && t[0] != '-') || t[3] != ':') {
        fail(ErrorCode::validation, "unsupported timezone '" + std::string(text) + "'");
    }
    auto digit = [&](char c) {
        if (c < '0' || c > '9') fail(ErrorCode::validation, "bad timezone '" + std::string(text) + "'");
        return c - '0';
    };
    const int hours = digit(t[1]) * 10 + digit(t[2]);
    const int minutes = digit(t[4]) * 10 + digit(t[5]);
    if (hours > 14 || minutes > 59) fail(ErrorCode::validation, "bad timezone '" + std::string(text) + "'");
    const std::int64_t off = hours * kHourMs + minutes * kMinuteMs;
    return TimeZone{t[0] == '-' ? -off : off};
}

TimeZone TimeZone::from_env() {
    const char* v = std::getenv("AMPWATCH_TZ");
    return v ? parse(v) : utc();
}

int day_of_week(std::int64_t ts_ms, const TimeZone& tz) noexcept {
    // 1970-01-01 was a Thursday (Monday = 0 -> 3).
    const std::int64_t days = floor_div(tz.to_local(ts_ms), kDayMs);
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int hour_of_day(std::int64_t ts_ms, const TimeZone& tz) noexcept {
    const std::int64_t local = tz.to_local(ts_ms);
    return static_cast<int>((local - floor_div(local, kDayMs) * kDayMs) / kHourMs);
}

int month_of_year(std::int64_t ts_ms, const TimeZone& tz) noexcept {
    using namespace std::chrono;
    const auto days = floor_div(tz.to_local(ts_ms), kDayMs);
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    return static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
}

std::string format_iso8601(std::int64_t ts_ms) {
    using namespace std::chrono;
    const std::int64_t days = floor_div(ts_ms, kDayMs);
    const std::int64_t rem = ts_ms - days * kDayMs;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long long>(rem / kHourMs), static_cast<long long>(rem % kHourMs / kMinuteMs),
                  static_cast<long long>(rem % kMinuteMs / kSecondMs), static_cast<long long>(rem % kSecondMs));
    return buf;
}

std::int64_t parse_time(std::string_view text) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec == std::errc() && ptr == text.data() + text.size()) return value;

    static const std::regex re(
        R"(^(\d{4})-(\d{2})-(\d{2})(?:[T ](\d{2}):(\d{2})(?::(\d{2})(?:\.(\d{1,3}))?)?)?(Z|[+-]\d{2}:\d{2})?$)");
    std::cmatch m;
    if (!std::regex_match(text.data(), text.data() + text.size(), m, re)) {
        fail(ErrorCode::validation, "invalid time '" + std::string(text) + "'");
    }
    using namespace std::chrono;
    auto num = [&](int i) { return m[i].matched ? std::stoll(m[i].str()) : 0LL; };
    const year_month_day ymd{year{static_cast<int>(num(1))}, month{static_cast<unsigned>(num(2))},
                             day{static_cast<unsigned>(num(3))}};
    if (!ymd.ok() || num(4) > 23 || num(5) > 59 || num(6) > 60) {
        fail(ErrorCode::validation, "invalid time '" + std::string(text) + "'");
    }
    std::int64_t ms = sys_days{ymd}.time_since_epoch().count() * kDayMs + num(4) * kHourMs + num(5) * kMinuteMs +
                      num(6) * kSecondMs;
    if (m[7].matched) {
        std::string frac = m[7].str();
        frac.resize(3, '0');
        ms += std::stoll(frac);
    }
    if (m[8].matched && m[8].str() != "Z") ms = TimeZone::parse(m[8].str()).to_utc(ms);
    return ms;
}

std::int64_t parse_duration(std::string_view text) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || value < 0) fail(ErrorCode::validation, "invalid duration '" + std::string(text) + "'");
    const std::string_view unit(ptr, static_cast<std::size_t>(text.data() + text.size() - ptr));
    std::int64_t scale = 0;
    if (unit.empty() || unit == "ms") {
        scale = 1;
    } else if (unit == "s") {
        scale = kSecondMs;
    } else if (unit == "m") {
        scale = kMinuteMs;
    } else if (unit == "h") {
        scale = kHourMs;
    } else if (unit == "d") {
        scale = kDayMs;
    } else if (unit == "w") {
        scale = kWeekMs;
    } else {
        fail(ErrorCode::validation, "invalid duration unit in '" + std::string(text) + "'");
    }
    return value * scale;
}

}  // namespace ampwatch
