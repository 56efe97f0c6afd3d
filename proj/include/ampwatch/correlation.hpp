#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ampwatch/history.hpp"

namespace ampwatch::correlation {

struct AlignedPair {
    std::int64_t window_start = 0;
    double avg_a = 0.0;
    double avg_b = 0.0;
};

struct AlignedPairs {
    std::string a;
    std::string b;
    std::int64_t window_ms = 0;
    std::vector<AlignedPair> pairs;
};

/// Inner join of the two series' window averages on window_start.
AlignedPairs align(const history::HistoryStore& history, const std::string& a, const std::string& b,
                   std::int64_t window_ms, std::int64_t from_ms, std::int64_t to_ms);

/// Sample Pearson coefficient, clamped to [-1, 1].
double pearson(const AlignedPairs& p);
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct WeekendPoint {
    /// Weeks since Monday 1970-01-05 in the configured time zone.
    std::int64_t index = 0;
    std::int64_t span_start = 0;
    double avg_w = 0.0;
    std::int64_t resolution_ms = 0;
    std::size_t windows = 0;
};

struct WeekendConfig {
    TimeZone tz;
    double coverage_fraction = 0.5;
};

/// Saturday 12:00 (local) of the weekend with the given index, as UTC.
std::int64_t weekend_span_start(std::int64_t index, const TimeZone& tz);

/// One point per weekend idle span (Saturday 12:00 to Sunday 12:00) that
/// starts in [from, to) and is sufficiently covered by history rows.
std::vector<WeekendPoint> weekend_idle_series(const history::HistoryStore& history, const std::string& series,
                                              std::int64_t from_ms, std::int64_t to_ms,
                                              const WeekendConfig& cfg = {});

struct TrendResult {
    double slope = 0.0;
    double intercept = 0.0;
    std::size_t n = 0;
    bool flagged = false;
};

/// Least-squares line of avg_w against weekend index; slope in W per week.
TrendResult trend(const std::vector<WeekendPoint>& points, double slope_threshold, std::size_t min_points);

}  // namespace ampwatch::correlation
