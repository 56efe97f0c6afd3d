#include "ampwatch/correlation.hpp"

#include <algorithm>
#include <cmath>

namespace ampwatch::correlation {

namespace {

constexpr std::int64_t kFirstMondayMs = 4 * kDayMs;
constexpr std::int64_t kIdleOffsetMs = 5 * kDayMs + 12 * kHourMs;
constexpr std::int64_t kIdleSpanMs = kDayMs;

}  // namespace

AlignedPairs align(const history::HistoryStore& history, const std::string& a, const std::string& b,
                   std::int64_t window_ms, std::int64_t from_ms, std::int64_t to_ms) {
    history.require_resolution(window_ms);
    for (const auto* s : {&a, &b}) {
        if (!history.has_series(*s)) fail(ErrorCode::not_found, "unknown series '" + *s + "'");
    }
    const auto rows_a = history.query_range(a, window_ms, from_ms, to_ms);
    const auto rows_b = history.query_range(b, window_ms, from_ms, to_ms);
    AlignedPairs out{a, b, window_ms, {}};
    auto ib = rows_b.begin();
    for (const auto& ra : rows_a) {
        while (ib != rows_b.end() && ib->window_start < ra.window_start) ++ib;
        if (ib == rows_b.end()) break;
        if (ib->window_start == ra.window_start) {
            out.pairs.push_back({ra.window_start, average(ra.stats), average(ib->stats)});
        }
    }
    return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) fail(ErrorCode::validation, "pearson needs equally long inputs");
    if (x.size() < 2) fail(ErrorCode::undefined, "correlation needs at least 2 pairs");
    double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x[i] - mx);
        syy += dy * (y[i] - my);
        sxy += dx * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) fail(ErrorCode::undefined, "correlation undefined for a constant series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson(const AlignedPairs& p) {
    std::vector<double> x, y;
    x.reserve(p.pairs.size());
    y.reserve(p.pairs.size());
    for (const auto& q : p.pairs) {
        x.push_back(q.avg_a);
        y.push_back(q.avg_b);
    }
    return pearson(x, y);
}

std::int64_t weekend_span_start(std::int64_t index, const TimeZone& tz) {
    return tz.to_utc(kFirstMondayMs + index * kWeekMs + kIdleOffsetMs);
}

std::vector<WeekendPoint> weekend_idle_series(const history::HistoryStore& history, const std::string& series,
                                              std::int64_t from_ms, std::int64_t to_ms, const WeekendConfig& cfg) {
    if (from_ms > to_ms) fail(ErrorCode::validation, "weekend range needs from <= to");
    if (!(cfg.coverage_fraction > 0.0 && cfg.coverage_fraction <= 1.0)) {
        fail(ErrorCode::validation, "coverage fraction must be in (0, 1]");
    }
    std::vector<WeekendPoint> out;
    if (!history.has_series(series)) return out;

    std::int64_t index = floor_div(cfg.tz.to_local(from_ms) - kFirstMondayMs - kIdleOffsetMs, kWeekMs);
    if (weekend_span_start(index, cfg.tz) < from_ms) ++index;
    for (;; ++index) {
        const std::int64_t start = weekend_span_start(index, cfg.tz);
        if (start >= to_ms) break;
        const std::int64_t end = start + kIdleSpanMs;
        for (const auto& res : history.policy().windows) {
            const std::int64_t w = res.window_ms;
            const double expected = static_cast<double>(kIdleSpanMs / w);
            PowerStats total;
            std::size_t windows = 0;
            for (const auto& row : history.query_range(series, w, start, end)) {
                if (row.window_start + w > end) continue;
                total = stats_merge(total, row.stats);
                ++windows;
            }
            if (windows == 0 || static_cast<double>(windows) < cfg.coverage_fraction * expected) continue;
            out.push_back(WeekendPoint{index, start, average(total), w, windows});
            break;
        }
    }
    return out;
}

TrendResult trend(const std::vector<WeekendPoint>& points, double slope_threshold, std::size_t min_points) {
    const std::size_t n = points.size();
    if (n < 2) fail(ErrorCode::insufficient_data, "trend needs at least 2 points");
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += static_cast<double>(p.index);
        my += p.avg_w;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (const auto& p : points) {
        const double dx = static_cast<double>(p.index) - mx;
        sxx += dx * dx;
        sxy += dx * (p.avg_w - my);
    }
    if (sxx == 0.0) fail(ErrorCode::insufficient_data, "trend needs at least 2 distinct weekends");
    TrendResult r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    r.n = n;
    r.flagged = n >= min_points && r.slope >= slope_threshold;
    return r;
}

}  // namespace ampwatch::correlation
