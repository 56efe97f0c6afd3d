#include "ampwatch/history.hpp"

#include <algorithm>

namespace ampwatch::history {

ResolutionPolicy ResolutionPolicy::defaults() {
    return ResolutionPolicy{{{kMinuteMs, 7 * kDayMs}, {5 * kMinuteMs, 90 * kDayMs}, {kHourMs, 730 * kDayMs}}, kDayMs};
}

void validate(const ResolutionPolicy& policy) {
    if (policy.windows.empty()) fail(ErrorCode::validation, "at least one resolution is required");
    if (policy.raw_ttl_ms < 0) fail(ErrorCode::validation, "raw ttl must be >= 0");
    const std::int64_t smallest = policy.windows.front().window_ms;
    std::int64_t prev = 0;
    for (const auto& r : policy.windows) {
        if (r.window_ms <= prev) fail(ErrorCode::validation, "resolution windows must be strictly increasing");
        if (r.window_ms % smallest != 0) {
            fail(ErrorCode::validation, "every resolution must be a multiple of the smallest");
        }
        if (r.ttl_ms < 0) fail(ErrorCode::validation, "resolution ttl must be >= 0");
        prev = r.window_ms;
    }
}

HistoryStore::HistoryStore(ResolutionPolicy policy) : policy_(std::move(policy)) { validate(policy_); }

void HistoryStore::add_raw(const std::string& series, std::int64_t ts, double value) {
    auto& points = raw_[series];
    const RawPoint p{ts, value};
    if (points.empty() || points.back().ts_ms <= ts) {
        points.push_back(p);
    } else {
        auto pos = std::upper_bound(points.begin(), points.end(), ts,
                                    [](std::int64_t t, const RawPoint& q) { return t < q.ts_ms; });
        points.insert(pos, p);
    }
    auto [it, inserted] = latest_.try_emplace(series, p);
    if (!inserted && ts >= it->second.ts_ms) it->second = p;
}

void HistoryStore::update(const Measurement& m) {
    const std::string& series = m.sensor.str();
    const PowerStats single = stats_from_value(m.value_w);
    auto& by_res = rows_[series];
    for (const auto& r : policy_.windows) {
        Row& row = by_res[r.window_ms][window_start_of(m.ts.epoch_ms, r.window_ms)];
        row.final_part = stats_merge(row.final_part, single);
        row.stats = stats_merge(row.stats, single);
    }
    add_raw(series, m.ts.epoch_ms, m.value_w);
}

void HistoryStore::update(const aggregation::AggregatedPower& a) {
    const std::string series = a.series_id();
    const std::int64_t ts = a.window_start;
    auto& by_res = rows_[series];
    for (const auto& r : policy_.windows) {
        Row& row = by_res[r.window_ms][window_start_of(ts, r.window_ms)];
        auto it = row.open.find(ts);
        if (it != row.open.end() && it->second.first > a.revision) continue;
        if (a.final) {
            row.open.erase(ts);
            row.final_part = stats_merge(row.final_part, stats_from_value(a.sum_w));
        } else {
            row.open[ts] = {a.revision, a.sum_w};
        }
        PowerStats s = row.final_part;
        for (const auto& [_, rv] : row.open) s = stats_merge(s, stats_from_value(rv.second));
        row.stats = s;
    }
    if (a.final) add_raw(series, ts, a.sum_w);
}

void HistoryStore::on_derived(const std::string& topic, const json& payload, pipeline::Emitter&) {
    if (topic == topics::aggregated) update(aggregation::decode_aggregated(payload));
}

void HistoryStore::require_resolution(std::int64_t window_ms) const {
    for (const auto& r : policy_.windows) {
        if (r.window_ms == window_ms) return;
    }
    fail(ErrorCode::validation, "resolution " + std::to_string(window_ms) + " ms is not configured");
}

std::vector<WindowRow> HistoryStore::query_range(const std::string& series, std::int64_t window_ms,
                                                 std::int64_t from_ms, std::int64_t to_ms) const {
    require_resolution(window_ms);
    if (from_ms > to_ms) fail(ErrorCode::validation, "query range needs from <= to");
    std::vector<WindowRow> out;
    auto s = rows_.find(series);
    if (s == rows_.end()) return out;
    auto res = s->second.find(window_ms);
    if (res == s->second.end()) return out;
    for (auto it = res->second.lower_bound(from_ms); it != res->second.end() && it->first < to_ms; ++it) {
        if (it->second.stats.count == 0) continue;
        out.push_back(WindowRow{series, window_ms, it->first, it->second.stats});
    }
    return out;
}

std::vector<RawPoint> HistoryStore::raw(const std::string& series, std::int64_t from_ms, std::int64_t to_ms) const {
    std::vector<RawPoint> out;
    auto it = raw_.find(series);
    if (it == raw_.end()) return out;
    for (const auto& p : it->second) {
        if (p.ts_ms >= from_ms && p.ts_ms < to_ms) out.push_back(p);
    }
    return out;
}

std::size_t HistoryStore::apply_retention(std::int64_t now_ms) {
    std::size_t deleted = 0;
    for (auto& [series, by_res] : rows_) {
        for (const auto& r : policy_.windows) {
            auto res = by_res.find(r.window_ms);
            if (res == by_res.end()) continue;
            auto& rows = res->second;
            // Rows are ordered by start, so expired rows form a prefix.
            auto it = rows.begin();
            while (it != rows.end() && it->first + r.window_ms + r.ttl_ms <= now_ms) {
                it = rows.erase(it);
                ++deleted;
            }
        }
    }
    for (auto& [series, points] : raw_) {
        while (!points.empty() && points.front().ts_ms + policy_.raw_ttl_ms <= now_ms) {
            points.pop_front();
            ++deleted;
        }
    }
    return deleted;
}

std::vector<std::string> HistoryStore::series() const {
    std::vector<std::string> out;
    for (const auto& [s, _] : rows_) out.push_back(s);
    return out;
}

std::optional<RawPoint> HistoryStore::latest(const std::string& series) const {
    auto it = latest_.find(series);
    if (it == latest_.end()) return std::nullopt;
    return it->second;
}

}  // namespace ampwatch::history
