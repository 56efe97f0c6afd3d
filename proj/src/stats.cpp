#include "ampwatch/stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace ampwatch::stats {

std::size_t bucket_count(AttributeKind kind) noexcept {
    switch (kind) {
    case AttributeKind::hour_of_day: return 24;
    case AttributeKind::day_of_week: return 7;
    case AttributeKind::hour_of_week: return 168;
    case AttributeKind::month_of_year: return 12;
    }
    return 0;
}

std::string_view to_string(AttributeKind kind) noexcept {
    switch (kind) {
    case AttributeKind::hour_of_day: return "HOUR_OF_DAY";
    case AttributeKind::day_of_week: return "DAY_OF_WEEK";
    case AttributeKind::hour_of_week: return "HOUR_OF_WEEK";
    case AttributeKind::month_of_year: return "MONTH_OF_YEAR";
    }
    return "";
}

AttributeKind parse_kind(std::string_view text) {
    std::string upper(text);
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    for (auto k : kAllKinds) {
        if (to_string(k) == upper) return k;
    }
    fail(ErrorCode::validation, "unknown attribute kind '" + std::string(text) + "'");
}

std::size_t bucket_of(AttributeKind kind, std::int64_t ts_ms, const TimeZone& tz) noexcept {
    switch (kind) {
    case AttributeKind::hour_of_day: return static_cast<std::size_t>(hour_of_day(ts_ms, tz));
    case AttributeKind::day_of_week: return static_cast<std::size_t>(day_of_week(ts_ms, tz));
    case AttributeKind::hour_of_week:
        return static_cast<std::size_t>(day_of_week(ts_ms, tz) * 24 + hour_of_day(ts_ms, tz));
    case AttributeKind::month_of_year: return static_cast<std::size_t>(month_of_year(ts_ms, tz));
    }
    return 0;
}

void TemporalStatsBucket::update(double x) noexcept {
    count += 1;
    const double delta = x - mean_w;
    mean_w += delta / static_cast<double>(count);
    m2 += delta * (x - mean_w);
    max_w = count == 1 ? x : std::max(max_w, x);
}

void TemporalStatsBucket::merge(std::uint64_t other_count, double other_mean, double other_m2) noexcept {
    if (other_count == 0) return;
    if (count == 0) {
        count = other_count;
        mean_w = other_mean;
        m2 = other_m2;
        return;
    }
    const double n_a = static_cast<double>(count);
    const double n_b = static_cast<double>(other_count);
    const double n = n_a + n_b;
    const double delta = other_mean - mean_w;
    mean_w += delta * n_b / n;
    m2 += other_m2 + delta * delta * n_a * n_b / n;
    count += other_count;
}

double TemporalStatsBucket::stddev() const noexcept { return std::sqrt(variance()); }

SeriesBuckets::SeriesBuckets() {
    for (auto k : kAllKinds) by_kind[static_cast<std::size_t>(k)].resize(bucket_count(k));
}

void SeriesBuckets::update(std::int64_t ts_ms, double value, const TimeZone& tz) noexcept {
    for (auto k : kAllKinds) by_kind[static_cast<std::size_t>(k)][bucket_of(k, ts_ms, tz)].update(value);
    ++total;
}

json encode(const StatsSnapshot& s) {
    json kinds = json::object();
    for (auto k : kAllKinds) {
        json rows = json::array();
        for (const auto& b : s.buckets.of(k)) rows.push_back(json::array({b.count, b.mean_w, b.m2, b.max_w}));
        kinds[std::string(to_string(k))] = std::move(rows);
    }
    return json{{"series", s.series}, {"cutoff_ts", s.cutoff_ts}, {"total", s.buckets.total}, {"kinds", kinds}};
}

StatsSnapshot decode_snapshot(const json& doc) {
    StatsSnapshot s;
    s.series = doc.at("series").get<std::string>();
    s.cutoff_ts = doc.at("cutoff_ts").get<std::int64_t>();
    s.buckets.total = doc.at("total").get<std::uint64_t>();
    const auto& kinds = doc.at("kinds");
    for (auto k : kAllKinds) {
        const auto& rows = kinds.at(std::string(to_string(k)));
        auto& out = s.buckets.by_kind[static_cast<std::size_t>(k)];
        if (rows.size() != out.size()) fail(ErrorCode::format, "snapshot bucket count mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = TemporalStatsBucket{rows[i][0].get<std::uint64_t>(), rows[i][1].get<double>(),
                                         rows[i][2].get<double>(), rows[i][3].get<double>()};
        }
    }
    return s;
}

StatsEngine::StatsEngine(StatsConfig config, pipeline::EventTimePolicy policy)
    : config_(config), clock_(policy) {
    if (config_.snapshot_every == 0) fail(ErrorCode::validation, "snapshot_every must be >= 1");
}

void StatsEngine::update(const std::string& series, std::int64_t ts_ms, double value_w) {
    apply(series, ts_ms, value_w, nullptr);
}

void StatsEngine::apply(const std::string& series, std::int64_t ts_ms, double value_w, pipeline::Emitter* out) {
    auto& state = series_[series];
    state.buckets.update(ts_ms, value_w, config_.tz);
    state.last_ts = std::max(state.last_ts, ts_ms);
    ++metrics_.updates;
    if (++state.since_publish >= config_.snapshot_every && out) publish(series, state, *out);
}

void StatsEngine::publish(const std::string& series, SeriesState& state, pipeline::Emitter& out) {
    StatsSnapshot snap{series, state.last_ts + 1, state.buckets};
    out.emit(topics::stats, series, snap.cutoff_ts, encode(snap));
    state.since_publish = 0;
    ++metrics_.snapshots;
}

void StatsEngine::finalize_pending(pipeline::Emitter& out) {
    const std::int64_t horizon = clock_.horizon();
    auto split = std::partition(pending_.begin(), pending_.end(),
                                [&](const Measurement& m) { return m.ts.epoch_ms < horizon; });
    if (split == pending_.begin()) return;
    std::vector<Measurement> ready(std::make_move_iterator(pending_.begin()), std::make_move_iterator(split));
    pending_.erase(pending_.begin(), split);
    std::sort(ready.begin(), ready.end(), [](const Measurement& a, const Measurement& b) {
        return a.ts != b.ts ? a.ts < b.ts : a.sensor < b.sensor;
    });
    for (const auto& m : ready) apply(m.sensor.str(), m.ts.epoch_ms, m.value_w, &out);
}

void StatsEngine::on_measurement(const Measurement& m, pipeline::Emitter& out) {
    if (clock_.is_late(m.ts.epoch_ms)) {
        ++metrics_.late_drops;
        return;
    }
    clock_.observe(m.ts.epoch_ms);
    pending_.push_back(m);
    finalize_pending(out);
}

void StatsEngine::on_flush(pipeline::Emitter& out) {
    clock_.flush();
    finalize_pending(out);
    for (auto& [series, state] : series_) {
        if (state.since_publish > 0) publish(series, state, out);
    }
}

void StatsEngine::on_derived(const std::string& topic, const json& payload, pipeline::Emitter& out) {
    if (topic != topics::aggregated || !payload.at("final").get<bool>()) return;
    const std::string series =
        group_series_id(payload.at("hierarchy").get<std::string>(), payload.at("group").get<std::string>());
    apply(series, payload.at("window_start").get<std::int64_t>(), payload.at("sum_w").get<double>(), &out);
}

std::vector<TemporalStatsBucket> StatsEngine::snapshot(const std::string& series, AttributeKind kind) const {
    auto it = series_.find(series);
    if (it == series_.end()) return std::vector<TemporalStatsBucket>(bucket_count(kind));
    return it->second.buckets.of(kind);
}

std::optional<StatsSnapshot> StatsEngine::full_snapshot(const std::string& series) const {
    auto it = series_.find(series);
    if (it == series_.end()) return std::nullopt;
    return StatsSnapshot{series, it->second.last_ts + 1, it->second.buckets};
}

std::vector<std::string> StatsEngine::series() const {
    std::vector<std::string> out;
    for (const auto& [s, _] : series_) out.push_back(s);
    return out;
}

}  // namespace ampwatch::stats
