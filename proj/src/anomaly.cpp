#include "ampwatch/anomaly.hpp"

#include <algorithm>
#include <cmath>

namespace ampwatch::anomaly {

void validate(const AnomalyConfig& cfg) {
    auto check = [](double k, std::uint64_t min_count, const std::string& where) {
        if (!(k > 0.0) || !std::isfinite(k)) fail(ErrorCode::validation, where + ": k must be > 0");
        if (min_count < 2) fail(ErrorCode::validation, where + ": min_count must be >= 2");
    };
    check(cfg.k, cfg.min_count, "anomaly");
    for (const auto& [series, o] : cfg.overrides) {
        check(o.k.value_or(cfg.k), o.min_count.value_or(cfg.min_count), "override '" + series + "'");
    }
    if (cfg.residual.enabled) check(cfg.residual.k, cfg.residual.min_count, "residual detector");
}

EffectiveConfig resolve(const AnomalyConfig& cfg, const std::string& series) {
    EffectiveConfig e{cfg.k, cfg.min_count, cfg.kind};
    if (auto it = cfg.overrides.find(series); it != cfg.overrides.end()) {
        e.k = it->second.k.value_or(e.k);
        e.min_count = it->second.min_count.value_or(e.min_count);
        e.kind = it->second.kind.value_or(e.kind);
    }
    return e;
}

std::string_view to_string(DetectorKind d) noexcept {
    switch (d) {
    case DetectorKind::k_sigma: return "ksigma";
    case DetectorKind::constant_deviation: return "constant-deviation";
    case DetectorKind::forecast_residual: return "forecast-residual";
    }
    return "";
}

DetectorKind parse_detector(std::string_view text) {
    for (auto d : {DetectorKind::k_sigma, DetectorKind::constant_deviation, DetectorKind::forecast_residual}) {
        if (to_string(d) == text) return d;
    }
    fail(ErrorCode::format, "unknown detector '" + std::string(text) + "'");
}

json encode(const AnomalyEvent& e) {
    return json{{"series", e.series},
                {"ts", e.ts},
                {"value_w", e.value_w},
                {"expected_mean_w", e.expected_mean_w},
                {"stddev_w", e.stddev_w},
                {"score", e.score ? json(*e.score) : json(nullptr)},
                {"k_used", e.k_used},
                {"kind", stats::to_string(e.kind)},
                {"bucket", e.bucket},
                {"detector", to_string(e.detector)}};
}

AnomalyEvent decode_anomaly(const json& doc) {
    AnomalyEvent e;
    e.series = doc.at("series").get<std::string>();
    e.ts = doc.at("ts").get<std::int64_t>();
    e.value_w = doc.at("value_w").get<double>();
    e.expected_mean_w = doc.at("expected_mean_w").get<double>();
    e.stddev_w = doc.at("stddev_w").get<double>();
    if (!doc.at("score").is_null()) e.score = doc["score"].get<double>();
    e.k_used = doc.at("k_used").get<double>();
    e.kind = stats::parse_kind(doc.at("kind").get<std::string>());
    e.bucket = doc.at("bucket").get<std::size_t>();
    e.detector = parse_detector(doc.at("detector").get<std::string>());
    return e;
}

std::optional<AnomalyEvent> evaluate(const std::string& series, std::int64_t ts_ms, double value_w,
                                     const stats::TemporalStatsBucket& bucket, std::size_t bucket_index,
                                     const EffectiveConfig& cfg) {
    if (bucket.count < cfg.min_count) return std::nullopt;
    const double sigma = bucket.stddev();
    const double d = std::abs(value_w - bucket.mean_w);
    AnomalyEvent e{series, ts_ms, value_w, bucket.mean_w, sigma, std::nullopt, cfg.k, cfg.kind, bucket_index,
                   DetectorKind::k_sigma};
    if (sigma == 0.0) {
        if (d == 0.0) return std::nullopt;
        e.detector = DetectorKind::constant_deviation;
        return e;
    }
    if (d < cfg.k * sigma) return std::nullopt;
    e.score = d / sigma;
    return e;
}

std::optional<AnomalyEvent> evaluate(const Measurement& m, const stats::StatsSnapshot& snapshot,
                                     const AnomalyConfig& cfg) {
    const auto eff = resolve(cfg, m.sensor.str());
    const std::size_t idx = stats::bucket_of(eff.kind, m.ts.epoch_ms, cfg.tz);
    return evaluate(m.sensor.str(), m.ts.epoch_ms, m.value_w, snapshot.buckets.of(eff.kind)[idx], idx, eff);
}

Detector::Detector(AnomalyConfig config, pipeline::EventTimePolicy policy)
    : config_(std::move(config)), clock_(policy) {
    validate(config_);
}

const stats::StatsSnapshot* Detector::snapshot_for(const std::string& series, std::int64_t ts_ms) const {
    auto it = snapshots_.find(series);
    if (it == snapshots_.end()) return nullptr;
    const stats::StatsSnapshot* best = nullptr;
    for (const auto& s : it->second) {
        if (s.cutoff_ts <= ts_ms) best = &s;
    }
    return best;
}

void Detector::evaluate_point(const std::string& series, std::int64_t ts_ms, double value_w,
                              pipeline::Emitter& out) {
    ++metrics_.evaluated;
    const stats::StatsSnapshot* snap = snapshot_for(series, ts_ms);
    if (!snap) {
        ++metrics_.insufficient_data;
        return;
    }
    const auto eff = resolve(config_, series);
    const std::size_t idx = stats::bucket_of(eff.kind, ts_ms, config_.tz);
    const auto& bucket = snap->buckets.of(eff.kind)[idx];
    auto emit = [&](const AnomalyEvent& e) {
        out.emit(topics::anomalies, e.series, e.ts, encode(e));
        events_.push_back(e);
    };
    if (bucket.count < eff.min_count) {
        ++metrics_.insufficient_data;
    } else if (auto e = evaluate(series, ts_ms, value_w, bucket, idx, eff)) {
        if (e->detector == DetectorKind::constant_deviation) {
            ++metrics_.constant_flags;
        } else {
            ++metrics_.events;
        }
        emit(*e);
    }

    if (!config_.residual.enabled) return;
    const auto how = stats::AttributeKind::hour_of_week;
    const std::size_t how_idx = stats::bucket_of(how, ts_ms, config_.tz);
    const auto& fb = snap->buckets.of(how)[how_idx];
    if (fb.count < config_.residual.forecast_min_count) return;
    const double residual = value_w - fb.mean_w;
    auto& rs = residual_stats_[series];
    const double sigma = rs.stddev();
    if (rs.count >= config_.residual.min_count && sigma > 0.0) {
        const double d = std::abs(residual - rs.mean_w);
        if (d >= config_.residual.k * sigma) {
            ++metrics_.residual_events;
            emit(AnomalyEvent{series, ts_ms, value_w, fb.mean_w + rs.mean_w, sigma, d / sigma, config_.residual.k,
                              how, how_idx, DetectorKind::forecast_residual});
        }
    }
    rs.update(residual);
}

void Detector::on_measurement(const Measurement& m, pipeline::Emitter&) {
    if (clock_.is_late(m.ts.epoch_ms)) {
        ++metrics_.late_drops;
        return;
    }
    clock_.observe(m.ts.epoch_ms);
    pending_.push_back(m);
}

void Detector::on_flush(pipeline::Emitter&) {
    clock_.flush();
    flushing_ = true;
}

void Detector::on_derived(const std::string& topic, const json& payload, pipeline::Emitter&) {
    if (topic == topics::stats) {
        auto snap = stats::decode_snapshot(payload);
        snapshots_[snap.series].push_back(std::move(snap));
    } else if (topic == topics::aggregated && payload.at("final").get<bool>()) {
        pending_groups_.push_back(
            {group_series_id(payload.at("hierarchy").get<std::string>(), payload.at("group").get<std::string>()),
             {payload.at("window_start").get<std::int64_t>(), payload.at("sum_w").get<double>()}});
    }
}

void Detector::end_step(pipeline::Emitter& out) {
    const std::int64_t horizon = clock_.horizon();
    auto split = std::partition(pending_.begin(), pending_.end(),
                                [&](const Measurement& m) { return m.ts.epoch_ms < horizon; });
    if (split != pending_.begin()) {
        std::vector<Measurement> ready(std::make_move_iterator(pending_.begin()), std::make_move_iterator(split));
        pending_.erase(pending_.begin(), split);
        std::sort(ready.begin(), ready.end(), [](const Measurement& a, const Measurement& b) {
            return a.ts != b.ts ? a.ts < b.ts : a.sensor < b.sensor;
        });
        for (const auto& m : ready) evaluate_point(m.sensor.str(), m.ts.epoch_ms, m.value_w, out);
    }
    for (const auto& [series, point] : pending_groups_) evaluate_point(series, point.first, point.second, out);
    pending_groups_.clear();
    flushing_ = false;
    prune_snapshots();
}

void Detector::prune_snapshots() {
    if (!clock_.has_watermark()) return;
    const auto& p = clock_.policy();
    const std::int64_t keep_after = clock_.horizon() - 4 * p.window_ms - p.grace_ms;
    for (auto& [_, list] : snapshots_) {
        // Keep the newest snapshot at or before the cutoff plus everything after it.
        while (list.size() >= 2 && list[1].cutoff_ts <= keep_after) list.pop_front();
    }
}

std::vector<AnomalyEvent> Detector::query_anomalies(const AnomalyQuery& q) const {
    if (q.from_ms > q.to_ms) fail(ErrorCode::validation, "anomaly query needs from <= to");
    std::vector<AnomalyEvent> out;
    for (const auto& e : events_) {
        if (q.series && e.series != *q.series) continue;
        if (e.ts < q.from_ms || e.ts >= q.to_ms) continue;
        if (q.min_score && (!e.score || *e.score < *q.min_score)) continue;
        out.push_back(e);
    }
    std::stable_sort(out.begin(), out.end(), [](const AnomalyEvent& a, const AnomalyEvent& b) { return a.ts < b.ts; });
    return out;
}

}  // namespace ampwatch::anomaly
