#include "ampwatch/aggregation.hpp"

#include <iostream>

namespace ampwatch::aggregation {

void validate(const AggregationConfig& cfg) {
    if (cfg.window_ms < 1000) fail(ErrorCode::validation, "aggregation window_ms must be >= 1000");
    if (cfg.grace_ms < 0) fail(ErrorCode::validation, "aggregation grace_ms must be >= 0");
    if (cfg.stale_windows < 0) fail(ErrorCode::validation, "stale_windows must be >= 0");
}

json encode(const AggregatedPower& a) {
    return json{{"hierarchy", a.hierarchy},
                {"group", a.group},
                {"window_start", a.window_start},
                {"window_ms", a.window_ms},
                {"stats", codec::encode(a.stats)},
                {"sum_w", a.sum_w},
                {"revision", a.revision},
                {"registry_version", a.registry_version},
                {"final", a.final},
                {"children", a.children},
                {"carried", a.carried},
                {"gaps", a.gaps}};
}

AggregatedPower decode_aggregated(const json& doc) {
    AggregatedPower a;
    a.hierarchy = doc.at("hierarchy").get<std::string>();
    a.group = doc.at("group").get<std::string>();
    a.window_start = doc.at("window_start").get<std::int64_t>();
    a.window_ms = doc.at("window_ms").get<std::int64_t>();
    a.stats = codec::decode_stats(doc.at("stats"));
    a.sum_w = doc.at("sum_w").get<double>();
    a.revision = doc.at("revision").get<std::uint64_t>();
    a.registry_version = doc.at("registry_version").get<std::uint64_t>();
    a.final = doc.at("final").get<bool>();
    a.children = doc.at("children").get<std::map<std::string, double>>();
    a.carried = doc.at("carried").get<std::vector<std::string>>();
    a.gaps = doc.at("gaps").get<std::vector<std::string>>();
    return a;
}

json encode(const Residual& r) {
    return json{{"hierarchy", r.hierarchy},         {"group", r.group},         {"metered_sensor", r.metered_sensor},
                {"window_start", r.window_start},   {"window_ms", r.window_ms}, {"metered_w", r.metered_w},
                {"children_sum_w", r.children_sum_w}, {"residual_w", r.residual_w}};
}

Residual decode_residual(const json& doc) {
    return Residual{doc.at("hierarchy").get<std::string>(),   doc.at("group").get<std::string>(),
                    doc.at("metered_sensor").get<std::string>(), doc.at("window_start").get<std::int64_t>(),
                    doc.at("window_ms").get<std::int64_t>(),   doc.at("metered_w").get<double>(),
                    doc.at("children_sum_w").get<double>(),    doc.at("residual_w").get<double>()};
}

Aggregator::Aggregator(AggregationConfig config) : config_(config), clock_(config.policy()) { validate(config_); }

Aggregator::NodeValue Aggregator::evaluate(const HierarchyState& h, std::int64_t start, const Window& w,
                                           const registry::HierarchyNode& n, AggregatedPower* into) const {
    if (n.is_leaf) {
        const SensorId sensor(n.id);
        if (auto it = w.latest.find(sensor); it != w.latest.end()) return {it->second.value, Presence::reported};
        for (int k = 1; k <= config_.stale_windows; ++k) {
            auto prev = h.windows.find(start - k * config_.window_ms);
            if (prev == h.windows.end()) continue;
            if (auto it = prev->second.latest.find(sensor); it != prev->second.latest.end()) {
                return {it->second.value, Presence::carried};
            }
        }
        return {0.0, Presence::gap};
    }
    NodeValue result;
    bool any_carried = false;
    for (const auto& child : n.children) {
        const NodeValue cv = evaluate(h, start, w, child, nullptr);
        result.sum += cv.sum;
        if (cv.presence == Presence::reported) result.presence = Presence::reported;
        if (cv.presence == Presence::carried) any_carried = true;
        if (into) {
            into->children[child.id] = cv.sum;
            if (cv.presence == Presence::reported) into->stats = stats_merge(into->stats, stats_from_value(cv.sum));
            if (cv.presence == Presence::carried) into->carried.push_back(child.id);
            if (cv.presence == Presence::gap) into->gaps.push_back(child.id);
        }
    }
    if (result.presence != Presence::reported && any_carried) result.presence = Presence::carried;
    return result;
}

void Aggregator::emit(Emissions& out, const HierarchyState& h, std::int64_t start, Window& w,
                      const std::string& group, bool final, bool bump) {
    AggregatedPower a;
    a.hierarchy = h.index.hierarchy().name;
    a.group = group;
    a.window_start = start;
    a.window_ms = config_.window_ms;
    a.registry_version = h.index.hierarchy().version;
    a.final = final;
    const NodeValue v = evaluate(h, start, w, h.index.node(group), &a);
    if (v.presence != Presence::reported) return;
    a.sum_w = v.sum;
    auto it = w.revisions.find(group);
    if (it == w.revisions.end()) {
        a.revision = 0;
    } else {
        a.revision = bump || final ? it->second + 1 : it->second;
    }
    w.revisions[group] = a.revision;

    auto& slot = latest_[{a.hierarchy, a.group}];
    if (slot.hierarchy.empty() || a.window_start > slot.window_start ||
        (a.window_start == slot.window_start && a.revision >= slot.revision)) {
        slot = a;
    }
    out.aggregated.push_back(std::move(a));
}

void Aggregator::close(Emissions& out, HierarchyState& h, std::int64_t start, Window& w) {
    for (const auto& group : h.index.groups_post_order()) emit(out, h, start, w, group, false, false);
    w.closed = true;
}

void Aggregator::finalize(Emissions& out, HierarchyState& h, std::int64_t start, Window& w) {
    for (const auto& group : h.index.groups_post_order()) emit(out, h, start, w, group, true, false);
    for (const auto& [sensor, group] : h.index.metered_groups()) {
        auto metered = w.latest.find(sensor);
        if (metered == w.latest.end()) continue;
        const NodeValue v = evaluate(h, start, w, h.index.node(group), nullptr);
        if (v.presence != Presence::reported) continue;
        out.residuals.push_back(Residual{h.index.hierarchy().name, group, sensor.str(), start, config_.window_ms,
                                         metered->second.value, v.sum, metered->second.value - v.sum});
    }
    w.closed = true;
    w.final = true;
}

void Aggregator::prune(HierarchyState& h) {
    std::optional<std::int64_t> newest_final;
    for (const auto& [start, w] : h.windows) {
        if (w.final) newest_final = start;
    }
    if (!newest_final) return;
    const std::int64_t keep_from = *newest_final - config_.stale_windows * config_.window_ms;
    for (auto it = h.windows.begin(); it != h.windows.end() && it->first < keep_from;) {
        it = it->second.final ? h.windows.erase(it) : std::next(it);
    }
}

Emissions Aggregator::process_measurement(const Measurement& m) {
    Emissions out;
    ++metrics_.processed;
    if (clock_.is_late(m.ts.epoch_ms)) {
        ++metrics_.late_drops;
        return out;
    }
    bool routed = false;
    const std::int64_t start = window_start_of(m.ts.epoch_ms, config_.window_ms);
    for (auto& [name, h] : hierarchies_) {
        const bool leaf = h.index.has_leaf(m.sensor);
        if (!leaf && !h.index.metered_groups().contains(m.sensor)) continue;
        routed = true;
        Window& w = h.windows[start];
        if (w.final) continue;
        auto [it, inserted] = w.latest.try_emplace(m.sensor, Reading{m.ts.epoch_ms, m.value_w});
        if (!inserted) {
            if (m.ts.epoch_ms <= it->second.ts) continue;
            it->second = Reading{m.ts.epoch_ms, m.value_w};
        }
        if (w.closed && leaf) {
            for (const auto& group : h.index.ancestors_of(m.sensor.str())) emit(out, h, start, w, group, false, true);
        }
    }
    if (routed) {
        ++metrics_.contributions;
    } else {
        ++metrics_.unassigned;
    }
    return out;
}

Emissions Aggregator::advance_watermark(std::int64_t observed_ts) {
    clock_.observe(observed_ts);
    Emissions out;
    const std::int64_t horizon = clock_.horizon();
    const std::int64_t watermark = clock_.watermark();
    for (auto& [name, h] : hierarchies_) {
        for (auto& [start, w] : h.windows) {
            if (w.final) continue;
            const std::int64_t end = start + config_.window_ms;
            if (end <= horizon) {
                finalize(out, h, start, w);
            } else if (end <= watermark) {
                if (!w.closed) close(out, h, start, w);
            } else {
                break;
            }
        }
        prune(h);
    }
    return out;
}

Emissions Aggregator::flush() {
    if (!clock_.has_watermark()) return {};
    clock_.flush();
    return advance_watermark(clock_.watermark());
}

bool Aggregator::apply_registry_event(const registry::RegistryEvent& e) {
    const auto& name = e.hierarchy.name;
    auto it = hierarchies_.find(name);
    if (it != hierarchies_.end() && it->second.index.hierarchy().version >= e.hierarchy.version) {
        ++metrics_.stale_config_events;
        std::clog << "aggregation: ignoring stale configuration for '" << name << "' version "
                  << e.hierarchy.version << '\n';
        return false;
    }
    registry::HierarchyIndex index(e.hierarchy);
    if (it == hierarchies_.end()) {
        hierarchies_.emplace(name, HierarchyState{std::move(index), {}});
    } else {
        it->second.index = std::move(index);
    }
    return true;
}

void Aggregator::publish(const Emissions& e, pipeline::Emitter& out) {
    for (const auto& a : e.aggregated) out.emit(topics::aggregated, a.series_id(), a.window_start, encode(a));
    for (const auto& r : e.residuals) {
        out.emit(topics::residuals, group_series_id(r.hierarchy, r.group), r.window_start, encode(r));
    }
}

void Aggregator::on_measurement(const Measurement& m, pipeline::Emitter& out) {
    publish(process_measurement(m), out);
    publish(advance_watermark(m.ts.epoch_ms), out);
}

void Aggregator::on_registry_event(const registry::RegistryEvent& e, pipeline::Emitter&) {
    apply_registry_event(e);
}

void Aggregator::on_flush(pipeline::Emitter& out) { publish(flush(), out); }

std::optional<AggregatedPower> Aggregator::latest(const std::string& hierarchy, const std::string& group) const {
    auto it = latest_.find({hierarchy, group});
    if (it == latest_.end()) return std::nullopt;
    return it->second;
}

std::optional<registry::Hierarchy> Aggregator::hierarchy(const std::string& name) const {
    auto it = hierarchies_.find(name);
    if (it == hierarchies_.end()) return std::nullopt;
    return it->second.index.hierarchy();
}

}  // namespace ampwatch::aggregation
