#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ampwatch/registry.hpp"
#include "ampwatch/stage.hpp"

namespace ampwatch::aggregation {

struct AggregationConfig {
    std::int64_t window_ms = kMinuteMs;
    std::int64_t grace_ms = 30 * kSecondMs;
    /// A silent child contributes its last value from up to this many
    /// preceding windows, else 0 with a gap flag.
    int stale_windows = 2;

    pipeline::EventTimePolicy policy() const noexcept { return {window_ms, grace_ms}; }
};

void validate(const AggregationConfig& cfg);

/// Group consumption for one event-time window. Published like a sensor
/// measurement, enriched with summary statistics over the children.
struct AggregatedPower {
    std::string hierarchy;
    std::string group;
    std::int64_t window_start = 0;
    std::int64_t window_ms = 0;
    /// Over the contributions of children that reported in-window.
    PowerStats stats;
    /// Sum of all child contributions, carried values included.
    double sum_w = 0.0;
    std::uint64_t revision = 0;
    std::uint64_t registry_version = 0;
    bool final = false;
    std::map<std::string, double> children;
    std::vector<std::string> carried;
    std::vector<std::string> gaps;

    std::string series_id() const { return group_series_id(hierarchy, group); }
};

json encode(const AggregatedPower& a);
AggregatedPower decode_aggregated(const json& doc);

/// Metered group value minus the sum of its known subconsumers.
struct Residual {
    std::string hierarchy;
    std::string group;
    std::string metered_sensor;
    std::int64_t window_start = 0;
    std::int64_t window_ms = 0;
    double metered_w = 0.0;
    double children_sum_w = 0.0;
    double residual_w = 0.0;
};

json encode(const Residual& r);
Residual decode_residual(const json& doc);

struct AggregationMetrics {
    std::uint64_t processed = 0;
    std::uint64_t contributions = 0;
    std::uint64_t late_drops = 0;
    std::uint64_t unassigned = 0;
    std::uint64_t stale_config_events = 0;
};

struct Emissions {
    std::vector<AggregatedPower> aggregated;
    std::vector<Residual> residuals;
};

/// Event-time group aggregation over every hierarchy in parallel.
class Aggregator : public pipeline::Stage {
public:
    explicit Aggregator(AggregationConfig config);

    std::string name() const override { return "aggregation"; }
    std::vector<std::string> outputs() const override { return {topics::aggregated, topics::residuals}; }

    void on_measurement(const Measurement& m, pipeline::Emitter& out) override;
    void on_registry_event(const registry::RegistryEvent& e, pipeline::Emitter& out) override;
    void on_flush(pipeline::Emitter& out) override;
    void on_derived(const std::string&, const json&, pipeline::Emitter&) override {}

    /// Routes one measurement; emits re-revisions for already-closed windows.
    Emissions process_measurement(const Measurement& m);
    /// Closes windows whose end has passed and finalizes windows whose end
    /// plus grace has passed.
    Emissions advance_watermark(std::int64_t observed_ts);
    /// Returns false for stale versions.
    bool apply_registry_event(const registry::RegistryEvent& e);
    /// Closes and finalizes every open window.
    Emissions flush();

    const AggregationMetrics& metrics() const noexcept { return metrics_; }
    std::int64_t watermark() const noexcept { return clock_.watermark(); }
    /// Highest revision emitted for the latest window of a group.
    std::optional<AggregatedPower> latest(const std::string& hierarchy, const std::string& group) const;
    std::optional<registry::Hierarchy> hierarchy(const std::string& name) const;
    const AggregationConfig& config() const noexcept { return config_; }

private:
    struct Reading {
        std::int64_t ts;
        double value;
    };
    struct Window {
        std::map<SensorId, Reading> latest;
        bool closed = false;
        bool final = false;
        std::map<std::string, std::uint64_t> revisions;
    };
    struct HierarchyState {
        registry::HierarchyIndex index;
        std::map<std::int64_t, Window> windows;
    };
    enum class Presence { reported, carried, gap };
    struct NodeValue {
        double sum = 0.0;
        Presence presence = Presence::gap;
    };

    void emit(Emissions& out, const HierarchyState& h, std::int64_t start, Window& w, const std::string& group,
              bool final, bool bump);
    NodeValue evaluate(const HierarchyState& h, std::int64_t start, const Window& w, const registry::HierarchyNode& n,
                       AggregatedPower* into) const;
    void finalize(Emissions& out, HierarchyState& h, std::int64_t start, Window& w);
    void close(Emissions& out, HierarchyState& h, std::int64_t start, Window& w);
    void prune(HierarchyState& h);
    void publish(const Emissions& e, pipeline::Emitter& out);

    AggregationConfig config_;
    pipeline::EventClock clock_;
    std::map<std::string, HierarchyState> hierarchies_;
    std::map<std::pair<std::string, std::string>, AggregatedPower> latest_;
    AggregationMetrics metrics_;
};

}  // namespace ampwatch::aggregation
