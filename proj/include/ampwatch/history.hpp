#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ampwatch/aggregation.hpp"
#include "ampwatch/stage.hpp"

namespace ampwatch::history {

struct Resolution {
    std::int64_t window_ms = 0;
    std::int64_t ttl_ms = 0;
};

struct ResolutionPolicy {
    std::vector<Resolution> windows;
    std::int64_t raw_ttl_ms = kDayMs;

    /// 1 min / 7 d, 5 min / 90 d, 1 h / 2 y; raw data 1 d.
    static ResolutionPolicy defaults();
};

void validate(const ResolutionPolicy& policy);

struct WindowRow {
    std::string series;
    std::int64_t window_ms = 0;
    std::int64_t window_start = 0;
    PowerStats stats;
};

struct RawPoint {
    std::int64_t ts_ms = 0;
    double value_w = 0.0;
};

/// Multi-resolution tumbling-window store. Sensor measurements merge
/// directly; group emissions replace their previous revision.
class HistoryStore : public pipeline::Stage {
public:
    explicit HistoryStore(ResolutionPolicy policy);

    std::string name() const override { return "history"; }
    std::vector<std::string> derived_inputs() const override { return {topics::aggregated}; }
    void on_measurement(const Measurement& m, pipeline::Emitter&) override { update(m); }
    void on_derived(const std::string& topic, const json& payload, pipeline::Emitter&) override;

    void update(const Measurement& m);
    void update(const aggregation::AggregatedPower& a);

    /// Rows with from <= window_start < to, ascending.
    std::vector<WindowRow> query_range(const std::string& series, std::int64_t window_ms, std::int64_t from_ms,
                                       std::int64_t to_ms) const;
    std::vector<RawPoint> raw(const std::string& series, std::int64_t from_ms, std::int64_t to_ms) const;
    /// Deletes rows and raw points whose end + ttl <= now.
    std::size_t apply_retention(std::int64_t now_ms);

    std::vector<std::string> series() const;
    bool has_series(const std::string& series) const { return rows_.contains(series); }
    std::optional<RawPoint> latest(const std::string& series) const;
    const ResolutionPolicy& policy() const noexcept { return policy_; }
    std::int64_t finest_window_ms() const noexcept { return policy_.windows.front().window_ms; }
    void require_resolution(std::int64_t window_ms) const;

private:
    struct Row {
        PowerStats final_part;
        /// Open group points: ts -> (revision, value).
        std::map<std::int64_t, std::pair<std::uint64_t, double>> open;
        PowerStats stats;
    };
    using RowsByStart = std::map<std::int64_t, Row>;

    void add_raw(const std::string& series, std::int64_t ts, double value);

    ResolutionPolicy policy_;
    // series -> window_ms -> window_start -> row
    std::map<std::string, std::map<std::int64_t, RowsByStart>> rows_;
    std::map<std::string, std::deque<RawPoint>> raw_;
    std::map<std::string, RawPoint> latest_;
};

}  // namespace ampwatch::history
