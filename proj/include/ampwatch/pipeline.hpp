#pragma once

#include <array>
#include <string>

#include "ampwatch/aggregation.hpp"
#include "ampwatch/anomaly.hpp"
#include "ampwatch/config.hpp"
#include "ampwatch/forecast.hpp"
#include "ampwatch/history.hpp"
#include "ampwatch/stage.hpp"
#include "ampwatch/stats.hpp"

namespace ampwatch::pipeline {

/// Topics whose content is a pure function of the primary inputs.
inline const std::array<std::string, 5> kDerivedTopics{topics::aggregated, topics::residuals, topics::stats,
                                                       topics::anomalies, topics::forecasts};

/// All analytic consumers over one log, driven in dependency order:
/// aggregation, history, stats, anomaly, forecast.
class Pipeline {
public:
    Pipeline(topiclog::TopicLog& log, PipelineConfig config);

    /// Brings every consumer up to `limits`, at most `chunk` measurements at
    /// a time (0 = unbounded).
    void run_to(const InputLimits& limits, std::uint64_t chunk = 0);
    void pump(std::uint64_t chunk = 0) { run_to(current_ends(log_), chunk); }
    /// Appends a flush marker at the current end of the measurements topic.
    void request_flush();

    InputLimits processed() const noexcept { return processed_; }
    bool caught_up() const { return processed_ == current_ends(log_); }

    const aggregation::Aggregator& aggregator() const;
    const history::HistoryStore& history() const;
    history::HistoryStore& history();
    const stats::StatsEngine& stats() const;
    const anomaly::Detector& detector() const;
    const forecast::Forecaster& forecaster() const;
    const PipelineConfig& config() const noexcept { return config_; }
    topiclog::TopicLog& log() noexcept { return log_; }

private:
    topiclog::TopicLog& log_;
    PipelineConfig config_;
    std::vector<std::unique_ptr<StageRunner>> runners_;
    InputLimits processed_;
};

}  // namespace ampwatch::pipeline
