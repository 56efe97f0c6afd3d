#include "ampwatch/pipeline.hpp"

namespace ampwatch::pipeline {

namespace {

enum Slot { kAggregation, kHistory, kStats, kAnomaly, kForecast };

}  // namespace

Pipeline::Pipeline(topiclog::TopicLog& log, PipelineConfig config) : log_(log), config_(std::move(config)) {
    config_.propagate_timezone();
    validate(config_);
    for (const auto& t : {topics::measurements, topics::configuration, topics::control}) log_.ensure_topic(t);
    const auto policy = config_.aggregation.policy();
    runners_.push_back(std::make_unique<StageRunner>(log_, std::make_unique<aggregation::Aggregator>(config_.aggregation)));
    runners_.push_back(std::make_unique<StageRunner>(log_, std::make_unique<history::HistoryStore>(config_.resolutions)));
    runners_.push_back(std::make_unique<StageRunner>(log_, std::make_unique<stats::StatsEngine>(config_.stats, policy)));
    runners_.push_back(std::make_unique<StageRunner>(log_, std::make_unique<anomaly::Detector>(config_.anomaly, policy)));
    runners_.push_back(std::make_unique<StageRunner>(log_, std::make_unique<forecast::Forecaster>(config_.forecast)));
}

void Pipeline::run_to(const InputLimits& limits, std::uint64_t chunk) {
    if (limits.measurements < processed_.measurements || limits.configuration < processed_.configuration ||
        limits.control < processed_.control) {
        fail(ErrorCode::validation, "pipeline cannot run backwards");
    }
    std::uint64_t m = processed_.measurements;
    do {
        m = chunk == 0 ? limits.measurements : std::min(limits.measurements, m + chunk);
        const InputLimits step{m, limits.configuration, limits.control};
        for (auto& r : runners_) r->run(step);
        processed_ = step;
    } while (m < limits.measurements);
}

void Pipeline::request_flush() {
    log_.append(topics::control, "flush", 0,
                codec::dump(codec::encode(codec::ControlRecord{"flush", log_.end_offset(topics::measurements)})));
}

const aggregation::Aggregator& Pipeline::aggregator() const {
    return static_cast<const aggregation::Aggregator&>(runners_[kAggregation]->stage());
}
const history::HistoryStore& Pipeline::history() const {
    return static_cast<const history::HistoryStore&>(runners_[kHistory]->stage());
}
history::HistoryStore& Pipeline::history() { return static_cast<history::HistoryStore&>(runners_[kHistory]->stage()); }
const stats::StatsEngine& Pipeline::stats() const {
    return static_cast<const stats::StatsEngine&>(runners_[kStats]->stage());
}
const anomaly::Detector& Pipeline::detector() const {
    return static_cast<const anomaly::Detector&>(runners_[kAnomaly]->stage());
}
const forecast::Forecaster& Pipeline::forecaster() const {
    return static_cast<const forecast::Forecaster&>(runners_[kForecast]->stage());
}

}  // namespace ampwatch::pipeline
