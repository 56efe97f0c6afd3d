#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ampwatch/codec.hpp"
#include "ampwatch/registry.hpp"
#include "ampwatch/topiclog.hpp"

namespace ampwatch::pipeline {

// Every consumer sees the primary inputs (measurements, configuration,
// control) merged into one sequence of logical steps:
//   configuration/control record taking effect at measurement offset `at`
//   -> step 2*at; measurement at offset o -> step 2*o + 1.
// Derived records are tagged with the step that produced them, so a
// downstream stage can interleave them with its own primary input exactly
// as the upstream stage saw it, independent of batching.
inline std::uint64_t measurement_step(std::uint64_t offset) noexcept { return 2 * offset + 1; }
inline std::uint64_t control_step(std::uint64_t at) noexcept { return 2 * at; }

/// Publishes derived records. Outputs already present in the log (restart
/// recovery) are verified instead of appended again.
class Emitter {
public:
    explicit Emitter(topiclog::TopicLog& log);

    void set_step(std::uint64_t step) noexcept { step_ = step; }
    std::uint64_t step() const noexcept { return step_; }

    void emit(const std::string& topic, std::string_view key, std::int64_t ts_ms, json payload);
    std::uint64_t verified() const noexcept { return verified_; }

private:
    topiclog::TopicLog& log_;
    std::uint64_t step_ = 0;
    std::uint64_t verified_ = 0;
    std::map<std::string, std::uint64_t> positions_;
};

class Stage {
public:
    virtual ~Stage() = default;

    virtual std::string name() const = 0;
    virtual std::vector<std::string> outputs() const { return {}; }
    /// Upstream derived topics, delivered in this order within a step.
    virtual std::vector<std::string> derived_inputs() const { return {}; }

    virtual void on_measurement(const Measurement& m, Emitter& out) = 0;
    virtual void on_registry_event(const registry::RegistryEvent&, Emitter&) {}
    virtual void on_flush(Emitter&) {}
    virtual void on_derived(const std::string& topic, const json& payload, Emitter& out) = 0;
    /// Called once per step after all derived input of that step.
    virtual void end_step(Emitter&) {}
};

/// Exclusive upper bounds on primary input offsets for one run.
struct InputLimits {
    std::uint64_t measurements = 0;
    std::uint64_t configuration = 0;
    std::uint64_t control = 0;

    bool operator==(const InputLimits&) const = default;
};

InputLimits current_ends(const topiclog::TopicLog& log);

class StageRunner {
public:
    StageRunner(topiclog::TopicLog& log, std::unique_ptr<Stage> stage);

    /// Processes primary input up to `limits`, in step order.
    void run(const InputLimits& limits);

    Stage& stage() noexcept { return *stage_; }
    const Stage& stage() const noexcept { return *stage_; }
    InputLimits consumed() const noexcept { return consumed_; }

private:
    struct Pending {
        std::uint64_t step;
        json payload;
    };
    struct DerivedInput {
        topiclog::Cursor cursor;
        std::deque<Pending> buffer;
    };

    void deliver_derived(std::uint64_t step);
    bool peek_derived(DerivedInput& in);

    topiclog::TopicLog& log_;
    std::unique_ptr<Stage> stage_;
    Emitter emitter_;
    topiclog::Cursor measurements_;
    topiclog::Cursor configuration_;
    topiclog::Cursor control_;
    std::deque<Pending> config_buffer_;
    std::deque<Pending> control_buffer_;
    std::vector<DerivedInput> derived_;
    InputLimits consumed_;
};

}  // namespace ampwatch::pipeline

namespace ampwatch::pipeline {

/// Lateness settings shared by every event-time consumer.
struct EventTimePolicy {
    std::int64_t window_ms = kMinuteMs;
    std::int64_t grace_ms = 30 * kSecondMs;
};

/// Watermark bookkeeping: the watermark is the maximum observed event time;
/// everything before the horizon (watermark - grace, or the end of the
/// watermark's window after a flush) is final and later input for it is late.
class EventClock {
public:
    explicit EventClock(EventTimePolicy policy) : policy_(policy) {}

    bool has_watermark() const noexcept { return has_watermark_; }
    std::int64_t watermark() const noexcept { return watermark_; }
    bool is_late(std::int64_t ts_ms) const noexcept { return has_watermark_ && ts_ms < horizon(); }
    void observe(std::int64_t ts_ms) noexcept;
    std::int64_t horizon() const noexcept;
    void flush() noexcept;
    const EventTimePolicy& policy() const noexcept { return policy_; }

private:
    EventTimePolicy policy_;
    bool has_watermark_ = false;
    std::int64_t watermark_ = 0;
    std::int64_t flushed_until_ = 0;
};

}  // namespace ampwatch::pipeline
