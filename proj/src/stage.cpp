#include "ampwatch/stage.hpp"

#include <algorithm>

namespace ampwatch::pipeline {

Emitter::Emitter(topiclog::TopicLog& log) : log_(log) {}

void Emitter::emit(const std::string& topic, std::string_view key, std::int64_t ts_ms, json payload) {
    payload["step"] = step_;
    const std::string body = codec::dump(payload);
    auto& pos = positions_[topic];
    if (pos < log_.end_offset(topic)) {
        const auto existing = log_.at(topic, pos);
        if (existing.key != key || existing.ts_ms != ts_ms || existing.payload != body) {
            fail(ErrorCode::format, "derived topic '" + topic + "' diverges from recomputation at offset " +
                                        std::to_string(pos));
        }
        ++verified_;
    } else {
        log_.append(topic, key, ts_ms, body);
    }
    ++pos;
}

InputLimits current_ends(const topiclog::TopicLog& log) {
    return InputLimits{log.end_offset(topics::measurements), log.end_offset(topics::configuration),
                       log.end_offset(topics::control)};
}

StageRunner::StageRunner(topiclog::TopicLog& log, std::unique_ptr<Stage> stage)
    : log_(log),
      stage_(std::move(stage)),
      emitter_(log),
      measurements_{topics::measurements, 0},
      configuration_{topics::configuration, 0},
      control_{topics::control, 0} {
    for (const auto& t : stage_->outputs()) log_.ensure_topic(t);
    for (const auto& t : stage_->derived_inputs()) {
        log_.ensure_topic(t);
        derived_.push_back(DerivedInput{topiclog::Cursor{t, 0}, {}});
    }
}

bool StageRunner::peek_derived(DerivedInput& in) {
    if (in.buffer.empty()) {
        for (auto& r : log_.poll(in.cursor, 4096)) {
            json doc = codec::parse(r.payload);
            const auto step = doc.at("step").get<std::uint64_t>();
            in.buffer.push_back(Pending{step, std::move(doc)});
        }
    }
    return !in.buffer.empty();
}

void StageRunner::deliver_derived(std::uint64_t step) {
    for (auto& in : derived_) {
        while (peek_derived(in)) {
            auto& front = in.buffer.front();
            if (front.step > step) break;
            if (front.step < step) {
                fail(ErrorCode::internal, stage_->name() + ": derived record from '" + in.cursor.topic +
                                              "' at step " + std::to_string(front.step) + " arrived after step " +
                                              std::to_string(step));
            }
            stage_->on_derived(in.cursor.topic, front.payload, emitter_);
            in.buffer.pop_front();
        }
    }
}

void StageRunner::run(const InputLimits& limits) {
    auto refill = [&](topiclog::Cursor& cursor, std::deque<Pending>& buffer, std::uint64_t limit) {
        if (buffer.empty() && cursor.position < limit) {
            for (auto& r : log_.poll(cursor, limit - cursor.position)) {
                json doc = codec::parse(r.payload);
                const auto step = control_step(doc.at("at").get<std::uint64_t>());
                buffer.push_back(Pending{step, std::move(doc)});
            }
        }
    };
    constexpr std::uint64_t kNone = ~std::uint64_t{0};
    const std::uint64_t max_step = control_step(limits.measurements);
    std::deque<topiclog::Record> measurement_batch;

    while (true) {
        refill(configuration_, config_buffer_, limits.configuration);
        refill(control_, control_buffer_, limits.control);
        if (measurement_batch.empty() && measurements_.position < limits.measurements) {
            const auto n = std::min<std::uint64_t>(limits.measurements - measurements_.position, 4096);
            for (auto& r : log_.poll(measurements_, n)) measurement_batch.push_back(std::move(r));
        }

        const std::uint64_t config_step = config_buffer_.empty() ? kNone : config_buffer_.front().step;
        const std::uint64_t ctl_step = control_buffer_.empty() ? kNone : control_buffer_.front().step;
        const std::uint64_t measure_step =
            measurement_batch.empty() ? kNone : measurement_step(measurement_batch.front().offset);

        const std::uint64_t step = std::min({config_step, ctl_step, measure_step});
        if (step == kNone || step > max_step) break;

        emitter_.set_step(step);
        if (step == config_step) {
            stage_->on_registry_event(registry::decode_registry_event(config_buffer_.front().payload), emitter_);
            config_buffer_.pop_front();
            ++consumed_.configuration;
        } else if (step == ctl_step) {
            const auto control = codec::decode_control(control_buffer_.front().payload);
            if (control.type == "flush") stage_->on_flush(emitter_);
            control_buffer_.pop_front();
            ++consumed_.control;
        } else {
            stage_->on_measurement(codec::measurement_from_payload(measurement_batch.front().payload), emitter_);
            measurement_batch.pop_front();
            ++consumed_.measurements;
        }
        deliver_derived(step);
        stage_->end_step(emitter_);
    }
    // Unprocessed measurements go back to the cursor for the next run.
    if (!measurement_batch.empty()) measurements_.position = measurement_batch.front().offset;
}

}  // namespace ampwatch::pipeline

namespace ampwatch::pipeline {

void EventClock::observe(std::int64_t ts_ms) noexcept {
    if (!has_watermark_ || ts_ms > watermark_) watermark_ = ts_ms;
    has_watermark_ = true;
}

std::int64_t EventClock::horizon() const noexcept {
    if (!has_watermark_) return 0;
    return std::max(watermark_ - policy_.grace_ms, flushed_until_);
}

void EventClock::flush() noexcept {
    if (has_watermark_) {
        flushed_until_ = std::max(flushed_until_, window_start_of(watermark_, policy_.window_ms) + policy_.window_ms);
    }
}

}  // namespace ampwatch::pipeline
