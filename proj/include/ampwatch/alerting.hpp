#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "ampwatch/codec.hpp"
#include "ampwatch/topiclog.hpp"

namespace ampwatch::alerting {

enum class SinkKind { stdout_sink, log_file, webhook };
std::string_view to_string(SinkKind k) noexcept;

struct SinkSpec {
    SinkKind kind = SinkKind::stdout_sink;
    std::string path;
    std::string url;
    /// Optional header whose value is read from the environment variable
    /// auth_env at dispatch time.
    std::string auth_header;
    std::string auth_env;
};

void validate(const SinkSpec& sink);

enum class Source { anomalies, trend_flags };
std::string_view to_string(Source s) noexcept;
Source parse_source(std::string_view text);

struct AlertRule {
    std::string id;
    Source source = Source::anomalies;
    std::string series_prefix;
    std::optional<double> min_score;
    std::int64_t throttle_ms = 0;
    SinkSpec sink;
    bool enabled = true;
};

void validate(const AlertRule& rule);
json to_json(const AlertRule& rule);
/// Strict parse; `id` overrides the document's id when given.
AlertRule rule_from_json(const json& doc, const std::string& id = {});

struct TriggerEvent {
    Source source = Source::anomalies;
    std::uint64_t offset = 0;
    std::string series;
    std::int64_t ts = 0;
    std::optional<double> score;
    double value_w = 0.0;
    double expected_mean_w = 0.0;
    std::string kind;
};

TriggerEvent event_from_anomaly(const json& payload, std::uint64_t offset = 0);
TriggerEvent event_from_trend_flag(const json& payload, std::uint64_t offset = 0);

bool match(const AlertRule& rule, const TriggerEvent& event);

/// Remembers the last accepted trigger per (rule, series) in event time.
class Throttle {
public:
    bool check(const std::string& rule_id, const std::string& series, std::int64_t now_ms, std::int64_t throttle_ms);
    void record(const std::string& rule_id, const std::string& series, std::int64_t now_ms);
    void forget(const std::string& rule_id);
    std::uint64_t suppressed() const noexcept { return suppressed_; }

private:
    std::map<std::pair<std::string, std::string>, std::int64_t> last_pass_;
    std::uint64_t suppressed_ = 0;
};

enum class DeliveryStatus { pending, delivered, failed };
std::string_view to_string(DeliveryStatus s) noexcept;

struct Alert {
    std::uint64_t id = 0;
    std::string rule_id;
    TriggerEvent event;
    std::int64_t created_ts = 0;
    DeliveryStatus status = DeliveryStatus::pending;
    int attempts = 0;
    std::string detail;
};

json encode(const Alert& a);
std::string alert_message(const TriggerEvent& e);
/// ISO-8601 time, rule id, series, score and message separated by tabs.
std::string format_log_line(const Alert& a);
json webhook_payload(const Alert& a);

struct DeliveryResult {
    DeliveryStatus status = DeliveryStatus::failed;
    int attempts = 0;
    std::string detail;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct DispatchOptions {
    int retries = 3;
    std::chrono::milliseconds base_backoff{1000};
    std::chrono::milliseconds timeout{5000};
    Sleeper sleeper;
    std::ostream* out = nullptr;
    /// Called after every webhook attempt with (attempt number, HTTP status or -1).
    std::function<void(int, int)> on_attempt;
};

DeliveryResult dispatch(const Alert& alert, const SinkSpec& sink, const DispatchOptions& opts);

/// Fixed worker threads with one bounded queue each; tasks with the same
/// key always run on the same worker, in submission order.
class WorkerPool {
public:
    WorkerPool(std::size_t workers, std::size_t queue_capacity);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    void submit(const std::string& key, std::function<void()> task);
    void drain();

private:
    struct Worker {
        std::deque<std::function<void()>> queue;
        bool busy = false;
        std::thread thread;
    };
    void loop(Worker& w);

    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t capacity_;
    bool stopping_ = false;
    std::vector<std::unique_ptr<Worker>> workers_;
};

struct AlertMetrics {
    std::uint64_t evaluated = 0;
    std::uint64_t matched = 0;
    std::uint64_t suppressed = 0;
    std::uint64_t accepted = 0;
    std::uint64_t delivered = 0;
    std::uint64_t failed = 0;
};

struct AlertEngineOptions {
    std::filesystem::path rules_file;
    std::filesystem::path cursor_file;
    DispatchOptions dispatch;
    std::size_t workers = 2;
    std::size_t queue_capacity = 1024;
    std::size_t keep_alerts = 1000;
};

/// Evaluates rules over the anomalies and trend-flags topics, appends one
/// record per accepted trigger to "alerts" and hands delivery to the pool.
class AlertEngine {
public:
    AlertEngine(topiclog::TopicLog& log, AlertEngineOptions options);
    ~AlertEngine();

    /// Returns true when the rule was created, false when replaced.
    bool put_rule(AlertRule rule);
    void delete_rule(const std::string& id);
    std::vector<AlertRule> rules() const;

    /// Consumes everything currently in the source topics.
    std::size_t process();
    void drain();

    AlertMetrics metrics() const;
    std::vector<Alert> recent_alerts(std::size_t limit) const;

private:
    void persist_rules() const;
    void persist_cursor() const;
    void handle(const TriggerEvent& e);

    topiclog::TopicLog& log_;
    AlertEngineOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, AlertRule> rules_;
    Throttle throttle_;
    topiclog::Cursor anomalies_;
    topiclog::Cursor trend_flags_;
    AlertMetrics metrics_;
    std::deque<std::shared_ptr<Alert>> alerts_;
    std::uint64_t next_alert_id_ = 0;
    std::vector<std::pair<std::string, std::function<void()>>> jobs_;
    WorkerPool pool_;
};

}  // namespace ampwatch::alerting
