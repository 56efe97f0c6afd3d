#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include "ampwatch/alerting.hpp"
#include "ampwatch/config.hpp"
#include "ampwatch/pipeline.hpp"
#include "ampwatch/registry.hpp"
#include "ampwatch/topiclog.hpp"

namespace ampwatch {

/// Exclusive advisory lock on <data_dir>/LOCK for the lifetime of the object.
class DataDirLock {
public:
    explicit DataDirLock(const std::filesystem::path& data_dir);
    ~DataDirLock();
    DataDirLock(const DataDirLock&) = delete;
    DataDirLock& operator=(const DataDirLock&) = delete;

private:
    int fd_ = -1;
};

/// Layout of a data directory.
struct DataPaths {
    std::filesystem::path root;

    std::filesystem::path log_dir() const { return root / "log"; }
    std::filesystem::path hierarchies() const { return root / "hierarchies.json"; }
    std::filesystem::path alert_rules() const { return root / "alert-rules.json"; }
    std::filesystem::path alert_cursor() const { return root / "alerting-cursor.json"; }
};

struct ServiceOptions {
    /// Pump consumers on a background thread; otherwise callers use sync().
    bool background = true;
    std::chrono::milliseconds poll_interval{50};
    /// Measurements per exclusive pipeline step, so readers interleave.
    std::uint64_t chunk = 4096;
    alerting::DispatchOptions dispatch;
    /// Invoked by replay() after the inputs were copied (test hook).
    std::function<void()> replay_hook;
};

/// One process hosting the log, the registry, every analytic consumer and
/// the alert engine over a data directory. Query methods return the API
/// documents served by the HTTP layer.
class Service {
public:
    explicit Service(ServiceConfig config, ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Runs every consumer and the alert engine up to the current topic ends.
    void sync();
    bool ready() const noexcept { return ready_; }
    json status() const;

    std::uint64_t append(const Measurement& m);
    std::size_t append(const std::vector<Measurement>& ms);
    /// Marks the end of input so far: every open window finalizes.
    std::uint64_t flush();
    /// Runs `fn` while no pipeline step or other input append is in progress.
    void with_input_lock(const std::function<void(topiclog::TopicLog&)>& fn);

    json series_list() const;
    json windows(const std::string& series, std::int64_t resolution_ms, std::int64_t from_ms, std::int64_t to_ms) const;
    json stats(const std::string& series, stats::AttributeKind kind) const;
    json latest(const std::string& series) const;
    json anomalies(const anomaly::AnomalyQuery& q, std::size_t limit) const;
    json forecasts(const std::string& series, std::int64_t from_ms, std::int64_t to_ms) const;
    json backtest(const std::string& series, const std::string& model, std::int64_t from_ms, std::int64_t to_ms) const;
    json correlation(const std::string& a, const std::string& b, std::int64_t resolution_ms, std::int64_t from_ms,
                     std::int64_t to_ms) const;
    json trend(const std::string& series, std::int64_t from_ms, std::int64_t to_ms,
               std::optional<double> slope_threshold, std::optional<std::size_t> min_points);
    json hierarchies() const;
    json summary(const std::string& hierarchy, const std::string& node) const;

    json put_hierarchy(const std::string& name, const json& body);
    json put_alert_rule(const std::string& id, const json& body);
    void delete_alert_rule(const std::string& id);
    json alert_rules() const;
    json alerts(std::size_t limit) const;
    json retention(std::int64_t now_ms);
    json replay();

    topiclog::TopicLog& log() noexcept { return *log_; }
    const pipeline::Pipeline& pipeline() const noexcept { return *pipeline_; }
    alerting::AlertEngine& alert_engine() noexcept { return *alerts_; }
    const ServiceConfig& config() const noexcept { return config_; }

private:
    void pump();
    void background_loop();
    void idle_flush(std::chrono::steady_clock::time_point now);
    std::string series_for_node(const registry::Hierarchy& h, const std::string& node) const;
    void require_series(const std::string& series) const;

    ServiceConfig config_;
    ServiceOptions options_;
    DataPaths paths_;
    std::unique_ptr<DataDirLock> lock_;
    std::unique_ptr<topiclog::TopicLog> log_;
    std::unique_ptr<registry::Registry> registry_;
    std::unique_ptr<pipeline::Pipeline> pipeline_;
    std::unique_ptr<alerting::AlertEngine> alerts_;

    mutable std::shared_mutex state_mu_;
    std::mutex input_mu_;
    std::mutex pump_mu_;
    std::mutex trend_mu_;
    std::map<std::string, std::string> last_trend_flag_;

    std::atomic<bool> ready_{false};
    std::atomic<bool> replaying_{false};
    std::string failure_;
    pipeline::InputLimits startup_ends_;
    std::atomic<std::uint64_t> flushed_at_{0};
    std::uint64_t idle_end_ = 0;
    std::chrono::steady_clock::time_point idle_since_;

    std::mutex wake_mu_;
    std::condition_variable wake_;
    bool stopping_ = false;
    std::thread worker_;
};

}  // namespace ampwatch
