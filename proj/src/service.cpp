#include "ampwatch/service.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>

#include "ampwatch/correlation.hpp"
#include "ampwatch/forecast.hpp"

namespace ampwatch {

namespace {

constexpr std::int64_t kAllFrom = std::numeric_limits<std::int64_t>::min() / 4;
constexpr std::int64_t kAllTo = std::numeric_limits<std::int64_t>::max() / 4;
constexpr std::size_t kHistogramBins = 20;

json stats_row(const history::WindowRow& r) {
    json row = codec::encode(r.stats);
    row["window_start"] = r.window_start;
    row["avg_w"] = r.stats.count ? json(average(r.stats)) : json(nullptr);
    return row;
}

json limits_json(const pipeline::InputLimits& l) {
    return json{{"measurements", l.measurements}, {"configuration", l.configuration}, {"control", l.control}};
}

std::vector<topiclog::Record> read_all(const topiclog::TopicLog& log, const std::string& topic, std::uint64_t end) {
    std::vector<topiclog::Record> out;
    auto cursor = log.replay(topic);
    while (cursor.position < end) {
        auto batch = log.poll(cursor, static_cast<std::size_t>(std::min<std::uint64_t>(end - cursor.position, 8192)));
        if (batch.empty()) break;
        for (auto& r : batch) out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

DataDirLock::DataDirLock(const std::filesystem::path& data_dir) {
    const auto file = data_dir / "LOCK";
    fd_ = ::open(file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::io, "cannot open " + file.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        fail(ErrorCode::conflict, "data directory " + data_dir.string() + " is in use by another process");
    }
}

DataDirLock::~DataDirLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

Service::Service(ServiceConfig config, ServiceOptions options)
    : config_(std::move(config)), options_(std::move(options)), paths_{config_.data_dir} {
    config_.pipeline.propagate_timezone();
    config_.weekend.tz = config_.pipeline.tz;
    validate(config_.pipeline);
    std::filesystem::create_directories(paths_.root);
    lock_ = std::make_unique<DataDirLock>(paths_.root);
    log_ = std::make_unique<topiclog::TopicLog>(topiclog::LogOptions{paths_.log_dir(), config_.log_flush_every});
    for (const auto& t : {topics::measurements, topics::configuration, topics::control, topics::trend_flags,
                          topics::alerts}) {
        log_->ensure_topic(t);
    }
    registry_ = std::make_unique<registry::Registry>(log_.get(), paths_.hierarchies());
    pipeline_ = std::make_unique<pipeline::Pipeline>(*log_, config_.pipeline);

    alerting::AlertEngineOptions ao;
    ao.rules_file = paths_.alert_rules();
    ao.cursor_file = paths_.alert_cursor();
    ao.dispatch = options_.dispatch;
    ao.workers = config_.alert_workers;
    ao.queue_capacity = config_.alert_queue_capacity;
    alerts_ = std::make_unique<alerting::AlertEngine>(*log_, std::move(ao));

    for (const auto& r : read_all(*log_, topics::trend_flags, log_->end_offset(topics::trend_flags))) {
        last_trend_flag_[r.key] = r.payload;
    }

    if (const auto n = log_->end_offset(topics::control); n > 0) {
        flushed_at_ = codec::decode_control(codec::parse(log_->at(topics::control, n - 1).payload)).at;
    }
    startup_ends_ = pipeline::current_ends(*log_);
    idle_end_ = startup_ends_.measurements;
    idle_since_ = std::chrono::steady_clock::now();
    if (options_.background) {
        worker_ = std::thread([this] { background_loop(); });
    } else {
        sync();
    }
}

Service::~Service() {
    {
        std::lock_guard lock(wake_mu_);
        stopping_ = true;
    }
    wake_.notify_all();
    if (worker_.joinable()) worker_.join();
    if (alerts_) alerts_->drain();
    if (log_) log_->flush();
}

void Service::pump() {
    std::lock_guard driver(pump_mu_);
    pipeline::InputLimits target;
    {
        std::lock_guard in(input_mu_);
        target = pipeline::current_ends(*log_);
    }
    auto processed = pipeline_->processed();
    while (!(processed == target)) {
        const std::uint64_t m = options_.chunk == 0
                                    ? target.measurements
                                    : std::min(target.measurements, processed.measurements + options_.chunk);
        const pipeline::InputLimits next{m, target.configuration, target.control};
        {
            std::unique_lock lock(state_mu_);
            pipeline_->run_to(next);
        }
        processed = next;
    }
    if (!ready_ && processed.measurements >= startup_ends_.measurements &&
        processed.configuration >= startup_ends_.configuration && processed.control >= startup_ends_.control) {
        ready_ = true;
    }
}

void Service::sync() {
    pump();
    alerts_->process();
}

void Service::background_loop() {
    const auto interval = std::chrono::milliseconds(config_.retention_interval_ms);
    auto next_retention = std::chrono::steady_clock::now() + interval;
    for (;;) {
        if (interval.count() > 0 && std::chrono::steady_clock::now() >= next_retention) {
            next_retention += interval;
            const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::system_clock::now().time_since_epoch());
            retention(now.count());
        }
        if (failure_.empty()) {
            try {
                sync();
            } catch (const std::exception& e) {
                std::unique_lock state(state_mu_);
                failure_ = e.what();
                std::clog << "pipeline stopped: " << failure_ << '\n';
            }
            idle_flush(std::chrono::steady_clock::now());
        }
        std::unique_lock lock(wake_mu_);
        if (wake_.wait_for(lock, options_.poll_interval, [&] { return stopping_; })) return;
    }
}

void Service::idle_flush(std::chrono::steady_clock::time_point now) {
    if (config_.idle_flush_ms <= 0) return;
    const auto end = log_->end_offset(topics::measurements);
    if (end != idle_end_) {
        idle_end_ = end;
        idle_since_ = now;
        return;
    }
    if (end > flushed_at_ && now - idle_since_ >= std::chrono::milliseconds(config_.idle_flush_ms)) flush();
}

json Service::status() const {
    std::shared_lock lock(state_mu_);
    json doc{{"ready", ready_.load()},
             {"processed", limits_json(pipeline_->processed())},
             {"ends", limits_json(pipeline::current_ends(*log_))}};
    if (!failure_.empty()) doc["error"] = failure_;
    const auto& a = pipeline_->aggregator().metrics();
    const auto& d = pipeline_->detector().metrics();
    const auto am = alerts_->metrics();
    doc["metrics"] = {{"aggregation",
                       {{"processed", a.processed}, {"late_drops", a.late_drops}, {"unassigned", a.unassigned}}},
                      {"stats", {{"updates", pipeline_->stats().metrics().updates},
                                 {"snapshots", pipeline_->stats().metrics().snapshots}}},
                      {"anomaly",
                       {{"evaluated", d.evaluated}, {"events", d.events}, {"constant_flags", d.constant_flags},
                        {"residual_events", d.residual_events}, {"insufficient_data", d.insufficient_data}}},
                      {"forecast", {{"published", pipeline_->forecaster().published()}}},
                      {"alerting",
                       {{"matched", am.matched}, {"suppressed", am.suppressed}, {"accepted", am.accepted},
                        {"delivered", am.delivered}, {"failed", am.failed}}}};
    return doc;
}

std::uint64_t Service::append(const Measurement& m) {
    std::lock_guard in(input_mu_);
    const auto offset = log_->append(topics::measurements, m.sensor.str(), m.ts.epoch_ms, codec::measurement_payload(m));
    wake_.notify_all();
    return offset;
}

std::size_t Service::append(const std::vector<Measurement>& ms) {
    {
        std::lock_guard in(input_mu_);
        for (const auto& m : ms) {
            log_->append(topics::measurements, m.sensor.str(), m.ts.epoch_ms, codec::measurement_payload(m));
        }
    }
    wake_.notify_all();
    return ms.size();
}

std::uint64_t Service::flush() {
    std::lock_guard in(input_mu_);
    const auto at = log_->end_offset(topics::measurements);
    pipeline_->request_flush();
    flushed_at_ = at;
    wake_.notify_all();
    return at;
}

void Service::with_input_lock(const std::function<void(topiclog::TopicLog&)>& fn) {
    std::lock_guard in(input_mu_);
    fn(*log_);
}

void Service::require_series(const std::string& series) const {
    if (!pipeline_->history().has_series(series)) fail(ErrorCode::not_found, "unknown series '" + series + "'");
}

json Service::series_list() const {
    std::shared_lock lock(state_mu_);
    json out = json::array();
    for (const auto& s : pipeline_->history().series()) {
        out.push_back({{"id", s}, {"kind", s.find(':') == std::string::npos ? "sensor" : "group"}});
    }
    return json{{"series", out}};
}

json Service::windows(const std::string& series, std::int64_t resolution_ms, std::int64_t from_ms,
                      std::int64_t to_ms) const {
    std::shared_lock lock(state_mu_);
    const auto& h = pipeline_->history();
    h.require_resolution(resolution_ms);
    require_series(series);
    json rows = json::array();
    for (const auto& r : h.query_range(series, resolution_ms, from_ms, to_ms)) rows.push_back(stats_row(r));
    return json{{"series", series}, {"resolution_ms", resolution_ms}, {"rows", rows}};
}

json Service::stats(const std::string& series, stats::AttributeKind kind) const {
    std::shared_lock lock(state_mu_);
    const auto& engine = pipeline_->stats();
    const auto known = engine.series();
    if (std::find(known.begin(), known.end(), series) == known.end()) {
        fail(ErrorCode::not_found, "no statistics for series '" + series + "'");
    }
    json buckets = json::array();
    std::size_t i = 0;
    for (const auto& b : engine.snapshot(series, kind)) {
        buckets.push_back({{"index", i++},
                           {"count", b.count},
                           {"mean_w", b.mean_w},
                           {"stddev_w", b.stddev()},
                           {"max_w", b.count ? json(b.max_w) : json(nullptr)}});
    }
    return json{{"series", series}, {"kind", stats::to_string(kind)}, {"buckets", buckets}};
}

json Service::latest(const std::string& series) const {
    std::shared_lock lock(state_mu_);
    const auto p = pipeline_->history().latest(series);
    if (!p) fail(ErrorCode::not_found, "unknown series '" + series + "'");
    return json{{"series", series}, {"ts", p->ts_ms}, {"value_w", p->value_w}};
}

json Service::anomalies(const anomaly::AnomalyQuery& q, std::size_t limit) const {
    std::shared_lock lock(state_mu_);
    auto events = pipeline_->detector().query_anomalies(q);
    if (events.size() > limit) events.erase(events.begin(), events.end() - static_cast<std::ptrdiff_t>(limit));
    json out = json::array();
    for (const auto& e : events) out.push_back(anomaly::encode(e));
    return json{{"anomalies", out}};
}

json Service::forecasts(const std::string& series, std::int64_t from_ms, std::int64_t to_ms) const {
    std::shared_lock lock(state_mu_);
    require_series(series);
    json out = json::array();
    for (const auto& p : pipeline_->forecaster().forecasts(series, from_ms, to_ms)) out.push_back(forecast::encode(p));
    return json{{"series", series}, {"forecasts", out}};
}

json Service::backtest(const std::string& series, const std::string& model, std::int64_t from_ms,
                       std::int64_t to_ms) const {
    std::shared_lock lock(state_mu_);
    const auto r = forecast::backtest(pipeline_->history(), series, model, from_ms, to_ms, 1, config_.pipeline.tz);
    return json{{"series", series}, {"model", model}, {"mae", r.mae}, {"count", r.count}};
}

json Service::correlation(const std::string& a, const std::string& b, std::int64_t resolution_ms, std::int64_t from_ms,
                          std::int64_t to_ms) const {
    std::shared_lock lock(state_mu_);
    const auto pairs = correlation::align(pipeline_->history(), a, b, resolution_ms, from_ms, to_ms);
    json rows = json::array();
    for (const auto& p : pairs.pairs) rows.push_back({p.window_start, p.avg_a, p.avg_b});
    json doc{{"a", a}, {"b", b}, {"resolution_ms", resolution_ms}, {"n", pairs.pairs.size()}, {"pairs", rows}};
    try {
        doc["r"] = correlation::pearson(pairs);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::undefined) throw;
        doc["r"] = nullptr;
        doc["reason"] = e.what();
    }
    return doc;
}

json Service::trend(const std::string& series, std::int64_t from_ms, std::int64_t to_ms,
                    std::optional<double> slope_threshold, std::optional<std::size_t> min_points) {
    std::vector<correlation::WeekendPoint> points;
    {
        std::shared_lock lock(state_mu_);
        require_series(series);
        points = correlation::weekend_idle_series(pipeline_->history(), series, from_ms, to_ms, config_.weekend);
    }
    const double threshold = slope_threshold.value_or(config_.trend.slope_threshold);
    const std::size_t min_n = min_points.value_or(config_.trend.min_points);
    json pts = json::array();
    for (const auto& p : points) {
        pts.push_back({{"index", p.index},
                       {"span_start", p.span_start},
                       {"avg_w", p.avg_w},
                       {"resolution_ms", p.resolution_ms},
                       {"windows", p.windows}});
    }
    json doc{{"series", series}, {"points", pts}, {"threshold", threshold}, {"min_points", min_n}};
    if (points.size() < 2) {
        doc["trend"] = nullptr;
        return doc;
    }
    const auto t = correlation::trend(points, threshold, min_n);
    doc["trend"] = {{"slope", t.slope}, {"intercept", t.intercept}, {"n", t.n}, {"flagged", t.flagged}};
    if (t.flagged) {
        json flag{{"series", series},
                  {"ts", points.back().span_start + kDayMs},
                  {"slope", t.slope},
                  {"intercept", t.intercept},
                  {"n", t.n},
                  {"threshold", threshold},
                  {"first_index", points.front().index},
                  {"last_index", points.back().index}};
        const std::string payload = codec::dump(flag);
        std::lock_guard lock(trend_mu_);
        auto& last = last_trend_flag_[series];
        if (last != payload) {
            log_->append(topics::trend_flags, series, flag["ts"].get<std::int64_t>(), payload);
            last = payload;
            wake_.notify_all();
        }
    }
    return doc;
}

json Service::hierarchies() const {
    json out = json::array();
    for (const auto& h : registry_->hierarchies()) out.push_back(registry::to_json(h));
    return json{{"hierarchies", out}};
}

std::string Service::series_for_node(const registry::Hierarchy& h, const std::string& node) const {
    registry::HierarchyIndex idx(h);
    if (!idx.contains_node(node)) fail(ErrorCode::not_found, "unknown node '" + node + "' in '" + h.name + "'");
    return idx.node(node).is_leaf ? node : group_series_id(h.name, node);
}

json Service::summary(const std::string& hierarchy, const std::string& node) const {
    const auto h = registry_->find(hierarchy);
    if (!h) fail(ErrorCode::not_found, "unknown hierarchy '" + hierarchy + "'");
    const std::string series = series_for_node(*h, node);

    std::shared_lock lock(state_mu_);
    const auto& hist = pipeline_->history();
    const std::int64_t w = hist.finest_window_ms();
    json doc{{"hierarchy", hierarchy}, {"node", node}, {"series", series}, {"latest", nullptr}};
    json deltas{{"1h", nullptr}, {"24h", nullptr}, {"7d", nullptr}};
    json histogram = nullptr;
    json children = json::array();

    const auto rows = hist.has_series(series) ? hist.query_range(series, w, kAllFrom, kAllTo)
                                              : std::vector<history::WindowRow>{};
    if (!rows.empty()) {
        const auto& last = rows.back();
        const double latest_avg = average(last.stats);
        const std::int64_t end = last.window_start + w;
        doc["latest"] = {{"window_start", last.window_start}, {"avg_w", latest_avg}};
        if (auto p = hist.latest(series)) doc["latest"]["value_w"] = p->value_w, doc["latest"]["ts"] = p->ts_ms;

        auto trailing = [&](std::int64_t span) {
            PowerStats total;
            for (auto it = rows.rbegin(); it != rows.rend() && it->window_start >= end - span; ++it) {
                total = stats_merge(total, it->stats);
            }
            return latest_avg - average(total);
        };
        deltas = {{"1h", trailing(kHourMs)}, {"24h", trailing(kDayMs)}, {"7d", trailing(kWeekMs)}};

        std::vector<double> avgs;
        for (auto it = rows.rbegin(); it != rows.rend() && it->window_start >= end - kWeekMs; ++it) {
            avgs.push_back(average(it->stats));
        }
        const auto [lo, hi] = std::minmax_element(avgs.begin(), avgs.end());
        const double width = (*hi - *lo) / static_cast<double>(kHistogramBins);
        std::vector<std::uint64_t> counts(kHistogramBins, 0);
        for (double v : avgs) {
            std::size_t bin = width > 0.0 ? static_cast<std::size_t>((v - *lo) / width) : 0;
            ++counts[std::min(bin, kHistogramBins - 1)];
        }
        histogram = {{"min_w", *lo}, {"max_w", *hi}, {"bin_width_w", width}, {"counts", counts}};
    }

    if (series != node) {
        if (auto agg = pipeline_->aggregator().latest(hierarchy, node)) {
            double total = 0.0;
            for (const auto& [_, v] : agg->children) total += v;
            for (const auto& [child, v] : agg->children) {
                children.push_back({{"id", child}, {"value_w", v}, {"share", total > 0.0 ? json(v / total) : json(nullptr)}});
            }
            doc["children_window_start"] = agg->window_start;
        }
    }
    doc["deltas"] = deltas;
    doc["histogram"] = histogram;
    doc["children"] = children;
    return doc;
}

json Service::put_hierarchy(const std::string& name, const json& body) {
    if (!body.is_object()) fail(ErrorCode::validation, "hierarchy body must be an object");
    json doc = body;
    std::optional<std::uint64_t> expected;
    if (doc.contains("version")) {
        if (!doc["version"].is_number_integer() || doc["version"].get<std::int64_t>() < 0) fail(ErrorCode::validation, "version must be a non-negative integer");
        expected = doc["version"].get<std::uint64_t>();
        doc.erase("version");
    }
    if (!doc.contains("name")) doc["name"] = name;
    if (doc["name"] != name) fail(ErrorCode::validation, "hierarchy name in body does not match path");
    auto h = registry::hierarchy_from_json(doc);
    std::uint64_t version = 0;
    {
        std::lock_guard in(input_mu_);
        version = registry_->upsert_hierarchy(std::move(h), expected);
    }
    wake_.notify_all();
    return json{{"name", name}, {"version", version}};
}

json Service::put_alert_rule(const std::string& id, const json& body) {
    auto rule = alerting::rule_from_json(body, id);
    const bool created = alerts_->put_rule(rule);
    return json{{"rule", alerting::to_json(rule)}, {"created", created}};
}

void Service::delete_alert_rule(const std::string& id) { alerts_->delete_rule(id); }

json Service::alert_rules() const {
    json out = json::array();
    for (const auto& r : alerts_->rules()) out.push_back(alerting::to_json(r));
    return json{{"rules", out}};
}

json Service::alerts(std::size_t limit) const {
    json out = json::array();
    for (const auto& a : alerts_->recent_alerts(limit)) {
        json doc = alerting::encode(a);
        doc["status"] = alerting::to_string(a.status);
        doc["attempts"] = a.attempts;
        if (!a.detail.empty()) doc["detail"] = a.detail;
        out.push_back(std::move(doc));
    }
    const auto m = alerts_->metrics();
    return json{{"alerts", out},
                {"metrics",
                 {{"matched", m.matched}, {"suppressed", m.suppressed}, {"accepted", m.accepted},
                  {"delivered", m.delivered}, {"failed", m.failed}}}};
}

json Service::retention(std::int64_t now_ms) {
    std::unique_lock lock(state_mu_);
    const auto deleted = pipeline_->history().apply_retention(now_ms);
    return json{{"now", now_ms}, {"deleted", deleted}};
}

json Service::replay() {
    bool expected = false;
    if (!replaying_.compare_exchange_strong(expected, true)) fail(ErrorCode::conflict, "a replay is already running");
    struct Reset {
        std::atomic<bool>& flag;
        ~Reset() { flag = false; }
    } reset{replaying_};

    const auto started = std::chrono::steady_clock::now();
    topiclog::TopicLog scratch;
    pipeline::InputLimits limits;
    std::map<std::string, std::vector<topiclog::Record>> originals;
    {
        std::shared_lock lock(state_mu_);
        limits = pipeline_->processed();
        const std::pair<const std::string*, std::uint64_t> inputs[] = {
            {&topics::measurements, limits.measurements},
            {&topics::configuration, limits.configuration},
            {&topics::control, limits.control}};
        for (const auto& [topic, end] : inputs) {
            scratch.ensure_topic(*topic);
            for (const auto& r : read_all(*log_, *topic, end)) scratch.append(*topic, r.key, r.ts_ms, r.payload);
        }
        for (const auto& t : pipeline::kDerivedTopics) originals[t] = read_all(*log_, t, log_->end_offset(t));
    }
    if (options_.replay_hook) options_.replay_hook();

    pipeline::Pipeline fresh(scratch, config_.pipeline);
    fresh.run_to(limits);

    bool identical = true;
    json per_topic = json::object();
    for (const auto& [topic, before] : originals) {
        const auto after = read_all(scratch, topic, scratch.end_offset(topic));
        json mismatch = nullptr;
        const std::size_t n = std::min(before.size(), after.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (before[i].payload != after[i].payload || before[i].key != after[i].key ||
                before[i].ts_ms != after[i].ts_ms) {
                mismatch = i;
                break;
            }
        }
        if (mismatch.is_null() && before.size() != after.size()) mismatch = n;
        identical = identical && mismatch.is_null();
        per_topic[topic] = {{"original", before.size()}, {"replayed", after.size()}, {"first_mismatch", mismatch}};
    }
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    return json{{"identical", identical}, {"inputs", limits_json(limits)}, {"topics", per_topic},
                {"duration_ms", elapsed}};
}

}  // namespace ampwatch
