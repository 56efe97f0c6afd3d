#include "ampwatch/alerting.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>

#include <httplib.h>

namespace ampwatch::alerting {

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

std::optional<ParsedUrl> parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:.]+\])(:[0-9]{1,5})?(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) return std::nullopt;
    return ParsedUrl{m[1].str() + "://" + m[2].str() + m[3].str(), m[4].matched ? m[4].str() : "/"};
}

std::string format_number(double v) {
    char buf[64];
    const double rounded = std::round(v * 1000.0) / 1000.0;
    const auto r = std::to_chars(buf, buf + sizeof buf, rounded == 0.0 ? 0.0 : rounded);
    return std::string(buf, r.ptr);
}

void write_atomically(const std::filesystem::path& file, const std::string& text) {
    auto tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
        out << text;
        if (!out.flush()) fail(ErrorCode::io, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

}  // namespace

std::string_view to_string(SinkKind k) noexcept {
    switch (k) {
    case SinkKind::stdout_sink: return "stdout";
    case SinkKind::log_file: return "log-file";
    case SinkKind::webhook: return "webhook";
    }
    return "";
}

std::string_view to_string(Source s) noexcept {
    return s == Source::anomalies ? "anomalies" : "trend-flags";
}

Source parse_source(std::string_view text) {
    if (text == "anomalies") return Source::anomalies;
    if (text == "trend-flags") return Source::trend_flags;
    fail(ErrorCode::validation, "source must be 'anomalies' or 'trend-flags', got '" + std::string(text) + "'");
}

std::string_view to_string(DeliveryStatus s) noexcept {
    switch (s) {
    case DeliveryStatus::pending: return "pending";
    case DeliveryStatus::delivered: return "delivered";
    case DeliveryStatus::failed: return "failed";
    }
    return "";
}

void validate(const SinkSpec& sink) {
    switch (sink.kind) {
    case SinkKind::stdout_sink: break;
    case SinkKind::log_file:
        if (sink.path.empty()) fail(ErrorCode::validation, "log-file sink needs a path");
        break;
    case SinkKind::webhook:
        if (!parse_url(sink.url)) fail(ErrorCode::validation, "webhook url must be http(s): '" + sink.url + "'");
        if (sink.auth_header.empty() != sink.auth_env.empty()) {
            fail(ErrorCode::validation, "webhook auth needs both header name and env variable");
        }
        break;
    }
}

void validate(const AlertRule& rule) {
    if (rule.id.empty() || rule.id.size() > 128) fail(ErrorCode::validation, "rule id must be 1..128 characters");
    for (char c : rule.id) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
            fail(ErrorCode::validation, "rule id '" + rule.id + "' has invalid characters");
        }
    }
    if (rule.throttle_ms < 0) fail(ErrorCode::validation, "throttle_ms must be >= 0");
    if (rule.min_score && rule.source != Source::anomalies) {
        fail(ErrorCode::validation, "min_score applies to anomalies rules only");
    }
    validate(rule.sink);
}

json to_json(const AlertRule& rule) {
    json sink{{"kind", to_string(rule.sink.kind)}};
    if (rule.sink.kind == SinkKind::log_file) sink["path"] = rule.sink.path;
    if (rule.sink.kind == SinkKind::webhook) {
        sink["url"] = rule.sink.url;
        if (!rule.sink.auth_header.empty()) {
            sink["auth_header"] = rule.sink.auth_header;
            sink["auth_env"] = rule.sink.auth_env;
        }
    }
    return json{{"id", rule.id},
                {"source", to_string(rule.source)},
                {"series_prefix", rule.series_prefix},
                {"min_score", rule.min_score ? json(*rule.min_score) : json(nullptr)},
                {"throttle_ms", rule.throttle_ms},
                {"sink", sink},
                {"enabled", rule.enabled}};
}

AlertRule rule_from_json(const json& doc, const std::string& id) {
    if (!doc.is_object()) fail(ErrorCode::validation, "alert rule must be an object");
    codec::require_known_fields(doc, {"id", "source", "series_prefix", "min_score", "throttle_ms", "sink", "enabled"},
                                "alert rule");
    AlertRule r;
    try {
        r.id = doc.contains("id") ? doc["id"].get<std::string>() : id;
        if (!id.empty() && r.id != id) fail(ErrorCode::validation, "rule id in body does not match path");
        r.source = parse_source(doc.value("source", std::string("anomalies")));
        r.series_prefix = doc.value("series_prefix", std::string());
        if (doc.contains("min_score") && !doc["min_score"].is_null()) r.min_score = doc["min_score"].get<double>();
        r.throttle_ms = doc.value("throttle_ms", std::int64_t{0});
        r.enabled = doc.value("enabled", true);
        if (!doc.contains("sink")) fail(ErrorCode::validation, "alert rule needs a sink");
        const json& s = doc["sink"];
        if (!s.is_object()) fail(ErrorCode::validation, "sink must be an object");
        codec::require_known_fields(s, {"kind", "path", "url", "auth_header", "auth_env"}, "sink");
        const std::string kind = s.at("kind").get<std::string>();
        if (kind == "stdout") {
            r.sink.kind = SinkKind::stdout_sink;
        } else if (kind == "log-file") {
            r.sink.kind = SinkKind::log_file;
        } else if (kind == "webhook") {
            r.sink.kind = SinkKind::webhook;
        } else {
            fail(ErrorCode::validation, "unknown sink kind '" + kind + "'");
        }
        r.sink.path = s.value("path", std::string());
        r.sink.url = s.value("url", std::string());
        r.sink.auth_header = s.value("auth_header", std::string());
        r.sink.auth_env = s.value("auth_env", std::string());
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("malformed alert rule: ") + e.what());
    }
    validate(r);
    return r;
}

TriggerEvent event_from_anomaly(const json& p, std::uint64_t offset) {
    TriggerEvent e;
    e.source = Source::anomalies;
    e.offset = offset;
    e.series = p.at("series").get<std::string>();
    e.ts = p.at("ts").get<std::int64_t>();
    if (!p.at("score").is_null()) e.score = p["score"].get<double>();
    e.value_w = p.at("value_w").get<double>();
    e.expected_mean_w = p.at("expected_mean_w").get<double>();
    e.kind = p.at("detector").get<std::string>();
    return e;
}

TriggerEvent event_from_trend_flag(const json& p, std::uint64_t offset) {
    TriggerEvent e;
    e.source = Source::trend_flags;
    e.offset = offset;
    e.series = p.at("series").get<std::string>();
    e.ts = p.at("ts").get<std::int64_t>();
    e.score = p.at("slope").get<double>();
    e.value_w = p.at("slope").get<double>();
    e.expected_mean_w = p.at("threshold").get<double>();
    e.kind = "weekend-trend";
    return e;
}

bool match(const AlertRule& rule, const TriggerEvent& event) {
    if (!rule.enabled || rule.source != event.source) return false;
    if (!event.series.starts_with(rule.series_prefix)) return false;
    if (rule.min_score && (!event.score || *event.score < *rule.min_score)) return false;
    return true;
}

bool Throttle::check(const std::string& rule_id, const std::string& series, std::int64_t now_ms,
                     std::int64_t throttle_ms) {
    auto it = last_pass_.find({rule_id, series});
    if (throttle_ms > 0 && it != last_pass_.end() && std::abs(now_ms - it->second) < throttle_ms) {
        ++suppressed_;
        return false;
    }
    record(rule_id, series, now_ms);
    return true;
}

void Throttle::record(const std::string& rule_id, const std::string& series, std::int64_t now_ms) {
    last_pass_[{rule_id, series}] = now_ms;
}

void Throttle::forget(const std::string& rule_id) {
    std::erase_if(last_pass_, [&](const auto& kv) { return kv.first.first == rule_id; });
}

std::string alert_message(const TriggerEvent& e) {
    if (e.source == Source::trend_flags) {
        return "weekend idle consumption rising " + format_number(e.value_w) + " W/week";
    }
    return e.kind + " anomaly: " + format_number(e.value_w) + " W, expected " + format_number(e.expected_mean_w) +
           " W";
}

json encode(const Alert& a) {
    return json{{"rule_id", a.rule_id},
                {"source", to_string(a.event.source)},
                {"source_offset", a.event.offset},
                {"series", a.event.series},
                {"ts", a.event.ts},
                {"score", a.event.score ? json(*a.event.score) : json(nullptr)},
                {"value_w", a.event.value_w},
                {"expected_mean_w", a.event.expected_mean_w},
                {"kind", a.event.kind},
                {"created_ts", a.created_ts},
                {"message", alert_message(a.event)}};
}

std::string format_log_line(const Alert& a) {
    return format_iso8601(a.created_ts) + '\t' + a.rule_id + '\t' + a.event.series + '\t' +
           (a.event.score ? format_number(*a.event.score) : std::string("-")) + '\t' + alert_message(a.event);
}

json webhook_payload(const Alert& a) {
    return json{{"rule_id", a.rule_id},
                {"series", a.event.series},
                {"ts", a.event.ts},
                {"score", a.event.score ? json(*a.event.score) : json(nullptr)},
                {"value_w", a.event.value_w},
                {"expected_mean_w", a.event.expected_mean_w},
                {"kind", a.event.kind}};
}

DeliveryResult dispatch(const Alert& alert, const SinkSpec& sink, const DispatchOptions& opts) {
    DeliveryResult r;
    switch (sink.kind) {
    case SinkKind::stdout_sink: {
        std::ostream& out = opts.out ? *opts.out : std::cout;
        out << format_log_line(alert) << '\n';
        out.flush();
        r.attempts = 1;
        r.status = out ? DeliveryStatus::delivered : DeliveryStatus::failed;
        return r;
    }
    case SinkKind::log_file: {
        r.attempts = 1;
        std::ofstream out(sink.path, std::ios::app);
        if (out) out << format_log_line(alert) << '\n';
        if (!out || !out.flush()) {
            r.detail = "cannot append to " + sink.path;
            return r;
        }
        r.status = DeliveryStatus::delivered;
        return r;
    }
    case SinkKind::webhook: break;
    }

    const auto url = parse_url(sink.url);
    if (!url) {
        r.detail = "invalid url";
        return r;
    }
    httplib::Headers headers;
    if (!sink.auth_header.empty()) {
        if (const char* v = std::getenv(sink.auth_env.c_str())) headers.emplace(sink.auth_header, v);
    }
    const std::string body = codec::dump(webhook_payload(alert));
    auto backoff = opts.base_backoff;
    for (int attempt = 1; attempt <= opts.retries + 1; ++attempt) {
        int status = -1;
        try {
            httplib::Client client(url->scheme_host_port);
            const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout).count();
            client.set_connection_timeout(secs > 0 ? secs : 1);
            client.set_read_timeout(secs > 0 ? secs : 1);
            if (auto res = client.Post(url->path, headers, body, "application/json")) {
                status = res->status;
            } else {
                r.detail = httplib::to_string(res.error());
            }
        } catch (const std::exception& e) {
            r.detail = e.what();
        }
        r.attempts = attempt;
        if (opts.on_attempt) opts.on_attempt(attempt, status);
        if (status >= 200 && status < 300) {
            r.status = DeliveryStatus::delivered;
            r.detail.clear();
            return r;
        }
        if (status >= 0) r.detail = "HTTP " + std::to_string(status);
        std::clog << "alert " << alert.rule_id << " webhook attempt " << attempt << " failed: " << r.detail << '\n';
        if (attempt <= opts.retries) {
            if (opts.sleeper) {
                opts.sleeper(backoff);
            } else {
                std::this_thread::sleep_for(backoff);
            }
            backoff *= 2;
        }
    }
    r.status = DeliveryStatus::failed;
    return r;
}

WorkerPool::WorkerPool(std::size_t workers, std::size_t queue_capacity) : capacity_(std::max<std::size_t>(1, queue_capacity)) {
    if (workers == 0) workers = 1;
    for (std::size_t i = 0; i < workers; ++i) workers_.push_back(std::make_unique<Worker>());
    for (auto& w : workers_) w->thread = std::thread([this, wp = w.get()] { loop(*wp); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w->thread.join();
}

void WorkerPool::submit(const std::string& key, std::function<void()> task) {
    Worker& w = *workers_[std::hash<std::string>{}(key) % workers_.size()];
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return w.queue.size() < capacity_ || stopping_; });
    if (stopping_) return;
    w.queue.push_back(std::move(task));
    cv_.notify_all();
}

void WorkerPool::drain() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] {
        for (const auto& w : workers_) {
            if (!w->queue.empty() || w->busy) return false;
        }
        return true;
    });
}

void WorkerPool::loop(Worker& w) {
    std::unique_lock lock(mu_);
    for (;;) {
        cv_.wait(lock, [&] { return !w.queue.empty() || stopping_; });
        if (w.queue.empty()) return;
        auto task = std::move(w.queue.front());
        w.queue.pop_front();
        w.busy = true;
        lock.unlock();
        cv_.notify_all();
        try {
            task();
        } catch (const std::exception& e) {
            std::clog << "alert dispatch task failed: " << e.what() << '\n';
        }
        lock.lock();
        w.busy = false;
        cv_.notify_all();
    }
}

AlertEngine::AlertEngine(topiclog::TopicLog& log, AlertEngineOptions options)
    : log_(log), options_(std::move(options)), pool_(options_.workers, options_.queue_capacity) {
    for (const auto& t : {topics::anomalies, topics::trend_flags, topics::alerts}) log_.ensure_topic(t);
    anomalies_ = log_.replay(topics::anomalies);
    trend_flags_ = log_.replay(topics::trend_flags);

    if (!options_.rules_file.empty() && std::filesystem::exists(options_.rules_file)) {
        std::ifstream in(options_.rules_file);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::format, options_.rules_file.string() + ": " + e.what());
        }
        for (const auto& r : doc) {
            auto rule = rule_from_json(r);
            rules_.emplace(rule.id, std::move(rule));
        }
    }
    if (!options_.cursor_file.empty() && std::filesystem::exists(options_.cursor_file)) {
        std::ifstream in(options_.cursor_file);
        try {
            const json doc = json::parse(in);
            anomalies_.position = std::min(doc.at("anomalies").get<std::uint64_t>(), log_.end_offset(topics::anomalies));
            trend_flags_.position =
                std::min(doc.at("trend-flags").get<std::uint64_t>(), log_.end_offset(topics::trend_flags));
        } catch (const json::exception& e) {
            fail(ErrorCode::format, options_.cursor_file.string() + ": " + e.what());
        }
    }
    // Throttle windows survive restarts: rebuild them from published alerts.
    auto cursor = log_.replay(topics::alerts);
    for (;;) {
        auto batch = log_.poll(cursor, 4096);
        if (batch.empty()) break;
        for (const auto& rec : batch) {
            const json a = codec::parse(rec.payload);
            throttle_.record(a.at("rule_id").get<std::string>(), a.at("series").get<std::string>(),
                             a.at("created_ts").get<std::int64_t>());
            next_alert_id_ = rec.offset + 1;
        }
    }
}

AlertEngine::~AlertEngine() { pool_.drain(); }

bool AlertEngine::put_rule(AlertRule rule) {
    validate(rule);
    std::lock_guard lock(mu_);
    const bool created = !rules_.contains(rule.id);
    throttle_.forget(rule.id);
    rules_[rule.id] = std::move(rule);
    persist_rules();
    return created;
}

void AlertEngine::delete_rule(const std::string& id) {
    std::lock_guard lock(mu_);
    if (rules_.erase(id) == 0) fail(ErrorCode::not_found, "unknown alert rule '" + id + "'");
    throttle_.forget(id);
    persist_rules();
}

std::vector<AlertRule> AlertEngine::rules() const {
    std::lock_guard lock(mu_);
    std::vector<AlertRule> out;
    for (const auto& [_, r] : rules_) out.push_back(r);
    return out;
}

void AlertEngine::persist_rules() const {
    if (options_.rules_file.empty()) return;
    json doc = json::array();
    for (const auto& [_, r] : rules_) doc.push_back(to_json(r));
    write_atomically(options_.rules_file, doc.dump(2) + "\n");
}

void AlertEngine::persist_cursor() const {
    if (options_.cursor_file.empty()) return;
    write_atomically(options_.cursor_file,
                     json{{"anomalies", anomalies_.position}, {"trend-flags", trend_flags_.position}}.dump() + "\n");
}

std::size_t AlertEngine::process() {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    for (;;) {
        auto batch = log_.poll(anomalies_, 4096);
        if (batch.empty()) break;
        for (const auto& rec : batch) handle(event_from_anomaly(codec::parse(rec.payload), rec.offset));
        n += batch.size();
    }
    for (;;) {
        auto batch = log_.poll(trend_flags_, 4096);
        if (batch.empty()) break;
        for (const auto& rec : batch) handle(event_from_trend_flag(codec::parse(rec.payload), rec.offset));
        n += batch.size();
    }
    if (n > 0) persist_cursor();
    auto jobs = std::move(jobs_);
    jobs_.clear();
    lock.unlock();
    for (auto& [key, task] : jobs) pool_.submit(key, std::move(task));
    return n;
}

void AlertEngine::handle(const TriggerEvent& e) {
    ++metrics_.evaluated;
    for (const auto& [id, rule] : rules_) {
        if (!match(rule, e)) continue;
        ++metrics_.matched;
        if (!throttle_.check(id, e.series, e.ts, rule.throttle_ms)) {
            ++metrics_.suppressed;
            continue;
        }
        ++metrics_.accepted;
        auto alert = std::make_shared<Alert>();
        alert->id = next_alert_id_++;
        alert->rule_id = id;
        alert->event = e;
        alert->created_ts = e.ts;
        log_.append(topics::alerts, id, e.ts, codec::dump(encode(*alert)));
        alerts_.push_back(alert);
        while (alerts_.size() > options_.keep_alerts) alerts_.pop_front();
        jobs_.emplace_back(id + '\x1f' + e.series, [this, alert, sink = rule.sink] {
            const auto result = dispatch(*alert, sink, options_.dispatch);
            std::lock_guard lock(mu_);
            alert->status = result.status;
            alert->attempts = result.attempts;
            alert->detail = result.detail;
            if (result.status == DeliveryStatus::delivered) {
                ++metrics_.delivered;
            } else {
                ++metrics_.failed;
            }
        });
    }
}

void AlertEngine::drain() { pool_.drain(); }

AlertMetrics AlertEngine::metrics() const {
    std::lock_guard lock(mu_);
    return metrics_;
}

std::vector<Alert> AlertEngine::recent_alerts(std::size_t limit) const {
    std::lock_guard lock(mu_);
    std::vector<Alert> out;
    const std::size_t start = alerts_.size() > limit ? alerts_.size() - limit : 0;
    for (std::size_t i = start; i < alerts_.size(); ++i) out.push_back(*alerts_[i]);
    return out;
}

}  // namespace ampwatch::alerting
