#include "ampwatch/http_api.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include <httplib.h>

namespace ampwatch {

namespace {

constexpr std::int64_t kOpenFrom = std::numeric_limits<std::int64_t>::min() / 4;
constexpr std::int64_t kOpenTo = std::numeric_limits<std::int64_t>::max() / 4;

void send_json(httplib::Response& res, int status, const json& doc) {
    res.status = status;
    res.set_content(doc.dump(), "application/json");
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
}

std::string required(const httplib::Request& req, const char* name) {
    auto v = param(req, name);
    if (!v || v->empty()) fail(ErrorCode::validation, std::string("missing query parameter '") + name + "'");
    return *v;
}

std::int64_t time_param(const httplib::Request& req, const char* name, std::int64_t fallback) {
    auto v = param(req, name);
    return v ? parse_time(*v) : fallback;
}

double number_param(const std::string& text, const char* name) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::validation, std::string("parameter '") + name + "' must be a number");
}

std::size_t count_param(const httplib::Request& req, const char* name, std::size_t fallback) {
    auto v = param(req, name);
    if (!v) return fallback;
    const double d = number_param(*v, name);
    if (d < 0 || d != std::floor(d)) fail(ErrorCode::validation, std::string("parameter '") + name + "' must be a count");
    return static_cast<std::size_t>(d);
}

json body_json(const httplib::Request& req, bool allow_empty) {
    if (req.body.empty()) {
        if (allow_empty) return json::object();
        fail(ErrorCode::validation, "request body required");
    }
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("malformed JSON body: ") + e.what());
    }
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
        try {
            h(req, res);
        } catch (const Error& e) {
            send_json(res, http_status(e.code()), error_document(e));
        } catch (const json::exception& e) {
            send_json(res, 400, json{{"code", "validation"}, {"message", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, json{{"code", "internal"}, {"message", e.what()}});
        }
    };
}

}  // namespace

int http_status(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::validation:
    case ErrorCode::format:
    case ErrorCode::empty_stats:
    case ErrorCode::undefined:
    case ErrorCode::insufficient_data: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::already_exists:
    case ErrorCode::conflict: return 409;
    case ErrorCode::io:
    case ErrorCode::internal: return 500;
    }
    return 500;
}

json error_document(const Error& e) {
    json doc{{"code", to_string(e.code())}, {"message", e.what()}};
    if (!e.details().empty()) {
        json details = json::array();
        for (const auto& [subject, message] : e.details()) details.push_back({{"node", subject}, {"message", message}});
        doc["details"] = details;
    }
    return doc;
}

struct HttpServer::Impl {
    explicit Impl(Service& s) : service(s) {}

    Service& service;
    httplib::Server server;
    std::thread thread;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    Service& s = service;

    srv.Get("/ready", guarded([&s](const httplib::Request&, httplib::Response& res) {
        send_json(res, s.ready() ? 200 : 503, s.status());
    }));
    srv.Get("/status", guarded([&s](const httplib::Request&, httplib::Response& res) { send_json(res, 200, s.status()); }));
    srv.Get("/series", guarded([&s](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, s.series_list());
    }));
    srv.Get(R"(/series/([^/]+)/windows)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200,
                  s.windows(req.matches[1], parse_duration(required(req, "resolution")),
                            time_param(req, "from", kOpenFrom), time_param(req, "to", kOpenTo)));
    }));
    srv.Get(R"(/series/([^/]+)/stats)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const auto kind = param(req, "kind").value_or("HOUR_OF_WEEK");
        send_json(res, 200, s.stats(req.matches[1], stats::parse_kind(kind)));
    }));
    srv.Get(R"(/series/([^/]+)/latest)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, s.latest(req.matches[1]));
    }));
    srv.Get("/anomalies", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        anomaly::AnomalyQuery q;
        q.series = param(req, "series");
        q.from_ms = time_param(req, "from", kOpenFrom);
        q.to_ms = time_param(req, "to", kOpenTo);
        if (auto v = param(req, "min_score")) q.min_score = number_param(*v, "min_score");
        send_json(res, 200, s.anomalies(q, count_param(req, "limit", 1000)));
    }));
    srv.Get(R"(/forecasts/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200,
                  s.forecasts(req.matches[1], time_param(req, "from", kOpenFrom), time_param(req, "to", kOpenTo)));
    }));
    srv.Get("/backtest", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200,
                  s.backtest(required(req, "series"), param(req, "model").value_or("seasonal-mean"),
                             parse_time(required(req, "from")), parse_time(required(req, "to"))));
    }));
    srv.Get("/correlation", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200,
                  s.correlation(required(req, "a"), required(req, "b"), parse_duration(required(req, "resolution")),
                                time_param(req, "from", kOpenFrom), time_param(req, "to", kOpenTo)));
    }));
    srv.Get(R"(/trend/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        std::optional<double> threshold;
        std::optional<std::size_t> min_points;
        if (auto v = param(req, "threshold")) threshold = number_param(*v, "threshold");
        if (param(req, "min_points")) min_points = count_param(req, "min_points", 0);
        send_json(res, 200,
                  s.trend(req.matches[1], time_param(req, "from", 0), time_param(req, "to", kOpenTo), threshold,
                          min_points));
    }));
    srv.Get("/hierarchies", guarded([&s](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, s.hierarchies());
    }));
    srv.Get(R"(/summary/([^/]+)/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, s.summary(req.matches[1], req.matches[2]));
    }));
    srv.Get("/alert-rules", guarded([&s](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, s.alert_rules());
    }));
    srv.Get("/alerts", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, s.alerts(count_param(req, "limit", 100)));
    }));

    srv.Put(R"(/hierarchies/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, s.put_hierarchy(req.matches[1], body_json(req, false)));
    }));
    srv.Put(R"(/alert-rules/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, s.put_alert_rule(req.matches[1], body_json(req, false)));
    }));
    srv.Delete(R"(/alert-rules/([^/]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        s.delete_alert_rule(req.matches[1]);
        send_json(res, 200, json{{"deleted", std::string(req.matches[1])}});
    }));
    srv.Post("/admin/retention", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req, true);
        codec::require_known_fields(body, {"now"}, "retention request");
        std::int64_t now = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
        if (body.contains("now")) now = body["now"].get<std::int64_t>();
        send_json(res, 200, s.retention(now));
    }));
    srv.Post("/admin/replay", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        codec::require_known_fields(body_json(req, true), {}, "replay request");
        send_json(res, 200, s.replay());
    }));
    srv.Post("/admin/flush", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        codec::require_known_fields(body_json(req, true), {}, "flush request");
        send_json(res, 200, json{{"at", s.flush()}});
    }));
    srv.Post("/measurements", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        json body = body_json(req, false);
        if (body.is_object()) {
            codec::require_known_fields(body, {"measurements"}, "measurement batch");
            body = body.at("measurements");
        }
        if (!body.is_array()) fail(ErrorCode::validation, "expected an array of measurements");
        std::vector<Measurement> batch;
        for (const auto& m : body) {
            if (!m.is_object()) fail(ErrorCode::validation, "measurement must be an object");
            codec::require_known_fields(m, {"sensor", "ts", "value_w"}, "measurement");
            batch.push_back(codec::decode_measurement(m));
        }
        send_json(res, 200, json{{"appended", s.append(batch)}});
    }));

    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            send_json(res, res.status, json{{"code", res.status == 404 ? "not_found" : "error"},
                                            {"message", httplib::status_message(res.status)}});
        }
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    auto& srv = impl_->server;
    if (port == 0) {
        const int bound = srv.bind_to_any_port(host);
        if (bound <= 0) fail(ErrorCode::io, "cannot bind " + host);
        return bound;
    }
    if (!srv.bind_to_port(host, port)) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ampwatch
