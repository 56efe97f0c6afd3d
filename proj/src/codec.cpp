#include "ampwatch/codec.hpp"

#include <algorithm>

namespace ampwatch::codec {

std::string dump(const json& doc) { return doc.dump(); }

json parse(std::string_view payload) {
    try {
        return json::parse(payload);
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("malformed payload: ") + e.what());
    }
}

json encode(const Measurement& m) {
    return json{{"sensor", m.sensor.str()}, {"ts", m.ts.epoch_ms}, {"value_w", m.value_w}};
}

Measurement decode_measurement(const json& doc) {
    try {
        return make_measurement(doc.at("sensor").get<std::string>(), doc.at("ts").get<std::int64_t>(),
                                doc.at("value_w").get<double>());
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("bad measurement: ") + e.what());
    }
}

std::string measurement_payload(const Measurement& m) { return dump(encode(m)); }

Measurement measurement_from_payload(std::string_view payload) { return decode_measurement(parse(payload)); }

json encode(const PowerStats& s) {
    if (s.count == 0) return json{{"count", 0}, {"sum_w", 0.0}, {"min_w", nullptr}, {"max_w", nullptr}};
    return json{{"count", s.count}, {"sum_w", s.sum_w()}, {"min_w", s.min_w}, {"max_w", s.max_w}};
}

PowerStats decode_stats(const json& doc) {
    const auto count = doc.at("count").get<std::uint64_t>();
    if (count == 0) return PowerStats::identity();
    return PowerStats::from_parts(doc.at("sum_w").get<double>(), count, doc.at("min_w").get<double>(),
                                  doc.at("max_w").get<double>());
}

json encode(const ControlRecord& c) { return json{{"type", c.type}, {"at", c.at}}; }

ControlRecord decode_control(const json& doc) {
    return ControlRecord{doc.at("type").get<std::string>(), doc.at("at").get<std::uint64_t>()};
}

void require_known_fields(const json& doc, std::initializer_list<std::string_view> allowed, std::string_view what) {
    if (!doc.is_object()) fail(ErrorCode::validation, std::string(what) + " must be an object");
    for (const auto& [key, _] : doc.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            fail(ErrorCode::validation, "unknown field '" + key + "' in " + std::string(what));
        }
    }
}

}  // namespace ampwatch::codec
