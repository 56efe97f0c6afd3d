#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ampwatch/domain.hpp"

namespace ampwatch {

using json = nlohmann::json;

namespace topics {
inline const std::string measurements = "measurements";
inline const std::string configuration = "configuration";
inline const std::string control = "control";
inline const std::string aggregated = "aggregated";
inline const std::string residuals = "residuals";
inline const std::string stats = "stats";
inline const std::string anomalies = "anomalies";
inline const std::string forecasts = "forecasts";
inline const std::string trend_flags = "trend-flags";
inline const std::string alerts = "alerts";
}  // namespace topics

/// Series id under which a group's consumption is stored and analysed.
/// Sensor ids cannot contain ':', so the two namespaces never collide.
inline std::string group_series_id(std::string_view hierarchy, std::string_view group) {
    return std::string(hierarchy) + ":" + std::string(group);
}

namespace codec {

/// Canonical text form of a payload: compact JSON with lexicographically
/// ordered keys and shortest round-trip doubles.
std::string dump(const json& doc);
json parse(std::string_view payload);

json encode(const Measurement& m);
Measurement decode_measurement(const json& doc);
std::string measurement_payload(const Measurement& m);
Measurement measurement_from_payload(std::string_view payload);

json encode(const PowerStats& s);
PowerStats decode_stats(const json& doc);

/// Control records steer every consumer at a fixed position of the
/// measurement stream. `at` is the measurement offset before which the
/// record takes effect.
struct ControlRecord {
    std::string type;  // "flush"
    std::uint64_t at = 0;
};
json encode(const ControlRecord& c);
ControlRecord decode_control(const json& doc);

/// Rejects any key of `doc` not listed in `allowed`.
void require_known_fields(const json& doc, std::initializer_list<std::string_view> allowed,
                          std::string_view what);

}  // namespace codec
}  // namespace ampwatch
