#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "ampwatch/config.hpp"
#include "support.hpp"

using namespace ampwatch;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::internal;
}

class EnvGuard {
public:
    EnvGuard() {
        for (const char* v : {"AMPWATCH_DATA_DIR", "AMPWATCH_PORT", "AMPWATCH_TZ"}) ::unsetenv(v);
    }
    ~EnvGuard() {
        for (const char* v : {"AMPWATCH_DATA_DIR", "AMPWATCH_PORT", "AMPWATCH_TZ"}) ::unsetenv(v);
    }
};

}  // namespace

TEST(ConfigTest, Defaults) {
    EnvGuard env;
    const auto cfg = load_config(std::nullopt);
    EXPECT_EQ(cfg.port, 8185);
    EXPECT_EQ(cfg.pipeline.aggregation.window_ms, kMinuteMs);
    EXPECT_EQ(cfg.pipeline.aggregation.grace_ms, 30 * kSecondMs);
    EXPECT_EQ(cfg.pipeline.aggregation.stale_windows, 2);
    EXPECT_EQ(cfg.pipeline.stats.snapshot_every, 1000u);
    EXPECT_EQ(cfg.pipeline.anomaly.k, 3.0);
    EXPECT_EQ(cfg.pipeline.anomaly.min_count, 100u);
    EXPECT_EQ(cfg.pipeline.anomaly.kind, stats::AttributeKind::hour_of_week);
    EXPECT_EQ(cfg.pipeline.forecast.horizon_ms, kHourMs);
    EXPECT_EQ(cfg.pipeline.forecast.cadence_ms, 15 * kMinuteMs);
    ASSERT_EQ(cfg.pipeline.resolutions.windows.size(), 3u);
    EXPECT_EQ(cfg.pipeline.resolutions.windows[2].window_ms, kHourMs);
}

TEST(ConfigTest, FileThenEnvironment) {
    EnvGuard env;
    testsupport::TempDir dir;
    std::ofstream(dir / "cfg.json") << R"({"port": 9000, "timezone": "+01:00", "snapshot_every": 10,
        "anomaly": {"k": 4, "overrides": {"pump1": {"kind": "DAY_OF_WEEK", "min_count": 5}}},
        "trend": {"slope_threshold": 2.5, "min_points": 4}, "idle_flush_ms": 0})";
    ::setenv("AMPWATCH_PORT", "9100", 1);
    ::setenv("AMPWATCH_DATA_DIR", (dir / "data").c_str(), 1);
    const auto cfg = load_config(dir / "cfg.json");
    EXPECT_EQ(cfg.port, 9100);
    EXPECT_EQ(cfg.data_dir, dir / "data");
    EXPECT_EQ(cfg.pipeline.tz.offset_ms, kHourMs);
    EXPECT_EQ(cfg.pipeline.stats.tz.offset_ms, kHourMs);
    EXPECT_EQ(cfg.weekend.tz.offset_ms, kHourMs);
    EXPECT_EQ(cfg.pipeline.stats.snapshot_every, 10u);
    EXPECT_EQ(cfg.pipeline.anomaly.k, 4.0);
    EXPECT_EQ(anomaly::resolve(cfg.pipeline.anomaly, "pump1").kind, stats::AttributeKind::day_of_week);
    EXPECT_EQ(cfg.trend.slope_threshold, 2.5);
    EXPECT_EQ(cfg.trend.min_points, 4u);
    EXPECT_EQ(cfg.idle_flush_ms, 0);
    EXPECT_EQ(to_json(cfg)["idle_flush_ms"], 0);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
    EnvGuard env;
    ServiceConfig cfg;
    EXPECT_EQ(code_of([&] { apply_json(cfg, json{{"colour", 1}}); }), ErrorCode::validation);
    EXPECT_EQ(code_of([&] { apply_json(cfg, json{{"anomaly", {{"sigma", 1}}}}); }), ErrorCode::validation);
    EXPECT_EQ(code_of([&] { apply_json(cfg, json{{"port", "eighty"}}); }), ErrorCode::validation);
    EXPECT_EQ(code_of([&] { apply_json(cfg, json{{"idle_flush_ms", -1}}); }), ErrorCode::validation);

    testsupport::TempDir dir;
    std::ofstream(dir / "bad.json") << R"({"window_ms": 60000, "resolutions": [{"window_ms": 120000, "ttl_ms": 1}]})";
    EXPECT_EQ(code_of([&] { load_config(dir / "bad.json"); }), ErrorCode::validation);
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_EQ(code_of([&] { load_config(dir / "broken.json"); }), ErrorCode::validation);
    EXPECT_EQ(code_of([&] { load_config(dir / "missing.json"); }), ErrorCode::io);
    ::setenv("AMPWATCH_PORT", "12ab", 1);
    EXPECT_EQ(code_of([] { load_config(std::nullopt); }), ErrorCode::validation);
}

TEST(ConfigTest, PipelineValidation) {
    PipelineConfig p;
    EXPECT_NO_THROW(validate(p));
    p.stats.snapshot_every = 0;
    EXPECT_THROW(validate(p), Error);
    p = PipelineConfig{};
    p.aggregation.window_ms = 0;
    EXPECT_THROW(validate(p), Error);
}
