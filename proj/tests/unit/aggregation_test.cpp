#include <gtest/gtest.h>

#include "ampwatch/aggregation.hpp"
#include "support.hpp"

using namespace ampwatch;
using namespace ampwatch::aggregation;
using registry::Hierarchy;
using registry::HierarchyNode;

namespace {

HierarchyNode leaf(const std::string& id) { return HierarchyNode{id, id, true, std::nullopt, {}}; }

HierarchyNode group(const std::string& id, std::vector<HierarchyNode> children) {
    return HierarchyNode{id, id, false, std::nullopt, std::move(children)};
}

registry::RegistryEvent event(HierarchyNode root, std::uint64_t version, const std::string& name = "h") {
    return registry::RegistryEvent{Hierarchy{name, std::move(root), version}, 0};
}

struct Harness {
    Aggregator agg{AggregationConfig{}};
    std::vector<AggregatedPower> out;
    std::vector<Residual> residuals;

    void feed(const std::string& sensor, std::int64_t ts, double value) {
        collect(agg.process_measurement(make_measurement(sensor, ts, value)));
        collect(agg.advance_watermark(ts));
    }
    void flush() { collect(agg.flush()); }
    void collect(Emissions e) {
        out.insert(out.end(), e.aggregated.begin(), e.aggregated.end());
        residuals.insert(residuals.end(), e.residuals.begin(), e.residuals.end());
    }
    std::vector<AggregatedPower> finals(const std::string& grp) const {
        std::vector<AggregatedPower> r;
        for (const auto& a : out) {
            if (a.final && a.group == grp) r.push_back(a);
        }
        return r;
    }
};

}  // namespace

TEST(AggregationTest, TwoChildrenSumInWindow) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1"), leaf("s2")}), 1));
    h.feed("s1", 1000, 10);
    h.feed("s2", 2000, 20);
    h.flush();
    const auto f = h.finals("g1");
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].sum_w, 30.0);
    EXPECT_EQ(f[0].stats.sum_w(), 30.0);
    EXPECT_EQ(f[0].stats.count, 2u);
    EXPECT_EQ(f[0].stats.min_w, 10.0);
    EXPECT_EQ(f[0].stats.max_w, 20.0);
    EXPECT_EQ(f[0].window_start, 0);
    EXPECT_EQ(f[0].registry_version, 1u);
}

TEST(AggregationTest, LateUpdateWithinGraceReEmits) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1"), leaf("s2")}), 1));
    h.feed("s1", 0, 10);
    h.feed("s2", 10'000, 20);
    h.feed("s1", 61'000, 11);
    ASSERT_EQ(h.out.size(), 1u);
    EXPECT_EQ(h.out[0].revision, 0u);
    EXPECT_FALSE(h.out[0].final);
    EXPECT_EQ(h.out[0].sum_w, 30.0);

    h.feed("s2", 40'000, 25);
    ASSERT_EQ(h.out.size(), 2u);
    EXPECT_EQ(h.out[1].revision, 1u);
    EXPECT_EQ(h.out[1].sum_w, 35.0);
    h.flush();
    const auto f = h.finals("g1");
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f[0].window_start, 0);
    EXPECT_EQ(f[0].sum_w, 35.0);
    EXPECT_GT(f[0].revision, 1u);
}

TEST(AggregationTest, TooLateMeasurementDropped) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1")}), 1));
    h.feed("s1", 100'000, 1);
    const auto before = h.out.size();
    h.feed("s1", 69'999, 5);
    EXPECT_EQ(h.agg.metrics().late_drops, 1u);
    EXPECT_EQ(h.out.size(), before);
}

TEST(AggregationTest, WatermarkFinalizesAtEndPlusGrace) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1"), leaf("s2")}), 1));
    h.feed("s1", 0, 10);
    h.feed("s2", 89'999, 1);
    EXPECT_TRUE(h.finals("g1").empty());
    h.feed("s2", 90'000, 1);
    ASSERT_EQ(h.finals("g1").size(), 1u);
    EXPECT_EQ(h.finals("g1")[0].window_start, 0);
}

TEST(AggregationTest, NoMeasurementsNoEmissions) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1")}), 1));
    h.flush();
    EXPECT_TRUE(h.out.empty());
}

TEST(AggregationTest, MoveChildBetweenGroups) {
    Harness h;
    h.agg.apply_registry_event(event(group("root", {group("g1", {leaf("s1"), leaf("s2")}), group("g2", {leaf("s3")})}), 1));
    h.feed("s2", 0, 5);
    h.agg.apply_registry_event(event(group("root", {group("g1", {leaf("s1")}), group("g2", {leaf("s2"), leaf("s3")})}), 2));
    h.feed("s2", 120'000, 7);
    h.flush();
    const auto g2 = h.finals("g2");
    ASSERT_FALSE(g2.empty());
    EXPECT_EQ(g2.back().window_start, 120'000);
    EXPECT_EQ(g2.back().sum_w, 7.0);
    EXPECT_EQ(g2.back().registry_version, 2u);
    for (const auto& a : h.finals("g1")) EXPECT_NE(a.window_start, 120'000);
}

TEST(AggregationTest, StaleRegistryVersionIgnored) {
    Harness h;
    EXPECT_TRUE(h.agg.apply_registry_event(event(group("g1", {leaf("s1")}), 2)));
    EXPECT_FALSE(h.agg.apply_registry_event(event(group("g1", {leaf("s9")}), 1)));
    EXPECT_EQ(h.agg.metrics().stale_config_events, 1u);
    EXPECT_EQ(h.agg.hierarchy("h")->version, 2u);
}

TEST(AggregationTest, EmptyGroupEmitsNothing) {
    Harness h;
    h.agg.apply_registry_event(event(group("root", {group("g1", {leaf("s1")}), group("g3", {})}), 1));
    h.feed("s1", 0, 5);
    h.flush();
    EXPECT_TRUE(h.finals("g3").empty());
    EXPECT_EQ(h.finals("g1").size(), 1u);
}

TEST(AggregationTest, UnassignedSensorCounted) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1")}), 1));
    h.feed("stranger", 0, 5);
    EXPECT_EQ(h.agg.metrics().unassigned, 1u);
}

TEST(AggregationTest, SilentChildCarriesThenGaps) {
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1"), leaf("s2")}), 1));
    h.feed("s2", 0, 20);
    for (int w = 0; w < 4; ++w) h.feed("s1", w * 60'000 + 1000, 10);
    h.flush();
    const auto f = h.finals("g1");
    ASSERT_EQ(f.size(), 4u);
    EXPECT_EQ(f[0].sum_w, 30.0);
    EXPECT_EQ(f[1].sum_w, 30.0);
    EXPECT_EQ(f[1].carried, std::vector<std::string>{"s2"});
    EXPECT_EQ(f[1].stats.count, 1u);
    EXPECT_EQ(f[2].sum_w, 30.0);
    EXPECT_EQ(f[3].sum_w, 10.0);
    EXPECT_EQ(f[3].gaps, std::vector<std::string>{"s2"});
}

TEST(AggregationTest, ResidualAgainstMeteredGroup) {
    Harness h;
    auto g = group("g1", {leaf("s1"), leaf("s2")});
    g.metered = SensorId("main");
    h.agg.apply_registry_event(event(g, 1));
    h.feed("s1", 0, 40);
    h.feed("s2", 0, 50);
    h.feed("main", 0, 100);
    h.feed("s1", 60'000, 50);
    h.feed("s2", 60'000, 50);
    h.feed("main", 60'000, 100);
    h.flush();
    ASSERT_EQ(h.residuals.size(), 2u);
    EXPECT_EQ(h.residuals[0].residual_w, 10.0);
    EXPECT_EQ(h.residuals[0].metered_sensor, "main");
    EXPECT_EQ(h.residuals[1].residual_w, 0.0);
}

TEST(AggregationTest, MissingMeteredSideNoResidual) {
    Harness h;
    auto g = group("g1", {leaf("s1")});
    g.metered = SensorId("main");
    h.agg.apply_registry_event(event(g, 1));
    h.feed("s1", 0, 40);
    h.feed("main", 60'000, 100);
    h.flush();
    EXPECT_TRUE(h.residuals.empty());
}

TEST(AggregationTest, RandomTreeResidualAtRoot) {
    testsupport::Rng rng(5);
    auto hier = testsupport::random_tree(rng, "h", 20, 3);
    hier.root.metered = SensorId("meter");
    hier.version = 1;
    Harness h;
    h.agg.apply_registry_event(registry::RegistryEvent{hier, 0});
    for (int w = 0; w < 10; ++w) {
        double leaf_sum = 0.0;
        for (int i = 0; i < 20; ++i) {
            const double v = rng.uniform(0, 1000);
            leaf_sum += v;
            h.feed("leaf" + std::to_string(i), w * 60'000 + i * 100, v);
        }
        h.feed("meter", w * 60'000 + 5000, leaf_sum + 7);
    }
    h.flush();
    ASSERT_EQ(h.residuals.size(), 10u);
    for (const auto& r : h.residuals) EXPECT_NEAR(r.residual_w, 7.0, 1e-9);
}

TEST(AggregationProperty, LateAccountingBalances) {
    testsupport::Rng rng(8);
    Harness h;
    h.agg.apply_registry_event(event(group("g1", {leaf("s1"), leaf("s2")}), 1));
    std::uint64_t generated = 0;
    for (int i = 0; i < 3000; ++i) {
        const std::string sensor = rng.uniform() < 0.1 ? "ghost" : (rng.uniform() < 0.5 ? "s1" : "s2");
        const std::int64_t ts = i * 1000 - rng.integer(0, 90'000);
        h.feed(sensor, std::max<std::int64_t>(0, ts), rng.uniform(0, 10));
        ++generated;
    }
    const auto& m = h.agg.metrics();
    EXPECT_GT(m.late_drops, 0u);
    EXPECT_EQ(generated, m.contributions + m.late_drops + m.unassigned);
}

TEST(AggregationTest, EncodingRoundTrip) {
    AggregatedPower a;
    a.hierarchy = "h";
    a.group = "g";
    a.window_start = 60000;
    a.window_ms = 60000;
    a.stats = stats_from_value(3.5);
    a.sum_w = 3.5;
    a.revision = 2;
    a.registry_version = 4;
    a.final = true;
    a.children = {{"s1", 3.5}};
    a.gaps = {"s2"};
    const auto b = decode_aggregated(codec::parse(codec::dump(encode(a))));
    EXPECT_EQ(codec::dump(encode(b)), codec::dump(encode(a)));
    EXPECT_EQ(a.series_id(), "h:g");
}
