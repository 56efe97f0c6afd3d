#include <gtest/gtest.h>

#include "ampwatch/history.hpp"
#include "support.hpp"

using namespace ampwatch;
using namespace ampwatch::history;

namespace {

ResolutionPolicy policy() { return ResolutionPolicy::defaults(); }

aggregation::AggregatedPower emission(std::int64_t start, double sum, std::uint64_t revision, bool final) {
    aggregation::AggregatedPower a;
    a.hierarchy = "h";
    a.group = "g";
    a.window_start = start;
    a.window_ms = kMinuteMs;
    a.sum_w = sum;
    a.revision = revision;
    a.final = final;
    return a;
}

}  // namespace

TEST(HistoryTest, ValuesMergeIntoOneRow) {
    HistoryStore store(policy());
    for (auto [ts, v] : {std::pair{0, 10.0}, {10'000, 20.0}, {50'000, 30.0}}) store.update(make_measurement("s1", ts, v));
    for (std::int64_t res : {kMinuteMs, 5 * kMinuteMs}) {
        const auto rows = store.query_range("s1", res, 0, kDayMs);
        ASSERT_EQ(rows.size(), 1u);
        EXPECT_EQ(rows[0].stats.sum_w(), 60.0);
        EXPECT_EQ(rows[0].stats.count, 3u);
        EXPECT_EQ(rows[0].stats.min_w, 10.0);
        EXPECT_EQ(rows[0].stats.max_w, 30.0);
        EXPECT_EQ(average(rows[0].stats), 20.0);
    }
}

TEST(HistoryTest, QueryIsHalfOpenAndValidated) {
    HistoryStore store(policy());
    store.update(make_measurement("s1", 60'000, 1));
    EXPECT_EQ(store.query_range("s1", kMinuteMs, 60'000, 120'000).size(), 1u);
    EXPECT_TRUE(store.query_range("s1", kMinuteMs, 120'000, 240'000).empty());
    EXPECT_TRUE(store.query_range("s1", kMinuteMs, 60'000, 60'000).empty());
    EXPECT_TRUE(store.query_range("nobody", kMinuteMs, 0, kDayMs).empty());
    try {
        store.query_range("s1", 2 * kMinuteMs, 0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::validation);
    }
    EXPECT_THROW(store.query_range("s1", kMinuteMs, 10, 5), Error);
}

TEST(HistoryTest, HighestRevisionReplacesGroupContribution) {
    HistoryStore store(policy());
    store.update(emission(0, 30, 0, false));
    store.update(emission(0, 35, 1, false));
    store.update(emission(0, 31, 0, false));
    auto rows = store.query_range("h:g", kMinuteMs, 0, kDayMs);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].stats.count, 1u);
    EXPECT_EQ(rows[0].stats.sum_w(), 35.0);
    store.update(emission(0, 36, 2, true));
    store.update(emission(60'000, 10, 0, true));
    rows = store.query_range("h:g", 5 * kMinuteMs, 0, kDayMs);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].stats.count, 2u);
    EXPECT_EQ(rows[0].stats.sum_w(), 46.0);
}

TEST(HistoryTest, HourlyAverageEqualsWeightedMinuteAverage) {
    testsupport::Rng rng(12);
    HistoryStore store(policy());
    std::map<std::int64_t, std::pair<double, int>> oracle;  // hour -> (sum, count)
    for (int minute = 0; minute < 1440; ++minute) {
        const int n = static_cast<int>(rng.integer(1, 4));
        for (int i = 0; i < n; ++i) {
            const double v = rng.uniform(0, 500);
            store.update(make_measurement("s1", minute * kMinuteMs + i * 1000, v));
        }
    }
    const auto minutes = store.query_range("s1", kMinuteMs, 0, kDayMs);
    ASSERT_EQ(minutes.size(), 1440u);
    for (const auto& r : minutes) {
        auto& slot = oracle[r.window_start / kHourMs];
        slot.first += average(r.stats) * static_cast<double>(r.stats.count);
        slot.second += static_cast<int>(r.stats.count);
    }
    const auto hours = store.query_range("s1", kHourMs, 0, kDayMs);
    ASSERT_EQ(hours.size(), 24u);
    for (const auto& r : hours) {
        const auto& [sum, count] = oracle[r.window_start / kHourMs];
        EXPECT_TRUE(testsupport::close_rel(average(r.stats), sum / count, 1e-9));
    }
}

TEST(HistoryProperty, CoarserRowsEqualMergedFinerRows) {
    testsupport::Rng rng(99);
    HistoryStore store(policy());
    for (int i = 0; i < 20000; ++i) {
        store.update(make_measurement("s" + std::to_string(i % 3), rng.integer(0, 3 * kDayMs), rng.uniform(0, 100)));
    }
    const auto& windows = store.policy().windows;
    for (const std::string series : {"s0", "s1", "s2"}) {
        for (std::size_t level = 1; level < windows.size(); ++level) {
            std::map<std::int64_t, PowerStats> merged;
            for (const auto& r : store.query_range(series, windows[0].window_ms, 0, 4 * kDayMs)) {
                auto& m = merged[window_start_of(r.window_start, windows[level].window_ms)];
                m = stats_merge(m, r.stats);
            }
            const auto coarse = store.query_range(series, windows[level].window_ms, 0, 4 * kDayMs);
            ASSERT_EQ(coarse.size(), merged.size());
            for (const auto& r : coarse) {
                const auto& m = merged.at(r.window_start);
                EXPECT_EQ(r.stats.count, m.count);
                EXPECT_EQ(r.stats.min_w, m.min_w);
                EXPECT_EQ(r.stats.max_w, m.max_w);
                EXPECT_TRUE(testsupport::close_rel(r.stats.sum_w(), m.sum_w(), 1e-9));
            }
        }
    }
}

TEST(HistoryProperty, ArrivalOrderDoesNotMatter) {
    testsupport::Rng rng(4);
    std::vector<Measurement> ms;
    for (int i = 0; i < 3000; ++i) ms.push_back(make_measurement("s1", rng.integer(0, kDayMs), rng.uniform(0, 100)));
    HistoryStore a(policy()), b(policy());
    for (const auto& m : ms) a.update(m);
    rng.shuffle(ms);
    for (const auto& m : ms) b.update(m);
    for (const auto& r : a.policy().windows) {
        const auto ra = a.query_range("s1", r.window_ms, 0, kDayMs);
        const auto rb = b.query_range("s1", r.window_ms, 0, kDayMs);
        ASSERT_EQ(ra.size(), rb.size());
        for (std::size_t i = 0; i < ra.size(); ++i) {
            EXPECT_EQ(ra[i].stats.count, rb[i].stats.count);
            EXPECT_EQ(ra[i].stats.min_w, rb[i].stats.min_w);
            EXPECT_TRUE(testsupport::close_rel(ra[i].stats.sum_w(), rb[i].stats.sum_w(), 1e-9));
        }
    }
}

TEST(HistoryTest, RetentionByTtl) {
    HistoryStore store(ResolutionPolicy{{{kMinuteMs, 7 * kDayMs}}, kDayMs});
    const std::int64_t now = 30 * kDayMs;
    store.update(make_measurement("s1", now - 8 * kDayMs - kMinuteMs, 1));
    store.update(make_measurement("s1", now - 6 * kDayMs - kMinuteMs, 2));
    // One expired minute row and its raw point; the raw point of the kept row is also older than a day.
    EXPECT_EQ(store.apply_retention(now), 3u);
    const auto rows = store.query_range("s1", kMinuteMs, 0, now);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].stats.sum_w(), 2.0);
    EXPECT_EQ(store.apply_retention(now), 0u);
}

TEST(HistoryTest, RetentionKeepsRowsWithinTtl) {
    HistoryStore store(policy());
    const std::int64_t now = 100 * kDayMs;
    store.update(make_measurement("s1", now - kHourMs, 5));
    EXPECT_EQ(store.apply_retention(now), 0u);
    EXPECT_EQ(store.raw("s1", 0, now).size(), 1u);
    EXPECT_EQ(store.latest("s1")->value_w, 5.0);
}

TEST(HistoryTest, InvalidPolicyRejected) {
    EXPECT_THROW(HistoryStore(ResolutionPolicy{{{60'000, 1}, {90'000, 1}}, 0}), Error);
    EXPECT_THROW(HistoryStore(ResolutionPolicy{{{60'000, 1}, {60'000, 1}}, 0}), Error);
    EXPECT_THROW(HistoryStore(ResolutionPolicy{{}, 0}), Error);
}
