#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ampwatch/domain.hpp"
#include "ampwatch/registry.hpp"

namespace testsupport {

using json = nlohmann::json;

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// splitmix64 generator with uniform and Box-Muller normal deviates.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    std::int64_t integer(std::int64_t lo, std::int64_t hi) noexcept;
    double normal() noexcept;

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(integer(0, i - 1))]);
    }

private:
    std::uint64_t state_;
    std::optional<double> spare_;
};

struct MeanVar {
    double mean = 0.0;
    /// Population variance.
    double variance = 0.0;
};

MeanVar two_pass(const std::vector<double>& xs);
/// Pearson r from the textbook two-pass formula.
double direct_pearson(const std::vector<double>& x, const std::vector<double>& y);

struct Line {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Closed-form least squares from raw sums.
Line closed_form_ols(const std::vector<double>& x, const std::vector<double>& y);

bool close_rel(double a, double b, double rel);

/// Smallest [lo, hi] with P(X < lo) <= (1 - level) / 2 and P(X > hi) <= (1 - level) / 2
/// for X ~ Binomial(n, p).
std::pair<std::uint64_t, std::uint64_t> binomial_interval(std::uint64_t n, double p, double level);

/// Random tree of `levels` group levels above `leaves` leaves named leaf0..,
/// group ids g0.., root id "root".
ampwatch::registry::Hierarchy random_tree(Rng& rng, const std::string& name, int leaves, int levels);

// Batch oracle --------------------------------------------------------------

struct OracleMeasurement {
    std::string sensor;
    std::int64_t ts = 0;
    double value = 0.0;
};

/// Independent CSV reader: header "sensor_id,timestamp_ms,value_w".
std::vector<OracleMeasurement> parse_csv_text(const std::string& text);

struct OracleStats {
    double sum = 0.0;
    std::uint64_t count = 0;
    double min = 0.0;
    double max = 0.0;

    void add(double v);
};

struct OracleGroupWindow {
    double sum = 0.0;
    OracleStats child_stats;
};

/// (series, window_ms, window_start) -> stats
using OracleRows = std::map<std::tuple<std::string, std::int64_t, std::int64_t>, OracleStats>;
/// (hierarchy:group, window_start) -> group window
using OracleGroups = std::map<std::pair<std::string, std::int64_t>, OracleGroupWindow>;

struct BatchResult {
    OracleRows rows;
    OracleGroups groups;
};

/// Recomputes every final window from the complete measurement set: sensor
/// rows merge every value; a group's window value is the sum of each leaf's
/// last in-window reading, a silent leaf contributing its reading from up to
/// `stale_windows` earlier windows, and exists iff a leaf below it reported.
BatchResult batch_oracle(const std::vector<OracleMeasurement>& ms,
                         const std::vector<ampwatch::registry::Hierarchy>& hierarchies, std::int64_t window_ms,
                         int stale_windows, const std::vector<std::int64_t>& resolutions);

// HTTP ----------------------------------------------------------------------

struct HttpReply {
    int status = 0;
    json body;
};

HttpReply http_get(int port, const std::string& path);
HttpReply http_put(int port, const std::string& path, const json& body);
HttpReply http_post(int port, const std::string& path, const json& body = json::object());
HttpReply http_delete(int port, const std::string& path);

}  // namespace testsupport
