#include "support.hpp"

#include <httplib.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace testsupport {

TempDir::TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "ampwatch-test-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::uint64_t Rng::next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next() % span);
}

double Rng::normal() noexcept {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    return r * std::cos(2.0 * M_PI * u2);
}

MeanVar two_pass(const std::vector<double>& xs) {
    MeanVar out;
    if (xs.empty()) return out;
    double s = 0.0;
    for (double x : xs) s += x;
    out.mean = s / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.variance = ss / static_cast<double>(xs.size());
    return out;
}

double direct_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = two_pass(x).mean;
    const double my = two_pass(y).mean;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

Line closed_form_ols(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    Line l;
    l.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    l.intercept = (sy - l.slope * sx) / n;
    return l;
}

bool close_rel(double a, double b, double rel) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-300});
    return std::fabs(a - b) <= rel * scale || a == b;
}

std::pair<std::uint64_t, std::uint64_t> binomial_interval(std::uint64_t n, double p, double level) {
    const double tail = (1.0 - level) / 2.0;
    std::vector<double> pmf(n + 1);
    const double lp = std::log(p), lq = std::log1p(-p);
    const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
    for (std::uint64_t k = 0; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        pmf[k] = std::exp(lgn - std::lgamma(kk + 1.0) - std::lgamma(static_cast<double>(n - k) + 1.0) + kk * lp +
                          static_cast<double>(n - k) * lq);
    }
    std::uint64_t lo = 0;
    double below = 0.0;
    while (lo < n && below + pmf[lo] <= tail) below += pmf[lo++];
    std::uint64_t hi = n;
    double above = 0.0;
    while (hi > 0 && above + pmf[hi] <= tail) above += pmf[hi--];
    return {lo, hi};
}

ampwatch::registry::Hierarchy random_tree(Rng& rng, const std::string& name, int leaves, int levels) {
    using ampwatch::registry::HierarchyNode;
    std::vector<HierarchyNode> layer;
    for (int i = 0; i < leaves; ++i) {
        HierarchyNode n;
        n.id = "leaf" + std::to_string(i);
        n.display_name = n.id;
        n.is_leaf = true;
        layer.push_back(std::move(n));
    }
    int group = 0;
    for (int level = 0; level < levels - 1; ++level) {
        rng.shuffle(layer);
        std::vector<HierarchyNode> parents;
        std::size_t i = 0;
        while (i < layer.size()) {
            const auto take = std::min<std::size_t>(layer.size() - i, static_cast<std::size_t>(rng.integer(1, 4)));
            HierarchyNode g;
            g.id = "g" + std::to_string(group++);
            g.display_name = g.id;
            for (std::size_t j = 0; j < take; ++j) g.children.push_back(std::move(layer[i + j]));
            parents.push_back(std::move(g));
            i += take;
        }
        layer = std::move(parents);
    }
    HierarchyNode root;
    root.id = "root";
    root.display_name = "root";
    root.children = std::move(layer);
    return ampwatch::registry::Hierarchy{name, std::move(root), 0};
}

std::vector<OracleMeasurement> parse_csv_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "sensor_id,timestamp_ms,value_w") throw std::runtime_error("bad header");
    std::vector<OracleMeasurement> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        out.push_back(OracleMeasurement{line.substr(0, c1), std::stoll(line.substr(c1 + 1, c2 - c1 - 1)),
                                        std::strtod(line.c_str() + c2 + 1, nullptr)});
    }
    return out;
}

void OracleStats::add(double v) {
    if (count == 0) {
        min = max = v;
    } else {
        min = std::min(min, v);
        max = std::max(max, v);
    }
    sum += v;
    ++count;
}

namespace {

std::int64_t start_of(std::int64_t ts, std::int64_t w) {
    std::int64_t q = ts / w;
    if (ts % w != 0 && ts < 0) --q;
    return q * w;
}

struct Reading {
    std::int64_t ts;
    double value;
};

struct GroupEval {
    double sum = 0.0;
    bool reported = false;
};

struct HierarchyOracle {
    const std::map<std::int64_t, std::map<std::string, Reading>>* last;
    std::int64_t window_ms;
    int stale;

    GroupEval eval(const ampwatch::registry::HierarchyNode& n, std::int64_t w, OracleStats* child_stats) const {
        if (n.is_leaf) {
            for (int k = 0; k <= stale; ++k) {
                auto win = last->find(w - k * window_ms);
                if (win == last->end()) continue;
                auto r = win->second.find(n.id);
                if (r != win->second.end()) return GroupEval{r->second.value, k == 0};
            }
            return {};
        }
        GroupEval g;
        for (const auto& c : n.children) {
            const GroupEval ce = eval(c, w, nullptr);
            g.sum += ce.sum;
            g.reported = g.reported || ce.reported;
            if (child_stats && ce.reported) child_stats->add(ce.sum);
        }
        return g;
    }
};

void collect_groups(const ampwatch::registry::HierarchyNode& n, std::vector<const ampwatch::registry::HierarchyNode*>& out) {
    if (n.is_leaf) return;
    out.push_back(&n);
    for (const auto& c : n.children) collect_groups(c, out);
}

}  // namespace

BatchResult batch_oracle(const std::vector<OracleMeasurement>& ms,
                         const std::vector<ampwatch::registry::Hierarchy>& hierarchies, std::int64_t window_ms,
                         int stale_windows, const std::vector<std::int64_t>& resolutions) {
    BatchResult out;
    std::map<std::int64_t, std::map<std::string, Reading>> last;
    for (const auto& m : ms) {
        for (auto r : resolutions) out.rows[{m.sensor, r, start_of(m.ts, r)}].add(m.value);
        auto& slot = last[start_of(m.ts, window_ms)];
        auto it = slot.find(m.sensor);
        if (it == slot.end() || m.ts > it->second.ts) slot[m.sensor] = Reading{m.ts, m.value};
    }
    for (const auto& h : hierarchies) {
        std::vector<const ampwatch::registry::HierarchyNode*> groups;
        collect_groups(h.root, groups);
        const HierarchyOracle oracle{&last, window_ms, stale_windows};
        for (const auto& [w, _] : last) {
            for (const auto* g : groups) {
                OracleGroupWindow gw;
                const GroupEval e = oracle.eval(*g, w, &gw.child_stats);
                if (!e.reported) continue;
                gw.sum = e.sum;
                const std::string series = h.name + ":" + g->id;
                out.groups[{series, w}] = gw;
                for (auto r : resolutions) out.rows[{series, r, start_of(w, r)}].add(e.sum);
            }
        }
    }
    return out;
}

namespace {

HttpReply to_reply(const httplib::Result& res) {
    if (!res) throw std::runtime_error("http request failed: " + httplib::to_string(res.error()));
    HttpReply r;
    r.status = res->status;
    if (!res->body.empty()) r.body = json::parse(res->body, nullptr, false);
    return r;
}

}  // namespace

HttpReply http_get(int port, const std::string& path) {
    httplib::Client cli("127.0.0.1", port);
    return to_reply(cli.Get(path));
}

HttpReply http_put(int port, const std::string& path, const json& body) {
    httplib::Client cli("127.0.0.1", port);
    return to_reply(cli.Put(path, body.dump(), "application/json"));
}

HttpReply http_post(int port, const std::string& path, const json& body) {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(120, 0);
    return to_reply(cli.Post(path, body.dump(), "application/json"));
}

HttpReply http_delete(int port, const std::string& path) {
    httplib::Client cli("127.0.0.1", port);
    return to_reply(cli.Delete(path));
}

}  // namespace testsupport
