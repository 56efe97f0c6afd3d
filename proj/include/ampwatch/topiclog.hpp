#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace ampwatch::topiclog {

/// Topic names are non-empty and restricted to [a-z0-9.-].
bool valid_topic_name(std::string_view name) noexcept;

struct Record {
    std::string topic;
    std::uint64_t offset = 0;
    std::string key;
    std::int64_t ts_ms = 0;
    std::string payload;

    bool operator==(const Record&) const = default;
};

struct Cursor {
    std::string topic;
    std::uint64_t position = 0;
};

struct LogOptions {
    /// Empty path keeps the log in memory only.
    std::filesystem::path data_dir;
    /// Segment files are flushed and fsynced every this many appends per
    /// topic, and on shutdown. Zero disables periodic flushing.
    std::size_t flush_every = 1000;
};

/// Embedded append-only pub-sub log. Every topic is a dense, totally ordered
/// sequence of immutable records. Thread-safe for concurrent producers and
/// consumers.
class TopicLog {
public:
    explicit TopicLog(LogOptions options = {});
    ~TopicLog();

    TopicLog(const TopicLog&) = delete;
    TopicLog& operator=(const TopicLog&) = delete;

    void create_topic(const std::string& name);
    /// Creates the topic unless it already exists.
    void ensure_topic(const std::string& name);
    bool has_topic(const std::string& name) const;
    std::vector<std::string> topics() const;

    std::uint64_t append(const std::string& topic, std::string_view key, std::int64_t ts_ms,
                         std::string_view payload);
    std::uint64_t end_offset(const std::string& topic) const;

    /// Returns records [position, min(position + max, end)) and advances the
    /// cursor past them.
    std::vector<Record> poll(Cursor& cursor, std::size_t max) const;
    /// Like poll, but waits up to `timeout` for a record when caught up.
    std::vector<Record> poll_wait(Cursor& cursor, std::size_t max, std::chrono::milliseconds timeout) const;
    Cursor replay(const std::string& topic) const;
    Record at(const std::string& topic, std::uint64_t offset) const;

    /// Flushes and fsyncs every segment file.
    void flush();
    const LogOptions& options() const noexcept { return options_; }

private:
    struct Entry {
        std::string key;
        std::int64_t ts_ms;
        std::string payload;
    };
    struct Topic {
        std::vector<Entry> entries;
        std::FILE* file = nullptr;
        std::size_t unflushed = 0;
    };

    Topic& topic_locked(const std::string& name);
    const Topic& topic_locked(const std::string& name) const;
    void open_segment(const std::string& name, Topic& topic);
    void load_segments();
    std::vector<Record> collect_locked(Cursor& cursor, std::size_t max) const;

    LogOptions options_;
    mutable std::mutex mutex_;
    mutable std::condition_variable appended_;
    std::map<std::string, std::unique_ptr<Topic>> topics_;
};

/// Bit-exact little-endian segment encoding of one record.
void encode_segment_record(std::string& out, std::uint64_t offset, std::int64_t ts_ms, std::string_view key,
                           std::string_view payload);

}  // namespace ampwatch::topiclog
