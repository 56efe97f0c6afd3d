#include "ampwatch/topiclog.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "ampwatch/error.hpp"

namespace ampwatch::topiclog {

namespace {

constexpr std::string_view kSegmentSuffix = ".log";

template <typename T>
void put_le(std::string& out, T value) {
    auto v = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(v & 0xffu));
        v = static_cast<decltype(v)>(v >> 8);
    }
}

template <typename T>
bool get_le(const std::string& in, std::size_t& pos, T& value) {
    if (in.size() - pos < sizeof(T)) return false;
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    value = static_cast<T>(v);
    return true;
}

}  // namespace

bool valid_topic_name(std::string_view name) noexcept {
    if (name.empty()) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '-';
    });
}

void encode_segment_record(std::string& out, std::uint64_t offset, std::int64_t ts_ms, std::string_view key,
                           std::string_view payload) {
    put_le<std::uint64_t>(out, offset);
    put_le<std::int64_t>(out, ts_ms);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out.append(key);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
    out.append(payload);
}

TopicLog::TopicLog(LogOptions options) : options_(std::move(options)) {
    if (!options_.data_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(options_.data_dir, ec);
        if (ec) fail(ErrorCode::io, "cannot create log directory " + options_.data_dir.string() + ": " + ec.message());
        load_segments();
    }
}

TopicLog::~TopicLog() {
    std::lock_guard lock(mutex_);
    for (auto& [name, topic] : topics_) {
        if (topic->file) {
            std::fflush(topic->file);
            ::fsync(::fileno(topic->file));
            std::fclose(topic->file);
        }
    }
}

void TopicLog::load_segments() {
    for (const auto& dirent : std::filesystem::directory_iterator(options_.data_dir)) {
        const auto path = dirent.path();
        const std::string file = path.filename().string();
        if (!file.ends_with(kSegmentSuffix)) continue;
        const std::string name = file.substr(0, file.size() - kSegmentSuffix.size());
        if (!valid_topic_name(name)) continue;

        std::ifstream in(path, std::ios::binary);
        if (!in) fail(ErrorCode::io, "cannot read segment " + path.string());
        const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

        auto topic = std::make_unique<Topic>();
        std::size_t pos = 0;
        while (pos < bytes.size()) {
            const std::size_t record_start = pos;
            std::uint64_t offset = 0;
            std::int64_t ts = 0;
            std::uint32_t key_len = 0;
            std::uint32_t payload_len = 0;
            auto corrupt = [&](const std::string& why) {
                fail(ErrorCode::format, "corrupt segment " + path.string() + " at byte " +
                                            std::to_string(record_start) + ": " + why);
            };
            if (!get_le(bytes, pos, offset) || !get_le(bytes, pos, ts) || !get_le(bytes, pos, key_len)) {
                corrupt("truncated header");
            }
            if (offset != topic->entries.size()) {
                corrupt("offset " + std::to_string(offset) + " expected " + std::to_string(topic->entries.size()));
            }
            if (bytes.size() - pos < key_len) corrupt("truncated key");
            std::string key = bytes.substr(pos, key_len);
            pos += key_len;
            if (!get_le(bytes, pos, payload_len)) corrupt("truncated payload length");
            if (bytes.size() - pos < payload_len) corrupt("truncated payload");
            std::string payload = bytes.substr(pos, payload_len);
            pos += payload_len;
            topic->entries.push_back(Entry{std::move(key), ts, std::move(payload)});
        }
        open_segment(name, *topic);
        topics_.emplace(name, std::move(topic));
    }
}

void TopicLog::open_segment(const std::string& name, Topic& topic) {
    if (options_.data_dir.empty()) return;
    const auto path = options_.data_dir / (name + std::string(kSegmentSuffix));
    topic.file = std::fopen(path.c_str(), "ab");
    if (!topic.file) fail(ErrorCode::io, "cannot open segment " + path.string());
}

void TopicLog::create_topic(const std::string& name) {
    if (!valid_topic_name(name)) fail(ErrorCode::validation, "invalid topic name '" + name + "'");
    std::lock_guard lock(mutex_);
    if (topics_.contains(name)) fail(ErrorCode::already_exists, "topic '" + name + "' already exists");
    auto topic = std::make_unique<Topic>();
    open_segment(name, *topic);
    topics_.emplace(name, std::move(topic));
}

void TopicLog::ensure_topic(const std::string& name) {
    if (!has_topic(name)) {
        try {
            create_topic(name);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::already_exists) throw;
        }
    }
}

bool TopicLog::has_topic(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return topics_.contains(name);
}

std::vector<std::string> TopicLog::topics() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> names;
    for (const auto& [name, _] : topics_) names.push_back(name);
    return names;
}

TopicLog::Topic& TopicLog::topic_locked(const std::string& name) {
    auto it = topics_.find(name);
    if (it == topics_.end()) fail(ErrorCode::not_found, "unknown topic '" + name + "'");
    return *it->second;
}

const TopicLog::Topic& TopicLog::topic_locked(const std::string& name) const {
    auto it = topics_.find(name);
    if (it == topics_.end()) fail(ErrorCode::not_found, "unknown topic '" + name + "'");
    return *it->second;
}

std::uint64_t TopicLog::append(const std::string& topic_name, std::string_view key, std::int64_t ts_ms,
                               std::string_view payload) {
    std::uint64_t offset = 0;
    {
        std::lock_guard lock(mutex_);
        Topic& topic = topic_locked(topic_name);
        offset = topic.entries.size();
        if (topic.file) {
            std::string bytes;
            encode_segment_record(bytes, offset, ts_ms, key, payload);
            if (std::fwrite(bytes.data(), 1, bytes.size(), topic.file) != bytes.size()) {
                fail(ErrorCode::io, "write failed on topic '" + topic_name + "'");
            }
            if (options_.flush_every != 0 && ++topic.unflushed >= options_.flush_every) {
                std::fflush(topic.file);
                ::fsync(::fileno(topic.file));
                topic.unflushed = 0;
            }
        }
        topic.entries.push_back(Entry{std::string(key), ts_ms, std::string(payload)});
    }
    appended_.notify_all();
    return offset;
}

std::uint64_t TopicLog::end_offset(const std::string& topic) const {
    std::lock_guard lock(mutex_);
    return topic_locked(topic).entries.size();
}

std::vector<Record> TopicLog::collect_locked(Cursor& cursor, std::size_t max) const {
    const Topic& topic = topic_locked(cursor.topic);
    const std::uint64_t end = topic.entries.size();
    const std::uint64_t stop = std::min<std::uint64_t>(end, cursor.position + max);
    std::vector<Record> out;
    if (cursor.position < stop) out.reserve(stop - cursor.position);
    for (std::uint64_t off = cursor.position; off < stop; ++off) {
        const Entry& e = topic.entries[off];
        out.push_back(Record{cursor.topic, off, e.key, e.ts_ms, e.payload});
    }
    if (stop > cursor.position) cursor.position = stop;
    return out;
}

std::vector<Record> TopicLog::poll(Cursor& cursor, std::size_t max) const {
    std::lock_guard lock(mutex_);
    return collect_locked(cursor, max);
}

std::vector<Record> TopicLog::poll_wait(Cursor& cursor, std::size_t max, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    appended_.wait_for(lock, timeout, [&] { return topic_locked(cursor.topic).entries.size() > cursor.position; });
    return collect_locked(cursor, max);
}

Cursor TopicLog::replay(const std::string& topic) const {
    std::lock_guard lock(mutex_);
    topic_locked(topic);
    return Cursor{topic, 0};
}

Record TopicLog::at(const std::string& topic_name, std::uint64_t offset) const {
    std::lock_guard lock(mutex_);
    const Topic& topic = topic_locked(topic_name);
    if (offset >= topic.entries.size()) fail(ErrorCode::not_found, "offset out of range");
    const Entry& e = topic.entries[offset];
    return Record{topic_name, offset, e.key, e.ts_ms, e.payload};
}

void TopicLog::flush() {
    std::lock_guard lock(mutex_);
    for (auto& [_, topic] : topics_) {
        if (topic->file) {
            std::fflush(topic->file);
            ::fsync(::fileno(topic->file));
            topic->unflushed = 0;
        }
    }
}

}  // namespace ampwatch::topiclog
