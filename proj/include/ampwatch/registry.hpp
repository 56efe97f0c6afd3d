#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ampwatch/codec.hpp"
#include "ampwatch/domain.hpp"
#include "ampwatch/topiclog.hpp"

namespace ampwatch::registry {

struct HierarchyNode {
    std::string id;
    std::string display_name;
    bool is_leaf = false;
    /// Optional physical meter measuring the whole group (groups only).
    std::optional<SensorId> metered;
    std::vector<HierarchyNode> children;

    bool operator==(const HierarchyNode&) const = default;
};

struct Hierarchy {
    std::string name;
    HierarchyNode root;
    std::uint64_t version = 0;

    bool operator==(const Hierarchy&) const = default;
};

/// Full-tree configuration change, as published on the configuration topic.
struct RegistryEvent {
    Hierarchy hierarchy;
    /// Measurement offset from which the new tree governs routing.
    std::uint64_t at = 0;
};

struct ValidationIssue {
    std::string node_id;
    std::string message;
};

std::vector<ValidationIssue> check_hierarchy(const Hierarchy& h);
/// Throws a validation error listing every issue.
void validate_hierarchy(const Hierarchy& h);

json to_json(const HierarchyNode& node);
json to_json(const Hierarchy& h);
/// Strict decoding: unknown fields are rejected.
HierarchyNode node_from_json(const json& doc);
Hierarchy hierarchy_from_json(const json& doc);

json encode(const RegistryEvent& e);
RegistryEvent decode_registry_event(const json& doc);

/// Precomputed lookups over one validated hierarchy.
class HierarchyIndex {
public:
    explicit HierarchyIndex(Hierarchy h);

    const Hierarchy& hierarchy() const noexcept { return *hierarchy_; }
    bool contains_node(const std::string& id) const { return nodes_.contains(id); }
    const HierarchyNode& node(const std::string& id) const;

    std::set<SensorId> leaves_of(const std::string& node_id) const;
    /// Parent first, root last. Empty for the root itself.
    const std::vector<std::string>& ancestors_of(const std::string& node_id) const;
    bool has_leaf(const SensorId& sensor) const { return leaf_ids_.contains(sensor); }
    /// Group nodes, children before parents.
    const std::vector<std::string>& groups_post_order() const noexcept { return groups_post_order_; }
    /// Groups carrying a metered sensor, keyed by that sensor.
    const std::multimap<SensorId, std::string>& metered_groups() const noexcept { return metered_; }

private:
    void index(const HierarchyNode& node, std::vector<std::string>& path);

    // Shared so copies keep node pointers valid.
    std::shared_ptr<const Hierarchy> hierarchy_;
    std::map<std::string, const HierarchyNode*> nodes_;
    std::map<std::string, std::vector<std::string>> ancestors_;
    std::set<SensorId> leaf_ids_;
    std::vector<std::string> groups_post_order_;
    std::multimap<SensorId, std::string> metered_;
};

/// Sensor management: named hierarchies persisted to a JSON file, each
/// accepted update published as a full-tree event.
class Registry {
public:
    /// `log` may be null (no event publication); `file` may be empty (no
    /// persistence).
    Registry(topiclog::TopicLog* log, std::filesystem::path file);

    /// Validates, stores and publishes. When `expected_version` is given it
    /// must match the stored version (conflict otherwise).
    std::uint64_t upsert_hierarchy(Hierarchy h, std::optional<std::uint64_t> expected_version = std::nullopt);

    std::set<SensorId> leaves_of(const std::string& hierarchy, const std::string& node_id) const;
    std::vector<std::string> ancestors_of(const std::string& hierarchy, const SensorId& sensor) const;

    std::vector<Hierarchy> hierarchies() const;
    std::optional<Hierarchy> find(const std::string& name) const;

private:
    void load();
    void persist_locked() const;

    topiclog::TopicLog* log_;
    std::filesystem::path file_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, HierarchyIndex> hierarchies_;
};

}  // namespace ampwatch::registry
