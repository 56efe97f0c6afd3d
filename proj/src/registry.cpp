#include "ampwatch/registry.hpp"

#include <fstream>
#include <iterator>
#include <mutex>

namespace ampwatch::registry {

namespace {

void check_node(const HierarchyNode& node, std::vector<std::string>& path, std::set<std::string>& seen,
                std::set<std::string>& metered, std::vector<ValidationIssue>& issues) {
    if (!SensorId::is_valid(node.id)) {
        issues.push_back({node.id, "invalid node id"});
    }
    if (std::find(path.begin(), path.end(), node.id) != path.end()) {
        issues.push_back({node.id, "cycle: node is its own ancestor"});
        return;
    }
    if (!seen.insert(node.id).second) {
        issues.push_back({node.id, "duplicate node id"});
    }
    if (node.is_leaf && !node.children.empty()) {
        issues.push_back({node.id, "leaf node has children"});
    }
    if (node.is_leaf && node.metered) {
        issues.push_back({node.id, "metered sensor on a leaf node"});
    }
    if (node.metered) metered.insert(node.metered->str());
    path.push_back(node.id);
    for (const auto& child : node.children) check_node(child, path, seen, metered, issues);
    path.pop_back();
}

}  // namespace

std::vector<ValidationIssue> check_hierarchy(const Hierarchy& h) {
    std::vector<ValidationIssue> issues;
    if (!SensorId::is_valid(h.name)) issues.push_back({"", "invalid hierarchy name '" + h.name + "'"});
    std::vector<std::string> path;
    std::set<std::string> seen;
    std::set<std::string> metered;
    check_node(h.root, path, seen, metered, issues);
    for (const auto& m : metered) {
        if (seen.contains(m)) issues.push_back({m, "metered sensor also appears as a node"});
    }
    return issues;
}

void validate_hierarchy(const Hierarchy& h) {
    const auto issues = check_hierarchy(h);
    if (issues.empty()) return;
    std::string msg = "invalid hierarchy '" + h.name + "':";
    Error::Details details;
    for (const auto& i : issues) {
        msg += " [" + i.node_id + ": " + i.message + "]";
        details.emplace_back(i.node_id, i.message);
    }
    throw Error(ErrorCode::validation, msg, std::move(details));
}

json to_json(const HierarchyNode& node) {
    json doc{{"id", node.id}, {"name", node.display_name}};
    if (node.is_leaf) {
        doc["leaf"] = true;
    } else {
        json children = json::array();
        for (const auto& c : node.children) children.push_back(to_json(c));
        doc["children"] = std::move(children);
    }
    if (node.metered) doc["metered"] = node.metered->str();
    return doc;
}

json to_json(const Hierarchy& h) {
    return json{{"name", h.name}, {"version", h.version}, {"root", to_json(h.root)}};
}

HierarchyNode node_from_json(const json& doc) {
    codec::require_known_fields(doc, {"id", "name", "leaf", "children", "metered"}, "hierarchy node");
    try {
        HierarchyNode node;
        node.id = doc.at("id").get<std::string>();
        node.display_name = doc.value("name", node.id);
        const bool has_children = doc.contains("children");
        node.is_leaf = doc.value("leaf", !has_children);
        if (has_children) {
            if (!doc["children"].is_array()) fail(ErrorCode::validation, "children must be an array");
            for (const auto& c : doc["children"]) node.children.push_back(node_from_json(c));
        }
        if (doc.contains("metered") && !doc["metered"].is_null()) {
            node.metered = SensorId(doc["metered"].get<std::string>());
        }
        return node;
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("bad hierarchy node: ") + e.what());
    }
}

Hierarchy hierarchy_from_json(const json& doc) {
    codec::require_known_fields(doc, {"name", "version", "root"}, "hierarchy");
    try {
        Hierarchy h;
        h.name = doc.at("name").get<std::string>();
        h.version = doc.value("version", std::uint64_t{0});
        h.root = node_from_json(doc.at("root"));
        return h;
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("bad hierarchy: ") + e.what());
    }
}

json encode(const RegistryEvent& e) {
    json doc = to_json(e.hierarchy);
    doc["at"] = e.at;
    return doc;
}

RegistryEvent decode_registry_event(const json& doc) {
    RegistryEvent e;
    json tree = doc;
    e.at = tree.at("at").get<std::uint64_t>();
    tree.erase("at");
    e.hierarchy = hierarchy_from_json(tree);
    return e;
}

HierarchyIndex::HierarchyIndex(Hierarchy h) : hierarchy_(std::make_shared<const Hierarchy>(std::move(h))) {
    std::vector<std::string> path;
    index(hierarchy_->root, path);
}

void HierarchyIndex::index(const HierarchyNode& node, std::vector<std::string>& path) {
    nodes_[node.id] = &node;
    ancestors_[node.id] = std::vector<std::string>(path.rbegin(), path.rend());
    if (node.is_leaf) {
        leaf_ids_.insert(SensorId(node.id));
        return;
    }
    if (node.metered) metered_.emplace(*node.metered, node.id);
    path.push_back(node.id);
    for (const auto& c : node.children) index(c, path);
    path.pop_back();
    groups_post_order_.push_back(node.id);
}

const HierarchyNode& HierarchyIndex::node(const std::string& id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) {
        fail(ErrorCode::not_found, "node '" + id + "' not in hierarchy '" + hierarchy_->name + "'");
    }
    return *it->second;
}

std::set<SensorId> HierarchyIndex::leaves_of(const std::string& node_id) const {
    std::set<SensorId> out;
    std::vector<const HierarchyNode*> stack{&node(node_id)};
    while (!stack.empty()) {
        const HierarchyNode* n = stack.back();
        stack.pop_back();
        if (n->is_leaf) {
            out.insert(SensorId(n->id));
        } else {
            for (const auto& c : n->children) stack.push_back(&c);
        }
    }
    return out;
}

const std::vector<std::string>& HierarchyIndex::ancestors_of(const std::string& node_id) const {
    auto it = ancestors_.find(node_id);
    if (it == ancestors_.end()) {
        fail(ErrorCode::not_found, "node '" + node_id + "' not in hierarchy '" + hierarchy_->name + "'");
    }
    return it->second;
}

Registry::Registry(topiclog::TopicLog* log, std::filesystem::path file) : log_(log), file_(std::move(file)) {
    if (log_) {
        log_->ensure_topic(topics::configuration);
        log_->ensure_topic(topics::measurements);
    }
    if (!file_.empty() && std::filesystem::exists(file_)) load();
}

void Registry::load() {
    std::ifstream in(file_);
    if (!in) fail(ErrorCode::io, "cannot read " + file_.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::format, file_.string() + ": " + e.what());
    }
    if (!doc.is_array()) fail(ErrorCode::format, file_.string() + ": expected an array of hierarchies");
    for (const auto& entry : doc) {
        Hierarchy h = hierarchy_from_json(entry);
        validate_hierarchy(h);
        const std::string name = h.name;
        hierarchies_.insert_or_assign(name, HierarchyIndex(std::move(h)));
    }
}

void Registry::persist_locked() const {
    if (file_.empty()) return;
    json doc = json::array();
    for (const auto& [_, idx] : hierarchies_) doc.push_back(to_json(idx.hierarchy()));
    auto tmp = file_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, file_);
}

std::uint64_t Registry::upsert_hierarchy(Hierarchy h, std::optional<std::uint64_t> expected_version) {
    validate_hierarchy(h);
    std::unique_lock lock(mutex_);
    std::uint64_t current = 0;
    if (auto it = hierarchies_.find(h.name); it != hierarchies_.end()) current = it->second.hierarchy().version;
    if (expected_version && *expected_version != current) {
        fail(ErrorCode::conflict, "hierarchy '" + h.name + "' is at version " + std::to_string(current) +
                                      ", not " + std::to_string(*expected_version));
    }
    h.version = current + 1;
    const std::string name = h.name;
    hierarchies_.insert_or_assign(name, HierarchyIndex(h));
    persist_locked();
    if (log_) {
        RegistryEvent event{std::move(h), log_->end_offset(topics::measurements)};
        log_->append(topics::configuration, name, 0, codec::dump(encode(event)));
    }
    return current + 1;
}

std::set<SensorId> Registry::leaves_of(const std::string& hierarchy, const std::string& node_id) const {
    std::shared_lock lock(mutex_);
    auto it = hierarchies_.find(hierarchy);
    if (it == hierarchies_.end()) fail(ErrorCode::not_found, "unknown hierarchy '" + hierarchy + "'");
    return it->second.leaves_of(node_id);
}

std::vector<std::string> Registry::ancestors_of(const std::string& hierarchy, const SensorId& sensor) const {
    std::shared_lock lock(mutex_);
    auto it = hierarchies_.find(hierarchy);
    if (it == hierarchies_.end()) fail(ErrorCode::not_found, "unknown hierarchy '" + hierarchy + "'");
    if (!it->second.has_leaf(sensor)) {
        fail(ErrorCode::not_found, "sensor '" + sensor.str() + "' not in hierarchy '" + hierarchy + "'");
    }
    return it->second.ancestors_of(sensor.str());
}

std::vector<Hierarchy> Registry::hierarchies() const {
    std::shared_lock lock(mutex_);
    std::vector<Hierarchy> out;
    for (const auto& [_, idx] : hierarchies_) out.push_back(idx.hierarchy());
    return out;
}

std::optional<Hierarchy> Registry::find(const std::string& name) const {
    std::shared_lock lock(mutex_);
    auto it = hierarchies_.find(name);
    if (it == hierarchies_.end()) return std::nullopt;
    return it->second.hierarchy();
}

}  // namespace ampwatch::registry
