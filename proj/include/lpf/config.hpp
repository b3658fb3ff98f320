#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpf/message.hpp"

namespace lpf {

/// Hierarchical configuration: System -> Service -> Lpf -> Module, with Lpf
/// nodes optionally nesting child Lpfs (the activation hierarchy). Parsed
/// once by the Configuration Master; children receive serialized subtrees,
/// never raw text.
struct ConfigNode {
    enum class Kind { System, Service, Lpf, Module };

    Kind kind = Kind::System;
    std::string name;
    std::string host;  // Lpf only
    int port = 0;      // Lpf only
    Kv settings;
    std::vector<ConfigNode> children;

    const ConfigNode* child(const std::string& child_name) const;
    std::string get(const std::string& key, const std::string& def = "") const {
        return kv_get(settings, key, def);
    }
    int64_t get_int(const std::string& key, int64_t def = 0) const {
        return kv_get_int(settings, key, def);
    }

    // Lpf activation policy keys
    std::string on_child_failure() const { return get("on_child_failure", "FAIL"); }
    std::string recover_fallback() const { return get("recover_fallback", "FAIL"); }
    int activation_timeout_s() const { return static_cast<int>(get_int("activation_timeout_s", 30)); }
};

const char* config_kind_name(ConfigNode::Kind kind);

struct ConfigTree {
    ConfigNode root;  // the System node
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, int column, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ":" + std::to_string(column) +
                             ": " + what),
          line_(line), column_(column) {}
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Parse and fully validate. Throws ConfigError on syntax or validation
/// problems. Every call bumps the process-wide parse counter (the
/// single-parse coherence assertion reads it).
ConfigTree parse_config(const std::string& text);

/// Structural validation (uniqueness, Lpf host/port sanity, policy enums).
/// barelpf_port > 0 additionally rejects Lpf ports colliding with it.
void validate_config(const ConfigTree& tree, int barelpf_port = 0);

int config_parse_count();
void reset_config_parse_count();

/// Subtree rooted at the slash-separated path (names from the System node,
/// root itself addressed by its name). Ancestor settings are merged into the
/// returned node, child keys overriding parent keys on conflict.
/// Throws LpfError{UnknownPath}.
ConfigNode subtree_for(const ConfigTree& tree, const std::string& path);

/// All Lpf nodes under this node with their slash paths, depth-first.
std::vector<std::pair<std::string, const ConfigNode*>> collect_lpfs(const ConfigNode& root,
                                                                    const std::string& prefix = "");

/// Direct activation children: for a System/Service scope these are the
/// top-level Lpfs; for an Lpf node its nested Lpf children.
std::vector<const ConfigNode*> activation_children(const ConfigNode& node);

std::string config_to_json(const ConfigNode& node);
ConfigNode config_from_json(const std::string& text);  // throws LpfError{ValidationError}

/// Canonical text rendering in the source grammar.
std::string config_to_text(const ConfigNode& node, int indent = 0);

}  // namespace lpf
