#include "lpf/config.hpp"

#include <atomic>
#include <json.hpp>
#include <sstream>

#include "lpf/errors.hpp"

namespace lpf {

using nlohmann::json;

namespace {

std::atomic<int> g_parse_count{0};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
            return false;
    return true;
}

struct Parser {
    std::istringstream in;
    int lineno = 0;

    explicit Parser(const std::string& text) : in(text) {}

    [[noreturn]] void fail(const std::string& what, int col = 1) {
        throw ConfigError(lineno, col, what);
    }

    std::optional<std::string> next_line() {
        std::string raw;
        while (std::getline(in, raw)) {
            lineno++;
            if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
            std::string line = trim(raw);
            if (!line.empty()) return line;
        }
        return std::nullopt;
    }

    /// Parses the body of a section until its closing brace.
    void parse_body(ConfigNode& node) {
        while (true) {
            auto line = next_line();
            if (!line) fail("unexpected end of input: missing '}' for " +
                            std::string(config_kind_name(node.kind)) + " " + node.name);
            if (*line == "}") return;
            if (line->back() == '{') {
                parse_section(node, trim(line->substr(0, line->size() - 1)), false);
                continue;
            }
            // one-line empty section: Header { }
            if (line->back() == '}') {
                auto open = line->find('{');
                if (open != std::string::npos &&
                    trim(line->substr(open + 1, line->size() - open - 2)).empty()) {
                    parse_section(node, trim(line->substr(0, open)), true);
                    continue;
                }
            }
            auto eq = line->find('=');
            if (eq == std::string::npos)
                fail("expected 'key = value', section header or '}', got '" + *line + "'");
            std::string key = trim(line->substr(0, eq));
            std::string value = trim(line->substr(eq + 1));
            if (!valid_name(key)) fail("invalid key '" + key + "'");
            node.settings[key] = value;
        }
    }

    void parse_section(ConfigNode& parent, const std::string& header, bool empty_body) {
        std::istringstream hs(header);
        std::string kind_word;
        hs >> kind_word;

        if (kind_word == "LpfConfig") {
            if (parent.kind != ConfigNode::Kind::Lpf)
                fail("LpfConfig section only allowed inside Lpf");
            ConfigNode tmp;
            tmp.kind = parent.kind;
            tmp.name = parent.name + "/LpfConfig";
            if (!empty_body) parse_body(tmp);
            for (auto& [k, v] : tmp.settings) parent.settings[k] = v;
            if (!tmp.children.empty()) fail("LpfConfig cannot contain sections");
            return;
        }

        ConfigNode node;
        if (kind_word == "System") node.kind = ConfigNode::Kind::System;
        else if (kind_word == "Service") node.kind = ConfigNode::Kind::Service;
        else if (kind_word == "Lpf") node.kind = ConfigNode::Kind::Lpf;
        else if (kind_word == "Module") node.kind = ConfigNode::Kind::Module;
        else fail("unknown section kind '" + kind_word + "'");

        std::string name;
        hs >> name;
        if (!valid_name(name)) fail("missing or invalid name after '" + kind_word + "'");
        node.name = name;

        std::string attr;
        while (hs >> attr) {
            auto eq = attr.find('=');
            if (eq == std::string::npos)
                fail("bad attribute '" + attr + "' in " + kind_word + " header");
            std::string key = attr.substr(0, eq);
            std::string value = attr.substr(eq + 1);
            if (key == "host" && node.kind == ConfigNode::Kind::Lpf) node.host = value;
            else if (key == "port" && node.kind == ConfigNode::Kind::Lpf)
                node.port = std::atoi(value.c_str());
            else fail("unsupported header attribute '" + key + "' for " + kind_word);
        }

        // nesting rules
        using K = ConfigNode::Kind;
        bool ok_nesting = (parent.kind == K::System && node.kind == K::Service) ||
                          (parent.kind == K::Service && node.kind == K::Lpf) ||
                          (parent.kind == K::Lpf &&
                           (node.kind == K::Module || node.kind == K::Lpf));
        if (!ok_nesting)
            fail(std::string(config_kind_name(node.kind)) + " cannot appear inside " +
                 config_kind_name(parent.kind));

        if (!empty_body) parse_body(node);
        parent.children.push_back(std::move(node));
    }
};

void check_unique_children(const ConfigNode& node, std::vector<std::string>& errors,
                           const std::string& path) {
    for (size_t i = 0; i < node.children.size(); i++) {
        for (size_t j = i + 1; j < node.children.size(); j++) {
            if (node.children[i].name == node.children[j].name &&
                node.children[i].kind == node.children[j].kind)
                errors.push_back("duplicate " +
                                 std::string(config_kind_name(node.children[i].kind)) + " '" +
                                 node.children[i].name + "' under " + path);
        }
    }
    for (const auto& c : node.children)
        check_unique_children(c, errors, path + "/" + c.name);
}

void check_lpfs(const ConfigNode& node, std::vector<std::string>& errors, const std::string& path,
                int barelpf_port) {
    if (node.kind == ConfigNode::Kind::Lpf) {
        if (node.host.empty())
            errors.push_back("Lpf '" + path + "' has no host");
        if (node.port <= 0 || node.port > 65535)
            errors.push_back("Lpf '" + path + "' has invalid port " + std::to_string(node.port));
        if (barelpf_port > 0 && node.port == barelpf_port)
            errors.push_back("Lpf '" + path + "' port collides with the BareLPF port " +
                             std::to_string(barelpf_port));
        std::string policy = node.on_child_failure();
        if (policy != "FAIL" && policy != "IGNORE" && policy != "RECOVER")
            errors.push_back("Lpf '" + path + "' has unknown on_child_failure '" + policy + "'");
        std::string fb = node.recover_fallback();
        if (fb != "FAIL" && fb != "IGNORE")
            errors.push_back("Lpf '" + path + "' has unknown recover_fallback '" + fb + "'");
    }
    for (const auto& c : node.children) check_lpfs(c, errors, path + "/" + c.name, barelpf_port);
}

}  // namespace

const char* config_kind_name(ConfigNode::Kind kind) {
    switch (kind) {
        case ConfigNode::Kind::System: return "System";
        case ConfigNode::Kind::Service: return "Service";
        case ConfigNode::Kind::Lpf: return "Lpf";
        case ConfigNode::Kind::Module: return "Module";
    }
    return "?";
}

const ConfigNode* ConfigNode::child(const std::string& child_name) const {
    for (const auto& c : children)
        if (c.name == child_name) return &c;
    return nullptr;
}

ConfigTree parse_config(const std::string& text) {
    g_parse_count.fetch_add(1);
    Parser p(text);
    auto first = p.next_line();
    if (!first) p.fail("empty configuration");
    if (first->back() != '{' || first->rfind("System", 0) != 0)
        p.fail("configuration must start with 'System <name> {'");

    ConfigTree tree;
    ConfigNode holder;  // pseudo parent so parse_section can do nesting checks
    holder.kind = ConfigNode::Kind::System;
    ConfigNode root;
    root.kind = ConfigNode::Kind::System;
    {
        std::istringstream hs(trim(first->substr(0, first->size() - 1)));
        std::string kw, name;
        hs >> kw >> name;
        if (!valid_name(name)) p.fail("missing or invalid System name");
        root.name = name;
        std::string extra;
        if (hs >> extra) p.fail("unexpected token '" + extra + "' in System header");
    }
    p.parse_body(root);
    if (auto trailing = p.next_line())
        p.fail("unexpected content after the System block: '" + *trailing + "'");
    tree.root = std::move(root);

    validate_config(tree, 0);
    return tree;
}

void validate_config(const ConfigTree& tree, int barelpf_port) {
    std::vector<std::string> errors;
    check_unique_children(tree.root, errors, tree.root.name);
    check_lpfs(tree.root, errors, tree.root.name, barelpf_port);
    if (!errors.empty()) {
        std::string all;
        for (const auto& e : errors) all += (all.empty() ? "" : "; ") + e;
        throw ConfigError(0, 0, all);
    }
}

int config_parse_count() { return g_parse_count.load(); }
void reset_config_parse_count() { g_parse_count.store(0); }

ConfigNode subtree_for(const ConfigTree& tree, const std::string& path) {
    std::vector<std::string> parts;
    std::istringstream ps(path);
    std::string part;
    while (std::getline(ps, part, '/'))
        if (!part.empty()) parts.push_back(part);
    if (parts.empty() || parts[0] != tree.root.name)
        throw LpfError(Errc::UnknownPath, "path must start at '" + tree.root.name + "': " + path);

    Kv inherited = tree.root.settings;
    const ConfigNode* node = &tree.root;
    for (size_t i = 1; i < parts.size(); i++) {
        const ConfigNode* next = node->child(parts[i]);
        if (next == nullptr)
            throw LpfError(Errc::UnknownPath, "no node '" + parts[i] + "' in " + path);
        for (const auto& [k, v] : node->settings) inherited[k] = v;
        node = next;
    }
    ConfigNode out = *node;  // deep copy of the subtree
    for (const auto& [k, v] : inherited)
        if (out.settings.find(k) == out.settings.end()) out.settings[k] = v;
    return out;
}

std::vector<std::pair<std::string, const ConfigNode*>> collect_lpfs(const ConfigNode& root,
                                                                    const std::string& prefix) {
    std::vector<std::pair<std::string, const ConfigNode*>> out;
    std::string base = prefix.empty() ? root.name : prefix;
    for (const auto& c : root.children) {
        std::string path = base + "/" + c.name;
        if (c.kind == ConfigNode::Kind::Lpf) out.emplace_back(path, &c);
        auto sub = collect_lpfs(c, path);
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

std::vector<const ConfigNode*> activation_children(const ConfigNode& node) {
    std::vector<const ConfigNode*> out;
    if (node.kind == ConfigNode::Kind::Lpf) {
        for (const auto& c : node.children)
            if (c.kind == ConfigNode::Kind::Lpf) out.push_back(&c);
        return out;
    }
    // System/Service scope: every Lpf directly under the services
    for (const auto& c : node.children) {
        if (c.kind == ConfigNode::Kind::Lpf) {
            out.push_back(&c);
        } else {
            auto sub = activation_children(c);
            out.insert(out.end(), sub.begin(), sub.end());
        }
    }
    return out;
}

namespace {

json node_to_json(const ConfigNode& n) {
    json j;
    j["kind"] = config_kind_name(n.kind);
    j["name"] = n.name;
    if (n.kind == ConfigNode::Kind::Lpf) {
        j["host"] = n.host;
        j["port"] = n.port;
    }
    j["settings"] = n.settings;
    j["children"] = json::array();
    for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
    return j;
}

ConfigNode node_from_json(const json& j) {
    ConfigNode n;
    std::string kind = j.value("kind", "");
    if (kind == "System") n.kind = ConfigNode::Kind::System;
    else if (kind == "Service") n.kind = ConfigNode::Kind::Service;
    else if (kind == "Lpf") n.kind = ConfigNode::Kind::Lpf;
    else if (kind == "Module") n.kind = ConfigNode::Kind::Module;
    else throw LpfError(Errc::ValidationError, "bad node kind '" + kind + "'");
    n.name = j.value("name", "");
    n.host = j.value("host", "");
    n.port = j.value("port", 0);
    if (j.contains("settings"))
        for (auto& [k, v] : j["settings"].items()) n.settings[k] = v.get<std::string>();
    if (j.contains("children"))
        for (const auto& c : j["children"]) n.children.push_back(node_from_json(c));
    return n;
}

}  // namespace

std::string config_to_json(const ConfigNode& node) { return node_to_json(node).dump(); }

ConfigNode config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw LpfError(Errc::ValidationError, "subtree is not valid JSON");
    return node_from_json(j);
}

std::string config_to_text(const ConfigNode& node, int indent) {
    std::string pad(static_cast<size_t>(indent) * 2, ' ');
    std::ostringstream out;
    out << pad << config_kind_name(node.kind) << " " << node.name;
    if (node.kind == ConfigNode::Kind::Lpf)
        out << " host=" << node.host << " port=" << node.port;
    out << " {\n";
    for (const auto& [k, v] : node.settings) out << pad << "  " << k << " = " << v << "\n";
    for (const auto& c : node.children) out << config_to_text(c, indent + 1);
    out << pad << "}\n";
    return out.str();
}

}  // namespace lpf
