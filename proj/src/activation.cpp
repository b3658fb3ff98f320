#include "lpf/activation.hpp"

#include <cstdlib>
#include <json.hpp>
#include <sstream>

#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"
#include "lpf/net.hpp"
#include "lpf/netlink.hpp"
#include "lpf/procsup.hpp"

namespace lpf {

using nlohmann::json;

int bare_port_from(const Kv& config) {
    if (int64_t p = kv_get_int(config, "barelpf_port", 0); p > 0) return static_cast<int>(p);
    if (const char* env = std::getenv("BARELPF_PORT"); env != nullptr && *env != '\0') {
        int p = std::atoi(env);
        if (p > 0) return p;
    }
    return kDefaultBarePort;
}

std::string ActivationReport::to_json() const {
    json j;
    j["overall"] = overall;
    j["lpfs"] = json::object();
    for (const auto& [path, oc] : lpfs)
        j["lpfs"][path] = {{"outcome", oc.outcome}, {"ms", oc.ms}, {"cause", oc.cause}};
    return j.dump();
}

std::optional<ActivationReport> ActivationReport::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    ActivationReport r;
    r.overall = j.value("overall", "FAILED");
    if (j.contains("lpfs"))
        for (auto& [path, oc] : j["lpfs"].items())
            r.lpfs[path] = ActivationOutcome{oc.value("outcome", "FAILED"),
                                             oc.value("ms", int64_t{0}), oc.value("cause", "")};
    return r;
}

std::string ActivationReport::render() const {
    std::ostringstream out;
    out << "activation " << overall << " (" << lpfs.size() << " lpfs)\n";
    for (const auto& [path, oc] : lpfs) {
        out << "  " << path << ": " << oc.outcome << " (" << oc.ms << " ms)";
        if (!oc.cause.empty()) out << " - " << oc.cause;
        out << "\n";
    }
    return out.str();
}

// --------------------------------------------------------------- service

namespace {

/// Keys that stay private to the LPF that defined them.
bool inheritable(const std::string& key) { return key != "log_file" && key != "__path"; }

Kv child_effective_settings(const ConfigNode& child, const Kv& parent_settings,
                            const std::string& parent_path) {
    Kv merged;
    for (const auto& [k, v] : parent_settings)
        if (inheritable(k)) merged[k] = v;
    for (const auto& [k, v] : child.settings) merged[k] = v;
    merged["__path"] = parent_path + "/" + child.name;
    return merged;
}

}  // namespace

void ActivationService::init(Lpf&, const Kv& config) {
    name_ = kv_get(config, "__name", "activation");
}

void ActivationService::start_job(Lpf& lpf, const Message& request, ConfigNode subtree,
                                  bool master) {
    auto job = std::make_unique<Job>();
    job->request = request;
    job->master = master;
    job->t0_ms = lpf.clock().now().count();
    job->self_path = kv_get(subtree.settings, "__path", subtree.name);
    int timeout_s = subtree.activation_timeout_s();
    job->deadline_ms = job->t0_ms + int64_t(timeout_s) * 1000;

    if (!master) {
        // the subtree's LpfConfig keys become this LPF's configuration
        for (const auto& [k, v] : subtree.settings) lpf.config()[k] = v;

        // load the modules declared for this LPF
        for (const auto& node : subtree.children) {
            if (node.kind != ConfigNode::Kind::Module) continue;
            std::string impl = node.get("impl", node.name);
            Scope scope = node.get("scope", "LOCAL") == "GLOBAL" ? Scope::Global : Scope::Local;
            try {
                lpf.activate_module(impl, node.settings, scope, node.name);
            } catch (const std::exception& ex) {
                job->self_failed = true;
                job->self_cause = "module " + node.name + ": " + ex.what();
                lpf.raise_alarm(AlarmLevel::Error, name_, job->self_cause);
                break;
            }
        }
    }

    if (!job->self_failed) {
        std::vector<const ConfigNode*> kids;
        if (master) {
            // top-level Lpfs, each tagged with the Service it belongs to
            for (const auto& svc : subtree.children) {
                if (svc.kind == ConfigNode::Kind::Lpf) {
                    kids.push_back(&svc);
                    continue;
                }
                for (const auto& maybe_lpf : svc.children)
                    if (maybe_lpf.kind == ConfigNode::Kind::Lpf) kids.push_back(&maybe_lpf);
            }
        } else {
            kids = activation_children(subtree);
        }
        for (const ConfigNode* k : kids) {
            Child c;
            c.subtree = *k;
            std::string parent_path = job->self_path;
            if (master) {
                // find the owning service for path and marker
                for (const auto& svc : subtree.children)
                    if (svc.kind == ConfigNode::Kind::Service && svc.child(k->name) == k) {
                        parent_path = job->self_path + "/" + svc.name;
                        break;
                    }
                Kv parent_settings = subtree.settings;
                if (parent_path != job->self_path) {
                    // merge the Service-level keys as well
                    for (const auto& svc : subtree.children)
                        if (svc.kind == ConfigNode::Kind::Service &&
                            parent_path == job->self_path + "/" + svc.name) {
                            for (const auto& [kk, vv] : svc.settings) parent_settings[kk] = vv;
                            if (parent_settings.find("service") == parent_settings.end())
                                parent_settings["service"] = svc.name;
                        }
                }
                c.subtree.settings = child_effective_settings(c.subtree, parent_settings,
                                                              parent_path);
            } else {
                c.subtree.settings =
                    child_effective_settings(c.subtree, lpf.config(), job->self_path);
            }
            c.path = kv_get(c.subtree.settings, "__path");
            c.t0_ms = lpf.clock().now().count();
            c.deadline_ms = c.t0_ms + int64_t(c.subtree.activation_timeout_s()) * 1000;
            job->children.push_back(std::move(c));
        }
    }

    job_ = std::move(job);
    for (auto& c : job_->children) spawn_child(lpf, c);
}

void ActivationService::spawn_child(Lpf& lpf, Child& c) {
    int bare = bare_port_from(c.subtree.settings);
    Message spawn;
    spawn.id = lpf.next_message_id();
    spawn.verb = "SpawnLpf";
    spawn.body = {{"name", c.subtree.name},
                  {"host", c.subtree.host},
                  {"port", std::to_string(c.subtree.port)},
                  {"service", c.subtree.get("service")},
                  {"log_file", c.subtree.get("log_dir").empty()
                                   ? ""
                                   : c.subtree.get("log_dir") + "/" + c.subtree.name + ".log"}};
    spawn.destination = endpoint(c.subtree.host, bare, "local-lpf-map");
    spawn.source.module = name_;
    c.spawn_corr = spawn.id;
    std::string err;
    if (!lpf.netlink()->send_remote(lpf, std::move(spawn), &err)) {
        child_failed(lpf, c, "barelpf unreachable at " + c.subtree.host + ":" +
                                 std::to_string(bare) + ": " + err);
    }
}

void ActivationService::child_failed(Lpf& lpf, Child& c, const std::string& cause) {
    std::string policy = c.subtree.on_child_failure();
    if (policy == "RECOVER" && c.attempts == 0) {
        c.attempts = 1;
        lpf.raise_alarm(AlarmLevel::Warning, name_,
                        "child " + c.path + " failed (" + cause + "); recovering once");
        // best effort stop in case the child half-started, then a deferred respawn
        Message stop;
        stop.id = lpf.next_message_id();
        stop.verb = "StopLocalLpf";
        stop.destination = endpoint(c.subtree.host, c.subtree.port, "core");
        std::string ignored;
        lpf.netlink()->send_remote(lpf, std::move(stop), &ignored);
        int64_t now = lpf.clock().now().count();
        c.retry_at_ms = now + kv_get_int(c.subtree.settings, "recover_delay_ms", 1000);
        c.deadline_ms = c.retry_at_ms + int64_t(c.subtree.activation_timeout_s()) * 1000;
        c.spawn_corr.clear();
        c.config_corr.clear();
        return;
    }
    bool ignore = policy == "IGNORE" || (policy == "RECOVER" && c.subtree.recover_fallback() ==
                                                                    "IGNORE");
    finish_child(lpf, c, ignore ? "IGNORED_FAILURE" : "FAILED", cause);
}

void ActivationService::finish_child(Lpf& lpf, Child& c, const std::string& outcome,
                                     const std::string& cause) {
    if (c.terminal) return;
    c.terminal = true;
    c.outcome.outcome = outcome;
    c.outcome.cause = cause;
    c.outcome.ms = lpf.clock().now().count() - c.t0_ms;
    c.spawn_corr.clear();
    c.config_corr.clear();
}

ActivationService::Child* ActivationService::by_corr(const std::string& correlation_id,
                                                     bool spawn_phase) {
    if (job_ == nullptr || correlation_id.empty()) return nullptr;
    for (auto& c : job_->children) {
        if (c.terminal) continue;
        if (spawn_phase && c.spawn_corr == correlation_id) return &c;
        if (!spawn_phase && c.config_corr == correlation_id) return &c;
    }
    return nullptr;
}

std::optional<Message> ActivationService::maybe_finish(Lpf& lpf) {
    if (job_ == nullptr) return std::nullopt;
    for (const auto& c : job_->children)
        if (!c.terminal) return std::nullopt;

    ActivationReport report;
    bool all_ok = !job_->self_failed;
    for (const auto& c : job_->children) {
        ActivationOutcome oc = c.outcome;
        if (auto nit = c.nested.find(c.path); nit != c.nested.end() && oc.cause.empty())
            oc.cause = nit->second.cause;  // the child knows why it failed
        report.lpfs[c.path] = oc;
        for (const auto& [p, sub_oc] : c.nested)
            if (p != c.path) report.lpfs[p] = sub_oc;
        if (c.outcome.outcome == "FAILED") all_ok = false;
    }
    std::string self_outcome = all_ok ? "SUCCESS" : "FAILED";
    if (!job_->master) {
        ActivationOutcome self;
        self.outcome = self_outcome;
        self.ms = lpf.clock().now().count() - job_->t0_ms;
        self.cause = job_->self_cause;
        report.lpfs[job_->self_path] = self;
    }
    report.overall = self_outcome;

    {
        std::lock_guard<std::mutex> lock(report_mu_);
        report_ = report;
    }
    Message answer = job_->request.answer(
        "ConfigReport", {{"outcome", self_outcome}, {"report", report.to_json()}});
    job_.reset();
    return answer;
}

std::optional<ActivationReport> ActivationService::take_report() {
    std::lock_guard<std::mutex> lock(report_mu_);
    auto r = report_;
    report_.reset();
    return r;
}

std::vector<Message> ActivationService::do_message(Lpf& lpf, const Message& m) {
    std::vector<Message> out;
    if (m.verb == "AnswerRequestConfig" || m.verb == "ActivateTree") {
        if (job_ != nullptr) {
            out.push_back(m.answer("ConfigReport",
                                   {{"outcome", "FAILED"}, {"error", "activation in progress"}}));
            return out;
        }
        ConfigNode subtree;
        try {
            subtree = config_from_json(kv_get(m.body, m.verb == "ActivateTree" ? "tree"
                                                                               : "subtree"));
        } catch (const std::exception& ex) {
            out.push_back(m.answer("ConfigReport", {{"outcome", "FAILED"},
                                                    {"error", std::string("bad subtree: ") +
                                                                  ex.what()}}));
            return out;
        }
        start_job(lpf, m, std::move(subtree), m.verb == "ActivateTree");
        if (auto done = maybe_finish(lpf)) out.push_back(std::move(*done));
        return out;
    }

    if (m.verb == "SpawnLpfAnswer") {
        Child* c = by_corr(m.correlation_id, true);
        if (c == nullptr) return out;
        c->spawn_corr.clear();
        if (kv_get(m.body, "ok") != "1") {
            child_failed(lpf, *c, kv_get(m.body, "error", "spawn failed"));
        } else {
            Message cfg;
            cfg.id = lpf.next_message_id();
            cfg.verb = "AnswerRequestConfig";
            cfg.body = {{"subtree", config_to_json(c->subtree)}};
            cfg.destination = endpoint(c->subtree.host, c->subtree.port, "activation");
            cfg.source.module = name_;
            c->config_corr = cfg.id;
            std::string err;
            if (!lpf.netlink()->send_remote(lpf, std::move(cfg), &err))
                child_failed(lpf, *c, "cannot deliver configuration: " + err);
        }
        if (auto done = maybe_finish(lpf)) out.push_back(std::move(*done));
        return out;
    }

    if (m.verb == "ConfigReport") {
        Child* c = by_corr(m.correlation_id, false);
        if (c == nullptr) return out;
        c->config_corr.clear();
        auto sub = ActivationReport::from_json(kv_get(m.body, "report", "{}"));
        if (sub) c->nested = sub->lpfs;
        if (kv_get(m.body, "outcome") == "SUCCESS") {
            finish_child(lpf, *c, c->attempts > 0 ? "RECOVERED" : "SUCCESS", "");
        } else {
            std::string cause = kv_get(m.body, "error");
            if (cause.empty() && sub) {
                auto nit = sub->lpfs.find(c->path);
                if (nit != sub->lpfs.end()) cause = nit->second.cause;
            }
            if (cause.empty()) cause = "child configuration reported failure";
            child_failed(lpf, *c, cause);
        }
        if (auto done = maybe_finish(lpf)) out.push_back(std::move(*done));
        return out;
    }
    return out;
}

std::vector<Message> ActivationService::run(Lpf& lpf) {
    std::vector<Message> out;
    if (job_ == nullptr) return out;
    int64_t now = lpf.clock().now().count();

    for (auto& c : job_->children) {
        if (c.terminal) continue;
        if (c.retry_at_ms > 0 && now >= c.retry_at_ms) {
            c.retry_at_ms = 0;
            spawn_child(lpf, c);
            continue;
        }
        if (c.retry_at_ms == 0 && now >= c.deadline_ms)
            child_failed(lpf, c, "timeout after " +
                                     std::to_string(c.subtree.activation_timeout_s()) + " s");
    }
    if (job_ != nullptr && now >= job_->deadline_ms) {
        for (auto& c : job_->children)
            if (!c.terminal) finish_child(lpf, c, "FAILED", "parent activation timeout");
    }
    if (auto done = maybe_finish(lpf)) out.push_back(std::move(*done));
    return out;
}

// ---------------------------------------------------------------- spawner

void SpawnerModule::init(Lpf& lpf, const Kv& config) {
    lpfd_path_ = kv_get(config, "lpfd_path", "lpfd");
    ready_timeout_ms_ = static_cast<int>(kv_get_int(config, "spawn_ready_timeout_ms", 5000));
    (void)lpf;
}

std::vector<Message> SpawnerModule::do_message(Lpf& lpf, const Message& m) {
    if (m.verb == "SpawnLpf") {
        std::string name = kv_get(m.body, "name");
        int port = static_cast<int>(kv_get_int(m.body, "port"));
        std::string host = kv_get(m.body, "host", lpf.options().host);
        if (name.empty() || port <= 0)
            return {m.answer("SpawnLpfAnswer", {{"ok", "0"}, {"error", "bad spawn request"}})};
        if (!net::port_free(host, port))
            return {m.answer("SpawnLpfAnswer",
                             {{"ok", "0"},
                              {"error", "PortInUse: " + std::to_string(port)}})};

        std::vector<std::string> argv{lpfd_path_, "--name", name, "--host", host,
                                      "--port", std::to_string(port)};
        std::string service = kv_get(m.body, "service");
        if (!service.empty()) {
            argv.push_back("--service");
            argv.push_back(service);
        }
        std::string log_file = kv_get(m.body, "log_file");
        if (!log_file.empty()) {
            argv.push_back("--log-file");
            argv.push_back(log_file);
        }
        std::string handle =
            lpf.supervisor()->start(lpf, argv, {}, {}, local_module("local-lpf-map"));

        Entry e;
        e.lpf_name = name;
        e.port = port;
        e.service = service;
        e.handle = handle;
        e.pid = lpf.supervisor()->query(lpf, handle).pid;
        entries_[name] = e;
        Pending p;
        p.request = m;
        p.lpf_name = name;
        p.port = port;
        p.deadline_ms = lpf.clock().now().count() + ready_timeout_ms_;
        pending_.push_back(std::move(p));
        return {};
    }

    if (m.verb == "LpfMapQuery") {
        json arr = json::array();
        for (const auto& [name, e] : entries_) {
            ProcStatus st = lpf.supervisor()->query(lpf, e.handle);
            arr.push_back({{"name", name},
                           {"port", e.port},
                           {"service", e.service},
                           {"pid", st.pid},
                           {"state", proc_state_name(st.state)},
                           {"ready", e.ready}});
        }
        return {m.answer("LpfMapAnswer", {{"lpfs", arr.dump()}})};
    }

    if (m.verb == "LocalLpfReaper") {
        std::string service = kv_get(m.body, "service");
        bool force = kv_get(m.body, "force") == "1";
        json targeted = json::array();
        for (auto& [name, e] : entries_) {
            if (!service.empty() && e.service != service) continue;
            ProcStatus st = lpf.supervisor()->query(lpf, e.handle);
            if (st.state != ProcState::Running && st.state != ProcState::Starting &&
                st.state != ProcState::Suspended)
                continue;
            targeted.push_back(name);
            if (force) {
                try {
                    lpf.supervisor()->signal(lpf, e.handle, ProcSignal::Kill);
                } catch (const LpfError&) {
                }
            } else {
                Message stop;
                stop.id = lpf.next_message_id();
                stop.verb = "StopLocalLpf";
                stop.destination = endpoint(lpf.options().host, e.port, "core");
                stop.source.module = "local-lpf-map";
                std::string err;
                if (!lpf.netlink()->send_remote(lpf, std::move(stop), &err))
                    lpf.raise_alarm(AlarmLevel::Warning, "local-lpf-map",
                                    "cannot reach " + name + " for reaping: " + err);
            }
        }
        return {m.answer("ReapAnswer", {{"targeted", std::to_string(targeted.size())},
                                        {"lpfs", targeted.dump()}})};
    }

    if (m.verb == "ProcEvent") {
        std::string handle = kv_get(m.body, "handle");
        std::string state = kv_get(m.body, "state");
        if (state == "EXITED" || state == "SIGNALED" || state == "LOST") {
            for (auto it = entries_.begin(); it != entries_.end(); ++it) {
                if (it->second.handle != handle) continue;
                // a pending spawn whose child died is a failed spawn
                for (auto& p : pending_) {
                    if (p.lpf_name == it->first && p.deadline_ms > 0) {
                        p.deadline_ms = -1;  // settle in run()
                    }
                }
                entries_.erase(it);
                break;
            }
        }
        return {};
    }
    return {};
}

std::vector<Message> SpawnerModule::run(Lpf& lpf) {
    std::vector<Message> out;
    int64_t now = lpf.clock().now().count();
    for (auto it = pending_.begin(); it != pending_.end();) {
        bool done = false;
        if (it->deadline_ms == -1) {
            std::string detail = "SpawnFailure: lpf process exited during startup";
            auto eit = entries_.find(it->lpf_name);
            out.push_back(it->request.answer("SpawnLpfAnswer", {{"ok", "0"}, {"error", detail}}));
            (void)eit;
            done = true;
        } else if (now >= it->deadline_ms) {
            out.push_back(it->request.answer(
                "SpawnLpfAnswer",
                {{"ok", "0"}, {"error", "SpawnFailure: not reachable within timeout"}}));
            auto eit = entries_.find(it->lpf_name);
            if (eit != entries_.end()) {
                try {
                    lpf.supervisor()->signal(lpf, eit->second.handle, ProcSignal::Kill);
                } catch (const LpfError&) {
                }
            }
            done = true;
        } else {
            std::string err;
            int fd = net::connect_tcp(lpf.options().host, it->port, 50, &err);
            if (fd >= 0) {
                net::close_fd(fd);
                int64_t pid = 0;
                auto eit = entries_.find(it->lpf_name);
                if (eit != entries_.end()) {
                    eit->second.ready = true;
                    pid = eit->second.pid;
                }
                out.push_back(it->request.answer(
                    "SpawnLpfAnswer",
                    {{"ok", "1"}, {"pid", std::to_string(pid)}, {"port", std::to_string(it->port)}}));
                done = true;
            }
        }
        it = done ? pending_.erase(it) : std::next(it);
    }
    return out;
}

}  // namespace lpf
