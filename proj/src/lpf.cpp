#include "lpf/lpf.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

#include "lpf/errors.hpp"
#include "lpf/mpx.hpp"
#include "lpf/naming.hpp"
#include "lpf/net.hpp"
#include "lpf/netlink.hpp"
#include "lpf/procsup.hpp"

namespace lpf {

namespace {

std::string random_session() {
    std::random_device rd;
    std::mt19937_64 gen(rd());
    std::uniform_int_distribution<uint64_t> dist;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08x", static_cast<unsigned>(dist(gen) & 0xffffffffu));
    return buf;
}

/// Core passive module: status queries, stop handling, ping.
class CoreModule final : public Module {
public:
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override {
        if (m.verb == "LpfStatus") return {m.answer("LpfStatusAnswer", lpf.status())};
        if (m.verb == "Ping") return {m.answer("Pong")};
        if (m.verb == "StopLocalLpf") {
            lpf.request_stop();
            return {m.answer("StopLocalLpfAck", {{"name", lpf.options().name}})};
        }
        return {};
    }
};

}  // namespace

std::optional<HostPort> parse_host_port(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= text.size()) return std::nullopt;
    int port = 0;
    try {
        port = std::stoi(text.substr(colon + 1));
    } catch (...) {
        return std::nullopt;
    }
    if (port <= 0 || port > 65535) return std::nullopt;
    return HostPort{text.substr(0, colon), port};
}

Lpf::Lpf(Options opt) : opt_(std::move(opt)) {
    clock_ = opt_.clock ? opt_.clock : system_clock();
    session_ = random_session();
    started_at_ = clock_->now();

    std::string pol = config_get("undeliverable_policy", "discard_alarm");
    if (pol == "discard_silent") policy_ = UndeliverablePolicy::DiscardSilent;
    else if (pol == "activate_on_demand") policy_ = UndeliverablePolicy::ActivateOnDemand;
    else policy_ = UndeliverablePolicy::DiscardAlarm;
    hook_budget_ms_ = static_cast<int>(config_get_int("hook_budget_ms", 500));
    idle_sleep_ms_ = static_cast<int>(config_get_int("idle_sleep_ms", 20));

    register_module({"core", ModuleKind::Passive, {}, true}, std::make_unique<CoreModule>());
    auto netlink = std::make_unique<NetLink>();
    netlink_ = netlink.get();
    register_module({"netlink", ModuleKind::Active, opt_.config, true}, std::move(netlink));
    auto sup = std::make_unique<ProcessSupervisor>();
    supervisor_ = sup.get();
    register_module({"sysproc", ModuleKind::Active, opt_.config, true}, std::move(sup));
}

Lpf::~Lpf() {
    try {
        shutdown();
    } catch (...) {
    }
}

void Lpf::start() {
    if (opt_.port <= 0 || mpx_ != nullptr) return;
    auto mpx = std::make_unique<MpxServer>();
    mpx_ = mpx.get();
    try {
        register_module({"mpx", ModuleKind::Active, opt_.config, true}, std::move(mpx));
    } catch (...) {
        mpx_ = nullptr;
        throw;
    }
}

void Lpf::register_factory(const std::string& name, ModuleKind kind, ModuleFactory f) {
    factories_[name] = FactoryEntry{kind, std::move(f)};
}

bool Lpf::has_factory(const std::string& name) const { return factories_.count(name) > 0; }

Lpf::Entry* Lpf::find_entry(const std::string& name) {
    for (auto& e : modules_)
        if (e.spec.name == name) return &e;
    return nullptr;
}

Module* Lpf::find_module(const std::string& name) {
    Entry* e = find_entry(name);
    return e ? e->impl.get() : nullptr;
}

std::vector<std::string> Lpf::module_names(bool include_internal) const {
    std::vector<std::string> out;
    for (const auto& e : modules_)
        if (include_internal || !e.spec.internal) out.push_back(e.spec.name);
    return out;
}

std::string Lpf::register_module(const ModuleSpec& spec, std::unique_ptr<Module> impl) {
    if (spec.name.empty())
        throw LpfError(Errc::DuplicateName, "module name must be non-empty");
    if (find_entry(spec.name) != nullptr)
        throw LpfError(Errc::DuplicateName, "module '" + spec.name + "' already registered");
    modules_.push_back(Entry{spec, std::move(impl), 0});
    modules_.back().spec.config["__name"] = spec.name;  // modules learn their instance name
    try {
        modules_.back().impl->init(*this, modules_.back().spec.config);
    } catch (const LpfError& ex) {
        modules_.pop_back();
        raise_alarm(AlarmLevel::Error, spec.name, std::string("init failed: ") + ex.what());
        throw;
    } catch (const std::exception& ex) {
        modules_.pop_back();
        raise_alarm(AlarmLevel::Error, spec.name, std::string("init failed: ") + ex.what());
        throw LpfError(Errc::InitFailure, spec.name + ": " + ex.what());
    }
    return spec.name;
}

ActivationResult Lpf::activate_module(const std::string& name, Kv config, Scope scope,
                                      const std::string& instance_name) {
    auto fit = factories_.find(name);
    if (fit == factories_.end())
        throw LpfError(Errc::UnknownModule, "no factory registered for '" + name + "'");
    const std::string inst = instance_name.empty() ? name : instance_name;

    ModuleKind kind = fit->second.kind;
    if (auto k = config.find("kind"); k != config.end())
        kind = (k->second == "active") ? ModuleKind::Active : ModuleKind::Passive;

    if (scope == Scope::Local) {
        register_module({inst, kind, config, false}, fit->second.make());
        return {false, inst};
    }

    // Global: ask naming whether the service already runs in this domain.
    std::string domain = kv_get(config, "domain", default_domain());
    auto broker = broker_for(domain);
    if (!broker) {
        raise_alarm(AlarmLevel::Error, inst, "no naming broker configured for domain " + domain);
        throw LpfError(Errc::NamingUnavailable, "no broker for domain " + domain);
    }
    int timeout = static_cast<int>(config_get_int("rpc_timeout_ms", 2000));
    auto lr = ns::lookup(broker->host, broker->port, domain, inst, timeout);
    if (!lr.ok) {
        raise_alarm(AlarmLevel::Error, inst, "naming lookup failed: " + lr.error);
        throw LpfError(Errc::NamingUnavailable, lr.error);
    }
    if (lr.found && !(lr.host == opt_.host && lr.port == opt_.port)) {
        ModuleSpec spec{inst, ModuleKind::Passive, config, false};
        register_module(spec, std::make_unique<ProxyModule>(inst, domain, lr.host, lr.port));
        return {true, inst};
    }

    if (opt_.port <= 0)
        throw LpfError(Errc::NamingUnavailable,
                       "cannot register global service '" + inst + "': LPF has no listener");
    register_module({inst, kind, config, false}, fit->second.make());
    ServiceRecord rec{domain, inst, opt_.host, opt_.port, 0, clock_->wall_unix_ms(), false};
    std::string err;
    int acks = ns::register_service(broker->host, broker->port, rec, timeout, &err);
    if (acks < 0) {
        unload_module(inst);
        raise_alarm(AlarmLevel::Error, inst, "naming registration failed: " + err);
        throw LpfError(Errc::NamingUnavailable, err);
    }
    registered_services_.emplace_back(domain, inst);
    return {false, inst};
}

void Lpf::unload_module(const std::string& name) {
    for (auto it = modules_.begin(); it != modules_.end(); ++it) {
        if (it->spec.name != name) continue;
        try {
            it->impl->kill(*this);
        } catch (const std::exception& ex) {
            raise_alarm(AlarmLevel::Warning, name, std::string("kill hook fault: ") + ex.what());
        }
        modules_.erase(it);
        break;
    }
    for (auto it = registered_services_.begin(); it != registered_services_.end();) {
        if (it->second == name) {
            ns_unregister(it->first, it->second);
            it = registered_services_.erase(it);
        } else {
            ++it;
        }
    }
}

void Lpf::send(Message m) {
    if (m.id.empty()) m.id = next_message_id();
    queue_.push_back(std::move(m));
}

void Lpf::stamp_source(Message& m, const std::string& origin_module) {
    if (m.source.module.empty()) m.source.module = origin_module;
    if (m.source.host.empty() && opt_.port > 0) {
        m.source.host = opt_.host;
        m.source.port = opt_.port;
    }
    if (m.source.domain == kLocalDomain || m.source.domain.empty())
        m.source.domain = default_domain();
}

void Lpf::post(Message m) {
    std::lock_guard<std::mutex> lock(inbox_mu_);
    inbox_.push_back(std::move(m));
}

std::string Lpf::next_message_id() {
    return opt_.name + "-" + session_ + "-" + std::to_string(++id_seq_);
}

std::string Lpf::schedule_cron(Millis period, Message tmpl) {
    if (period.count() <= 0)
        throw LpfError(Errc::InvalidPeriod, "cron period must be positive");
    CronEntry e;
    e.schedule_id = "cron-" + std::to_string(++cron_seq_);
    e.period = period;
    e.next_due = clock_->now() + period;
    e.tmpl = std::move(tmpl);
    cron_.push_back(std::move(e));
    return cron_.back().schedule_id;
}

bool Lpf::cancel_cron(const std::string& schedule_id) {
    auto it = std::find_if(cron_.begin(), cron_.end(),
                           [&](const CronEntry& e) { return e.schedule_id == schedule_id; });
    if (it == cron_.end()) return false;
    cron_.erase(it);
    return true;
}

void Lpf::raise_alarm(AlarmLevel level, const std::string& origin_module,
                      const std::string& text) {
    Alarm a;
    a.level = level;
    a.origin = endpoint(opt_.host, opt_.port, origin_module, default_domain());
    a.text = text;
    a.wall_ms = clock_->wall_unix_ms();
    alarms_.push_back(a);
    if (alarms_.size() > 1000) alarms_.pop_front();
    append_log(a);
    if (level == AlarmLevel::Fatal) degraded_ = true;

    std::string handler = config_get("alarm_service");
    if (!handler.empty() && !in_alarm_forward_) {
        in_alarm_forward_ = true;
        Message m;
        m.verb = "Alarm";
        m.destination = service_addr(config_get("alarm_domain", default_domain()), handler);
        m.body = {{"level", alarm_level_name(level)},
                  {"origin", a.origin.str()},
                  {"text", text},
                  {"wall_ms", std::to_string(a.wall_ms)}};
        stamp_source(m, "core");
        send(std::move(m));
        in_alarm_forward_ = false;
    }
}

void Lpf::append_log(const Alarm& a) {
    std::string path = config_get("log_file");
    if (path.empty()) return;
    std::ofstream out(path, std::ios::app);
    if (!out) return;
    out << iso8601_utc(a.wall_ms) << '\t' << alarm_level_name(a.level) << '\t' << a.origin.module
        << '\t' << a.text << '\n';
}

bool Lpf::guarded(Entry& e, const char* hook, const std::function<void()>& fn) {
    const std::string name = e.spec.name;
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    try {
        fn();
        e.fault_streak = 0;
    } catch (const std::exception& ex) {
        ok = false;
        int streak = ++e.fault_streak;
        raise_alarm(AlarmLevel::Error, name,
                    std::string(hook) + " fault (" + std::to_string(streak) + "): " + ex.what());
        if (streak >= 3) {
            raise_alarm(AlarmLevel::Warning, name, "unloaded after 3 consecutive faults");
            unload_module(name);  // e is dangling from here on
            auto ms = std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - t0);
            if (ms.count() > hook_budget_ms_)
                raise_alarm(AlarmLevel::Warning, name,
                            "hook budget exceeded: " + std::to_string(ms.count()) + " ms");
            return false;
        }
    }
    auto ms = std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - t0);
    if (ms.count() > hook_budget_ms_)
        raise_alarm(AlarmLevel::Warning, name,
                    "hook budget exceeded: " + std::to_string(ms.count()) + " ms");
    return ok;
}

IterationTrace Lpf::run_once() {
    IterationTrace tr;
    const Millis now = clock_->now();

    // externally posted messages
    {
        std::vector<Message> posted;
        {
            std::lock_guard<std::mutex> lock(inbox_mu_);
            posted.swap(inbox_);
        }
        for (auto& m : posted) send(std::move(m));
    }

    // cron
    for (auto& ce : cron_) {
        while (ce.next_due <= now) {
            Message inst = ce.tmpl;
            inst.id.clear();
            stamp_source(inst, "cron");
            send(std::move(inst));
            ce.next_due += ce.period;
            tr.steps.push_back({TraceStep::Kind::Cron, "cron", ce.schedule_id});
        }
    }

    // one Run per active module, in registration order
    std::vector<std::string> order;
    for (const auto& e : modules_)
        if (e.spec.kind == ModuleKind::Active) order.push_back(e.spec.name);
    for (const auto& name : order) {
        Entry* e = find_entry(name);
        if (e == nullptr) continue;  // unloaded earlier this iteration
        tr.steps.push_back({e->spec.internal ? TraceStep::Kind::Poll : TraceStep::Kind::Run,
                            name, ""});
        std::vector<Message> out;
        bool foreign = e->impl->emits_foreign();
        if (guarded(*e, "Run", [&] { out = find_entry(name)->impl->run(*this); })) {
            for (auto& m : out) {
                if (!foreign) stamp_source(m, name);
                send(std::move(m));
            }
        }
    }

    // dispatch the queue; answers produced now land in the next iteration
    std::deque<Message> batch;
    batch.swap(queue_);
    tr.messages_in = static_cast<int>(batch.size());
    for (auto& m : batch) dispatch_one(std::move(m), tr);

    iterations_++;
    last_trace_ = tr;
    return tr;
}

void Lpf::dispatch_one(Message m, IterationTrace& tr) {
    if (m.hop_count > kMaxHops) {
        drop(m, "loop-guard: hop count " + std::to_string(m.hop_count), true, tr);
        return;
    }

    // answers to client queries go back through the server front-end
    if (!m.correlation_id.empty() && mpx_ != nullptr) {
        if (mpx_->has_route(m.correlation_id)) {
            if (mpx_->route_answer(*this, m)) {
                tr.steps.push_back({TraceStep::Kind::Do, "mpx", "route:" + m.verb});
                tr.delivered++;
            } else {
                raise_alarm(AlarmLevel::Warning, "mpx", "stale reply route for " + m.correlation_id);
                drop(m, "stale-route", false, tr);
            }
            return;
        }
        if (mpx_->route_consumed(m.correlation_id)) {
            raise_alarm(AlarmLevel::Warning, "mpx",
                        "duplicate answer for consumed route " + m.correlation_id);
            drop(m, "stale-route", false, tr);
            return;
        }
    }

    const Address& dest = m.destination;
    bool self_endpoint = dest.has_endpoint() && dest.host == opt_.host && dest.port == opt_.port;
    if (dest.has_endpoint() && !self_endpoint) {
        if (forward_remote(m, tr)) {
            tr.delivered++;
        }
        return;
    }

    std::string target = !dest.module.empty() ? dest.module
                         : !dest.service.empty() ? dest.service
                                                 : "core";
    Entry* e = find_entry(target);
    if (e == nullptr && !dest.service.empty()) e = find_entry(dest.service);

    if (e == nullptr && policy_ == UndeliverablePolicy::ActivateOnDemand) {
        try {
            if (!dest.service.empty()) {
                activate_module(dest.service, {{"domain", dest.domain}}, Scope::Global);
                e = find_entry(dest.service);
            } else if (has_factory(target)) {
                activate_module(target, {}, Scope::Local);
                e = find_entry(target);
            }
        } catch (const std::exception& ex) {
            raise_alarm(AlarmLevel::Error, target,
                        std::string("on-demand activation failed: ") + ex.what());
        }
    }

    if (e != nullptr) {
        deliver_local(*e, m, tr);
        return;
    }
    drop(m, "no receiver '" + target + "' for verb " + m.verb,
         policy_ != UndeliverablePolicy::DiscardSilent && m.verb != "Alarm", tr);
}

void Lpf::deliver_local(Entry& e, const Message& m, IterationTrace& tr) {
    const std::string name = e.spec.name;
    tr.steps.push_back({TraceStep::Kind::Do, name, m.verb});
    std::vector<Message> out;
    if (guarded(e, "Do", [&] { out = find_entry(name)->impl->do_message(*this, m); })) {
        for (auto& a : out) {
            stamp_source(a, name);
            send(std::move(a));
        }
    }
    tr.delivered++;
}

bool Lpf::forward_remote(Message m, IterationTrace& tr) {
    std::string err;
    if (netlink_ == nullptr || !netlink_->send_remote(*this, m, &err)) {
        drop(m, "unroutable: " + err, true, tr);
        return false;
    }
    tr.steps.push_back({TraceStep::Kind::Do, "netlink", "forward:" + m.verb});
    return true;
}

void Lpf::drop(const Message& m, const std::string& cause, bool alarm, IterationTrace& tr) {
    tr.dropped++;
    tr.steps.push_back({TraceStep::Kind::Drop, m.destination.module, cause});
    if (alarm) {
        AlarmLevel level = cause.rfind("no receiver", 0) == 0 ? AlarmLevel::Warning
                                                              : AlarmLevel::Error;
        raise_alarm(level, "dispatch", cause + " (verb " + m.verb + ", id " + m.id + ")");
    }
}

void Lpf::run() {
    start();
    std::vector<int> fds;
    while (!stop_.load()) {
        IterationTrace tr = run_once();
        if (tr.messages_in == 0 && queue_.empty()) {
            // idle: block on the sockets so traffic wakes the loop instantly,
            // bounded by the pacing interval for cron/child polling
            fds.clear();
            if (mpx_ != nullptr) mpx_->collect_fds(fds);
            if (netlink_ != nullptr) netlink_->collect_fds(fds);
            if (supervisor_ != nullptr) supervisor_->collect_fds(fds);
            if (fds.empty()) {
                clock_->sleep_for(Millis(idle_sleep_ms_));
            } else {
                net::poll_any(fds.data(), fds.size(), idle_sleep_ms_);
            }
        }
    }
    // flush pending answers (the stop ack in particular) before teardown
    for (int i = 0; i < 25; i++) {
        bool pending = (mpx_ != nullptr && mpx_->pending_output()) ||
                       (netlink_ != nullptr && netlink_->pending_output()) || !queue_.empty();
        if (!pending) break;
        run_once();
        clock_->sleep_for(Millis(5));
    }
    shutdown();
}

void Lpf::shutdown() {
    if (shut_down_) return;
    shut_down_ = true;
    for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) {
        try {
            it->impl->kill(*this);
        } catch (...) {
        }
    }
    for (const auto& [domain, service] : registered_services_) ns_unregister(domain, service);
    registered_services_.clear();
    mpx_ = nullptr;
    netlink_ = nullptr;
    supervisor_ = nullptr;
    modules_.clear();
}

std::optional<HostPort> Lpf::broker_for(const std::string& domain) const {
    std::string v = config_get("naming_broker." + domain);
    if (v.empty() && domain == default_domain()) v = config_get("naming_broker");
    if (v.empty()) return std::nullopt;
    return parse_host_port(v);
}

std::string Lpf::default_domain() const { return config_get("domain", "default"); }

bool Lpf::ns_register_self(const std::string& domain, const std::string& service,
                           std::string* err) {
    auto broker = broker_for(domain);
    if (!broker) {
        if (err) *err = "no broker for domain " + domain;
        return false;
    }
    ServiceRecord rec{domain, service, opt_.host, opt_.port, 0, clock_->wall_unix_ms(), false};
    int acks = ns::register_service(broker->host, broker->port, rec,
                                    static_cast<int>(config_get_int("rpc_timeout_ms", 2000)), err);
    if (acks < 0) return false;
    registered_services_.emplace_back(domain, service);
    return true;
}

bool Lpf::ns_unregister(const std::string& domain, const std::string& service) {
    auto broker = broker_for(domain);
    if (!broker) return false;
    std::string err;
    return ns::unregister_service(broker->host, broker->port, domain, service,
                                  static_cast<int>(config_get_int("rpc_timeout_ms", 2000)),
                                  &err) >= 0;
}

std::optional<HostPort> Lpf::ns_lookup(const std::string& domain, const std::string& service,
                                       std::string* err) {
    auto broker = broker_for(domain);
    if (!broker) {
        if (err) *err = "no broker for domain " + domain;
        return std::nullopt;
    }
    auto lr = ns::lookup(broker->host, broker->port, domain, service,
                         static_cast<int>(config_get_int("rpc_timeout_ms", 2000)));
    if (!lr.ok || !lr.found) {
        if (err) *err = lr.ok ? "not found" : lr.error;
        return std::nullopt;
    }
    return HostPort{lr.host, lr.port};
}

std::string Lpf::config_get(const std::string& key, const std::string& def) const {
    return kv_get(opt_.config, key, def);
}

int64_t Lpf::config_get_int(const std::string& key, int64_t def) const {
    return kv_get_int(opt_.config, key, def);
}

Kv Lpf::status() const {
    Kv s;
    s["name"] = opt_.name;
    s["service"] = opt_.service_marker;
    s["host"] = opt_.host;
    s["port"] = std::to_string(opt_.port);
    auto up = clock_->now() - started_at_;
    s["uptime_s"] = std::to_string(up.count() / 1000);
    std::string mods;
    for (const auto& e : modules_) {
        if (!mods.empty()) mods += ",";
        mods += e.spec.name;
    }
    s["modules"] = mods;
    s["queue_depth"] = std::to_string(queue_.size());
    s["degraded"] = degraded_ ? "1" : "0";
    return s;
}

const char* alarm_level_name(AlarmLevel level) {
    switch (level) {
        case AlarmLevel::Info: return "INFO";
        case AlarmLevel::Warning: return "WARNING";
        case AlarmLevel::Error: return "ERROR";
        case AlarmLevel::Fatal: return "FATAL";
    }
    return "?";
}

}  // namespace lpf
