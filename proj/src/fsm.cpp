#include "lpf/fsm.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lpf/lpf.hpp"

namespace lpf {

using nlohmann::json;

// ------------------------------------------------------------- definition

const StateDef* FsmDefinition::state(const std::string& state_name) const {
    for (const auto& [n, def] : states)
        if (n == state_name) return &def;
    return nullptr;
}

bool FsmDefinition::structurally_equal(const FsmDefinition& other) const {
    if (name != other.name || begin != other.begin || states.size() != other.states.size())
        return false;
    std::map<std::string, StateDef> a(states.begin(), states.end());
    std::map<std::string, StateDef> b(other.states.begin(), other.states.end());
    return a == b;
}

// ----------------------------------------------------------------- parser

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream is(line);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

StateDef& state_slot(FsmDefinition& def, const std::string& name) {
    for (auto& [n, sd] : def.states)
        if (n == name) return sd;
    def.states.emplace_back(name, StateDef{});
    return def.states.back().second;
}

}  // namespace

FsmDefinition parse_fsm(const std::string& text) {
    FsmDefinition def;
    bool saw_name = false, saw_begin = false;
    int lineno = 0;
    std::istringstream in(text);
    std::string raw;
    while (std::getline(in, raw)) {
        lineno++;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        auto toks = tokenize(raw);
        if (toks.empty()) continue;

        if (toks[0] == "FSM:") {
            if (toks.size() != 2) throw FsmParseError(lineno, "FSM: expects exactly one name");
            if (saw_name && def.name != toks[1])
                throw FsmParseError(lineno, "duplicate FSM name binding");
            def.name = toks[1];
            saw_name = true;
            continue;
        }
        if (toks[0] == "begin:") {
            if (toks.size() != 2) throw FsmParseError(lineno, "begin: expects exactly one state");
            if (saw_begin && def.begin != toks[1])
                throw FsmParseError(lineno, "duplicate begin binding");
            def.begin = toks[1];
            saw_begin = true;
            continue;
        }
        if (toks[0] != "state:")
            throw FsmParseError(lineno, "unknown clause '" + toks[0] + "'");
        if (toks.size() < 4)
            throw FsmParseError(lineno, "incomplete state clause");

        const std::string& state_name = toks[1];
        const std::string& what = toks[2];
        StateDef& sd = state_slot(def, state_name);

        if (what == "isA:") {
            if (toks.size() != 4) throw FsmParseError(lineno, "isA: expects one class name");
            if (!sd.impl.empty() && sd.impl != toks[3])
                throw FsmParseError(lineno, "conflicting isA binding for state " + state_name);
            sd.impl = toks[3];
        } else if (what == "onTransition:") {
            if (toks.size() != 6 || toks[4] != "do:")
                throw FsmParseError(lineno, "expected: onTransition: <name> do: <method>");
            auto it = sd.transitions.find(toks[3]);
            if (it != sd.transitions.end() && it->second != toks[5])
                throw FsmParseError(lineno, "conflicting binding for transition " + toks[3] +
                                                " in state " + state_name);
            sd.transitions[toks[3]] = toks[5];
        } else if (what == "onEntry:") {
            if (toks.size() != 4) throw FsmParseError(lineno, "onEntry: expects one method");
            if (!sd.on_entry.empty() && sd.on_entry != toks[3])
                throw FsmParseError(lineno, "conflicting onEntry binding for " + state_name);
            sd.on_entry = toks[3];
        } else if (what == "onExit:") {
            if (toks.size() != 4) throw FsmParseError(lineno, "onExit: expects one method");
            if (!sd.on_exit.empty() && sd.on_exit != toks[3])
                throw FsmParseError(lineno, "conflicting onExit binding for " + state_name);
            sd.on_exit = toks[3];
        } else if (what == "timeout:") {
            if (toks.size() != 4) throw FsmParseError(lineno, "timeout: expects seconds");
            int secs = 0;
            try {
                secs = std::stoi(toks[3]);
            } catch (...) {
                throw FsmParseError(lineno, "timeout value '" + toks[3] + "' is not a number");
            }
            if (sd.timeout_s && *sd.timeout_s != secs)
                throw FsmParseError(lineno, "conflicting timeout binding for " + state_name);
            sd.timeout_s = secs;
        } else {
            throw FsmParseError(lineno, "unknown state clause '" + what + "'");
        }
    }
    if (!saw_name) throw FsmParseError(lineno, "missing FSM: name clause");
    if (!saw_begin) throw FsmParseError(lineno, "missing begin: clause");
    return def;
}

std::string pretty_print(const FsmDefinition& def) {
    std::ostringstream out;
    out << "FSM: " << def.name << "\n";
    out << "begin: " << def.begin << "\n";
    for (const auto& [name, sd] : def.states) {
        if (!sd.impl.empty()) out << "state: " << name << " isA: " << sd.impl << "\n";
        if (!sd.on_entry.empty()) out << "state: " << name << " onEntry: " << sd.on_entry << "\n";
        if (!sd.on_exit.empty()) out << "state: " << name << " onExit: " << sd.on_exit << "\n";
        for (const auto& [t, m] : sd.transitions)
            out << "state: " << name << " onTransition: " << t << " do: " << m << "\n";
        if (sd.timeout_s) out << "state: " << name << " timeout: " << *sd.timeout_s << "\n";
    }
    return out.str();
}

// ------------------------------------------------------------- validation

std::vector<std::string> validate_fsm(const FsmDefinition& def, const StateRegistry& registry) {
    std::vector<std::string> errors;
    if (def.name.empty()) errors.push_back("MissingFsmName: definition has no name");
    if (def.begin.empty()) {
        errors.push_back("MissingBegin: definition has no begin state");
    } else if (def.state(def.begin) == nullptr) {
        errors.push_back("UndefinedBegin: begin state '" + def.begin + "' is not defined");
    }
    for (const auto& [name, sd] : def.states) {
        if (sd.impl.empty())
            errors.push_back("MissingImplementation: state '" + name + "' has no isA binding");
        else if (!registry.has(sd.impl))
            errors.push_back("UnknownImplementation: state '" + name + "' isA '" + sd.impl +
                             "' is not registered");
        if (sd.timeout_s && *sd.timeout_s <= 0)
            errors.push_back("InvalidTimeout: state '" + name + "' timeout must be positive");
    }
    return errors;
}

// -------------------------------------------------------------- registry

MethodResult StateImpl::invoke(const std::string& method, FsmContext& ctx) {
    auto it = methods_.find(method);
    if (it == methods_.end())
        throw LpfError(Errc::ValidationError,
                       "state " + ctx.state_name + " has no method '" + method + "'");
    return it->second(ctx);
}

std::unique_ptr<StateImpl> StateRegistry::make(const std::string& impl_name) const {
    auto it = factories_.find(impl_name);
    if (it == factories_.end())
        throw LpfError(Errc::ValidationError, "unknown state implementation " + impl_name);
    return it->second();
}

StateRegistry& StateRegistry::global() {
    static StateRegistry instance;
    return instance;
}

// -------------------------------------------------------------- instance

const char* fsm_status_name(FsmStatus s) {
    switch (s) {
        case FsmStatus::Ready: return "READY";
        case FsmStatus::Running: return "RUNNING";
        case FsmStatus::Finished: return "FINISHED";
        case FsmStatus::Faulted: return "FAULTED";
    }
    return "?";
}

FsmInstance::FsmInstance(FsmDefinition def, const StateRegistry& registry, Kv run_config)
    : def_(std::move(def)), run_config_(std::move(run_config)) {
    auto errors = validate_fsm(def_, registry);
    if (!errors.empty()) {
        std::string all;
        for (const auto& e : errors) all += (all.empty() ? "" : "; ") + e;
        throw LpfError(Errc::ValidationRequired, all);
    }
    // tunable per-state timeouts: run_config "timeout.<State>" overrides
    for (auto& [name, sd] : def_.states) {
        auto it = run_config_.find("timeout." + name);
        if (it != run_config_.end()) {
            int secs = static_cast<int>(kv_get_int(run_config_, "timeout." + name, 0));
            if (secs > 0) sd.timeout_s = secs;
        }
    }
    // fresh state objects for every instantiation
    for (const auto& [name, sd] : def_.states) impls_[name] = registry.make(sd.impl);
    current_ = def_.begin;
}

void FsmInstance::enter(const std::string& state, Millis now) {
    current_ = state;
    entered_at_ = now;
    timeout_fired_ = false;
}

void FsmInstance::finish_check() {
    const StateDef* sd = def_.state(current_);
    if (sd != nullptr && sd->transitions.empty() && !sd->timeout_s)
        status_ = FsmStatus::Finished;
}

MethodResult FsmInstance::invoke_hook(const std::string& state, const std::string& method,
                                      const std::string& transition, const Kv* payload, Lpf* lpf,
                                      StepOutcome& outcome) {
    FsmContext ctx;
    ctx.lpf = lpf;
    ctx.run_config = &run_config_;
    ctx.scratch = &scratch_;
    ctx.payload = payload;
    ctx.fsm_name = def_.name;
    ctx.state_name = state;
    ctx.transition = transition;
    MethodResult r = impls_.at(state)->invoke(method, ctx);
    for (auto& m : r.out) outcome.out.push_back(std::move(m));
    return r;
}

FsmInstance::StepOutcome FsmInstance::start(Lpf* lpf, Millis now, int64_t wall_ms) {
    StepOutcome oc;
    if (status_ != FsmStatus::Ready) {
        oc.error = "start on " + std::string(fsm_status_name(status_)) + " instance";
        return oc;
    }
    status_ = FsmStatus::Running;
    enter(def_.begin, now);
    const StateDef* sd = def_.state(current_);
    std::string auto_t;
    if (!sd->on_entry.empty()) {
        trace_.push_back({"entry", current_, "", sd->on_entry, wall_ms});
        try {
            MethodResult r = invoke_hook(current_, sd->on_entry, "__start__", nullptr, lpf, oc);
            auto_t = r.auto_transition;
        } catch (const std::exception& ex) {
            status_ = FsmStatus::Faulted;
            oc.error = std::string("HookFault in entry(") + current_ + "): " + ex.what();
            return oc;
        }
    } else {
        trace_.push_back({"entry", current_, "", "", wall_ms});
    }
    finish_check();
    oc.ok = true;
    if (!auto_t.empty() && status_ == FsmStatus::Running) {
        StepOutcome chained = step(auto_t, {}, lpf, now, wall_ms);
        for (auto& m : chained.out) oc.out.push_back(std::move(m));
        oc.ok = chained.ok;
        oc.error = chained.error;
    }
    return oc;
}

FsmInstance::StepOutcome FsmInstance::step(const std::string& transition, const Kv& payload,
                                           Lpf* lpf, Millis now, int64_t wall_ms) {
    return run_step(transition, &payload, lpf, now, wall_ms, false);
}

FsmInstance::StepOutcome FsmInstance::run_step(const std::string& transition, const Kv* payload,
                                               Lpf* lpf, Millis now, int64_t wall_ms, bool) {
    StepOutcome oc;
    std::string pending = transition;
    const Kv* pending_payload = payload;
    int chain_guard = 0;

    while (!pending.empty()) {
        if (++chain_guard > 100) {
            status_ = FsmStatus::Faulted;
            oc.error = "auto-transition chain exceeded 100 steps";
            oc.ok = false;
            return oc;
        }
        if (status_ != FsmStatus::Running) {
            oc.error = "step on " + std::string(fsm_status_name(status_)) + " instance";
            oc.ok = false;
            return oc;
        }
        const StateDef* sd = def_.state(current_);
        auto tit = sd->transitions.find(pending);
        if (tit == sd->transitions.end()) {
            oc.error = "UndefinedTransition: '" + pending + "' in state " + current_;
            if (undefined_policy_ == UndefinedPolicy::Fault) status_ = FsmStatus::Faulted;
            oc.ok = false;
            return oc;
        }
        const std::string old_state = current_;
        const std::string method = tit->second;

        try {
            if (!sd->on_exit.empty()) {
                trace_.push_back({"exit", old_state, "", sd->on_exit, wall_ms});
                invoke_hook(old_state, sd->on_exit, pending, pending_payload, lpf, oc);
            }
            trace_.push_back({"action", old_state, pending, method, wall_ms});
            MethodResult action = invoke_hook(old_state, method, pending, pending_payload, lpf, oc);
            if (action.next_state.empty()) {
                status_ = FsmStatus::Faulted;
                oc.error = "transition method " + method + " returned no next state";
                oc.ok = false;
                return oc;
            }
            const StateDef* next_sd = def_.state(action.next_state);
            if (next_sd == nullptr) {
                status_ = FsmStatus::Faulted;
                oc.error = "transition to undefined state '" + action.next_state + "'";
                oc.ok = false;
                return oc;
            }
            enter(action.next_state, now);
            std::string auto_t;
            if (!next_sd->on_entry.empty()) {
                trace_.push_back({"entry", current_, "", next_sd->on_entry, wall_ms});
                MethodResult entry =
                    invoke_hook(current_, next_sd->on_entry, pending, pending_payload, lpf, oc);
                auto_t = entry.auto_transition;
            } else {
                trace_.push_back({"entry", current_, "", "", wall_ms});
            }
            finish_check();
            pending = (status_ == FsmStatus::Running) ? auto_t : "";
            pending_payload = nullptr;
        } catch (const std::exception& ex) {
            status_ = FsmStatus::Faulted;
            oc.error = std::string("HookFault: ") + ex.what();
            oc.ok = false;
            return oc;
        }
    }
    oc.ok = true;
    return oc;
}

std::optional<std::string> FsmInstance::check_timeout(Millis now) {
    if (status_ != FsmStatus::Running || timeout_fired_) return std::nullopt;
    const StateDef* sd = def_.state(current_);
    if (sd == nullptr || !sd->timeout_s || *sd->timeout_s <= 0) return std::nullopt;
    Millis d = dwell(now);
    if (d.count() <= int64_t(*sd->timeout_s) * 1000) return std::nullopt;
    timeout_fired_ = true;
    return "fsm " + def_.name + " state " + current_ + " dwell " + std::to_string(d.count()) +
           " ms exceeds timeout " + std::to_string(*sd->timeout_s) + " s";
}

std::vector<std::string> FsmInstance::normalized_trace() const {
    std::vector<std::string> out;
    out.reserve(trace_.size());
    for (const auto& r : trace_) {
        std::string s = r.kind + ":" + r.state;
        if (!r.transition.empty()) s += ":" + r.transition;
        if (!r.method.empty()) s += ":" + r.method;
        out.push_back(std::move(s));
    }
    return out;
}

// ------------------------------------------------------------ host module

void FsmHostModule::init(Lpf& lpf, const Kv& config) {
    name_ = kv_get(config, "__name", "fsm-host");
    if (kv_get(config, "undefined_transition") == "ignore")
        policy_ = FsmInstance::UndefinedPolicy::Ignore;
    std::string path = kv_get(config, "fsm_file");
    std::string text = kv_get(config, "fsm_text");
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            lpf.raise_alarm(AlarmLevel::Error, name_, "cannot open fsm file " + path);
            return;
        }
        text.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    if (!text.empty()) {
        try {
            definition_ = parse_fsm(text);
        } catch (const FsmParseError& ex) {
            lpf.raise_alarm(AlarmLevel::Error, name_, std::string("fsm parse: ") + ex.what());
        }
    }
}

std::vector<Message> FsmHostModule::host_start(Lpf& lpf, Kv run_config) {
    if (!definition_) {
        lpf.raise_alarm(AlarmLevel::Error, name_, "FsmStart without a loaded definition");
        return {};
    }
    try {
        instance_ = std::make_unique<FsmInstance>(*definition_, registry(), std::move(run_config));
    } catch (const LpfError& ex) {
        lpf.raise_alarm(AlarmLevel::Error, name_, std::string("instantiation: ") + ex.what());
        instance_.reset();
        return {};
    }
    instance_->set_undefined_policy(policy_);
    auto oc = instance_->start(&lpf, lpf.clock().now(), lpf.clock().wall_unix_ms());
    if (!oc.ok)
        lpf.raise_alarm(AlarmLevel::Error, name_, "start failed: " + oc.error);
    return std::move(oc.out);
}

std::vector<Message> FsmHostModule::host_step(Lpf& lpf, const std::string& transition,
                                              const Kv& payload) {
    if (!instance_) return {};
    auto oc = instance_->step(transition, payload, &lpf, lpf.clock().now(),
                              lpf.clock().wall_unix_ms());
    if (!oc.ok && !oc.error.empty()) {
        bool faulted = instance_->status() == FsmStatus::Faulted;
        lpf.raise_alarm(faulted ? AlarmLevel::Error : AlarmLevel::Warning, name_,
                        "transition " + transition + ": " + oc.error);
    }
    return std::move(oc.out);
}

std::vector<Message> FsmHostModule::do_message(Lpf& lpf, const Message& m) {
    if (m.verb == "FsmLoad") {
        std::string text = kv_get(m.body, "text");
        std::string path = kv_get(m.body, "file");
        if (!path.empty()) {
            std::ifstream in(path);
            if (!in) return {m.answer("FsmLoadAnswer", {{"ok", "0"}, {"error", "cannot open " + path}})};
            text.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        }
        try {
            definition_ = parse_fsm(text);
        } catch (const FsmParseError& ex) {
            return {m.answer("FsmLoadAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
        auto errors = validate_fsm(*definition_, registry());
        if (!errors.empty()) {
            std::string all;
            for (const auto& e : errors) all += (all.empty() ? "" : "; ") + e;
            definition_.reset();
            return {m.answer("FsmLoadAnswer", {{"ok", "0"}, {"error", all}})};
        }
        return {m.answer("FsmLoadAnswer", {{"ok", "1"}, {"fsm", definition_->name}})};
    }
    if (m.verb == "FsmStart") {
        Kv run_config;
        auto j = nlohmann::json::parse(kv_get(m.body, "run_config", "{}"), nullptr, false);
        if (j.is_object())
            for (auto& [k, v] : j.items())
                if (v.is_string()) run_config[k] = v.get<std::string>();
        auto out = host_start(lpf, std::move(run_config));
        Kv ack{{"ok", instance_ && instance_->status() != FsmStatus::Faulted ? "1" : "0"}};
        if (instance_) {
            ack["state"] = instance_->current_state();
            ack["status"] = fsm_status_name(instance_->status());
        }
        out.push_back(m.answer("FsmStartAnswer", std::move(ack)));
        return out;
    }
    if (m.verb == "FsmTransition") {
        auto out = host_step(lpf, kv_get(m.body, "transition"), m.body);
        return out;
    }
    if (m.verb == "FsmQuery") {
        Kv body;
        body["fsm"] = definition_ ? definition_->name : "";
        if (instance_) {
            body["state"] = instance_->current_state();
            body["status"] = fsm_status_name(instance_->status());
            body["dwell_ms"] = std::to_string(instance_->dwell(lpf.clock().now()).count());
            nlohmann::json tr = nlohmann::json::array();
            for (const auto& s : instance_->normalized_trace()) tr.push_back(s);
            body["trace"] = tr.dump();
        } else {
            body["status"] = "UNLOADED";
        }
        return {m.answer("FsmQueryAnswer", std::move(body))};
    }
    // a verb matching a transition of the current state drives that transition
    if (instance_ && instance_->status() == FsmStatus::Running) {
        const StateDef* sd = instance_->definition().state(instance_->current_state());
        if (sd != nullptr && sd->transitions.count(m.verb) > 0)
            return host_step(lpf, m.verb, m.body);
    }
    return on_unmatched(lpf, m);
}

std::vector<Message> FsmHostModule::run(Lpf& lpf) {
    if (!instance_) return {};
    if (auto warn = instance_->check_timeout(lpf.clock().now())) {
        lpf.raise_alarm(AlarmLevel::Warning, name_, *warn);
        const StateDef* sd = instance_->definition().state(instance_->current_state());
        if (sd != nullptr && sd->transitions.count("__timeout__") > 0)
            return host_step(lpf, "__timeout__", {});
    }
    return {};
}

}  // namespace lpf
