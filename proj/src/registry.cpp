#include "knobtune/registry.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace knobtune {

std::string to_string(Subsystem s) {
    switch (s) {
    case Subsystem::scheduler: return "scheduler";
    case Subsystem::power: return "power";
    case Subsystem::idle: return "idle";
    case Subsystem::network: return "network";
    case Subsystem::memory: return "memory";
    case Subsystem::io: return "io";
    }
    return "?";
}

std::string to_string(Direction d) {
    return d == Direction::minimize ? "min" : "max";
}

Subsystem subsystem_from_string(const std::string& s) {
    if (s == "scheduler") return Subsystem::scheduler;
    if (s == "power") return Subsystem::power;
    if (s == "idle") return Subsystem::idle;
    if (s == "network") return Subsystem::network;
    if (s == "memory") return Subsystem::memory;
    if (s == "io") return Subsystem::io;
    throw ConfigError("unknown subsystem: " + s);
}

Direction direction_from_string(const std::string& s) {
    if (s == "min") return Direction::minimize;
    if (s == "max") return Direction::maximize;
    throw ConfigError("unknown direction: " + s + " (expected min|max)");
}

KnobValue KnobValue::of_int(std::int64_t v) {
    KnobValue k;
    k.type = ValueKind::integer;
    k.ival = v;
    return k;
}

KnobValue KnobValue::of_bool(bool v) {
    KnobValue k;
    k.type = ValueKind::boolean;
    k.bval = v;
    return k;
}

KnobValue KnobValue::of_token(std::string v) {
    KnobValue k;
    k.type = ValueKind::enumerated;
    k.token = std::move(v);
    return k;
}

std::string KnobValue::raw() const {
    switch (type) {
    case ValueKind::integer: return std::to_string(ival);
    case ValueKind::boolean: return bval ? "1" : "0";
    case ValueKind::enumerated: return token;
    }
    return "";
}

nlohmann::json KnobValue::to_json() const {
    switch (type) {
    case ValueKind::integer: return ival;
    case ValueKind::boolean: return bval;
    case ValueKind::enumerated: return token;
    }
    return nullptr;
}

KnobValue KnobValue::from_json(const nlohmann::json& j) {
    if (j.is_boolean())
        return of_bool(j.get<bool>());
    if (j.is_number_integer())
        return of_int(j.get<std::int64_t>());
    if (j.is_string())
        return of_token(j.get<std::string>());
    throw ConfigError("cannot decode knob value from json: " + j.dump());
}

bool KnobSpec::in_domain(const KnobValue& v) const {
    if (v.type != kind)
        return false;
    switch (kind) {
    case ValueKind::integer:
        if (v.ival < domain.min || v.ival > domain.max)
            return false;
        return (v.ival - domain.min) % domain.step == 0;
    case ValueKind::boolean:
        return true;
    case ValueKind::enumerated:
        return enum_index(v.token).has_value();
    }
    return false;
}

std::optional<int> KnobSpec::enum_index(const std::string& token) const {
    for (size_t i = 0; i < enum_values.size(); ++i) {
        if (enum_values[i] == token)
            return static_cast<int>(i);
    }
    return std::nullopt;
}

std::optional<KnobValue> KnobSpec::parse_raw(const std::string& raw) const {
    switch (kind) {
    case ValueKind::integer: {
        char* end = nullptr;
        long long n = std::strtoll(raw.c_str(), &end, 10);
        if (end == raw.c_str() || *end != '\0')
            return std::nullopt;
        return KnobValue::of_int(n);
    }
    case ValueKind::boolean:
        if (raw == "0" || raw == "false") return KnobValue::of_bool(false);
        if (raw == "1" || raw == "true") return KnobValue::of_bool(true);
        return std::nullopt;
    case ValueKind::enumerated:
        if (enum_index(raw))
            return KnobValue::of_token(raw);
        return std::nullopt;
    }
    return std::nullopt;
}

std::string KnobSpec::domain_text() const {
    std::ostringstream out;
    switch (kind) {
    case ValueKind::integer:
        out << "int [" << domain.min << ", " << domain.max << "] step " << domain.step;
        if (!domain.units.empty())
            out << " " << domain.units;
        break;
    case ValueKind::boolean:
        out << "bool";
        break;
    case ValueKind::enumerated: {
        out << "enum {";
        for (size_t i = 0; i < enum_values.size(); ++i)
            out << (i ? ", " : "") << enum_values[i];
        out << "}";
        break;
    }
    }
    return out.str();
}

double KnobSpec::normalized_position(const KnobValue& v) const {
    switch (kind) {
    case ValueKind::integer: {
        if (domain.max == domain.min)
            return 0.0;
        return double(v.ival - domain.min) / double(domain.max - domain.min);
    }
    case ValueKind::boolean:
        return v.bval ? 1.0 : 0.0;
    case ValueKind::enumerated: {
        auto idx = enum_index(v.token);
        if (!idx || enum_values.size() < 2)
            return 0.0;
        return double(*idx) / double(enum_values.size() - 1);
    }
    }
    return 0.0;
}

std::int64_t KnobSpec::ordinal(const KnobValue& v) const {
    switch (kind) {
    case ValueKind::integer: return v.ival;
    case ValueKind::boolean: return v.bval ? 1 : 0;
    case ValueKind::enumerated: {
        auto idx = enum_index(v.token);
        return idx ? *idx : -1;
    }
    }
    return 0;
}

std::vector<KnobValue> KnobSpec::admissible_values() const {
    std::vector<KnobValue> out;
    switch (kind) {
    case ValueKind::integer:
        for (std::int64_t v = domain.min; v <= domain.max; v += domain.step)
            out.push_back(KnobValue::of_int(v));
        break;
    case ValueKind::boolean:
        out.push_back(KnobValue::of_bool(false));
        out.push_back(KnobValue::of_bool(true));
        break;
    case ValueKind::enumerated:
        for (const auto& t : enum_values)
            out.push_back(KnobValue::of_token(t));
        break;
    }
    return out;
}

std::size_t KnobSpec::domain_size() const {
    switch (kind) {
    case ValueKind::integer:
        return static_cast<std::size_t>((domain.max - domain.min) / domain.step + 1);
    case ValueKind::boolean:
        return 2;
    case ValueKind::enumerated:
        return enum_values.size();
    }
    return 0;
}

KnobSet::KnobSet(std::string name, std::vector<KnobSpec> members,
                 std::vector<DependencyRule> rules)
    : name_(std::move(name)), members_(std::move(members)), rules_(std::move(rules)) {}

const KnobSpec* KnobSet::find(const std::string& knob) const {
    for (const auto& m : members_) {
        if (m.name == knob)
            return &m;
    }
    return nullptr;
}

std::optional<ActiveRange> KnobSet::active_range(const std::string& knob) const {
    auto it = active_ranges_.find(knob);
    if (it == active_ranges_.end())
        return std::nullopt;
    return it->second;
}

ActiveRange KnobSet::declared_range(const KnobSpec& spec) const {
    switch (spec.kind) {
    case ValueKind::integer: return {spec.domain.min, spec.domain.max};
    case ValueKind::boolean: return {0, 1};
    case ValueKind::enumerated:
        return {0, static_cast<std::int64_t>(spec.enum_values.size()) - 1};
    }
    return {0, 0};
}

void KnobSet::narrow(const std::string& knob, ActiveRange range) {
    const KnobSpec* spec = find(knob);
    if (!spec)
        throw ConfigError("narrow: unknown knob '" + knob + "' in set " + name_);
    ActiveRange full = declared_range(*spec);
    if (range.lo > range.hi || range.lo < full.lo || range.hi > full.hi)
        throw ConfigError("narrow: range for '" + knob + "' not a subset of its domain");
    if (spec->kind == ValueKind::integer) {
        // Align bounds inward so the range holds at least one stepped value.
        auto align_up = [&](std::int64_t v) {
            std::int64_t off = (v - spec->domain.min) % spec->domain.step;
            return off == 0 ? v : v + (spec->domain.step - off);
        };
        auto align_down = [&](std::int64_t v) {
            return v - (v - spec->domain.min) % spec->domain.step;
        };
        range.lo = align_up(range.lo);
        range.hi = align_down(range.hi);
        if (range.lo > range.hi)
            throw ConfigError("narrow: range for '" + knob + "' contains no stepped value");
    }
    active_ranges_[knob] = range;
}

void KnobSet::clear_narrowing(const std::string& knob) {
    active_ranges_.erase(knob);
}

bool KnobSet::value_in_active_range(const KnobSpec& spec, const KnobValue& v) const {
    auto it = active_ranges_.find(spec.name);
    if (it == active_ranges_.end())
        return true;
    std::int64_t ord = spec.ordinal(v);
    return ord >= it->second.lo && ord <= it->second.hi;
}

nlohmann::json Configuration::to_json() const {
    nlohmann::json a = nlohmann::json::object();
    for (const auto& [k, v] : assignments)
        a[k] = v.to_json();
    return {{"assignments", a}, {"commit_id", commit_id}, {"ts_ms", timestamp_ms}};
}

Configuration Configuration::from_json(const nlohmann::json& j) {
    Configuration c;
    for (auto it = j.at("assignments").begin(); it != j.at("assignments").end(); ++it)
        c.assignments[it.key()] = KnobValue::from_json(it.value());
    c.commit_id = j.at("commit_id").get<std::int64_t>();
    c.timestamp_ms = j.value("ts_ms", std::int64_t{0});
    return c;
}

namespace {

KnobSpec parse_knob_record(const KvRecord& r) {
    KnobSpec k;
    k.name = r.require("name");
    k.subsystem = subsystem_from_string(r.require("subsystem"));
    const std::string kind = r.require("kind");
    k.scope = r.require("scope") == "per-cpu" ? KnobScope::per_cpu : KnobScope::host_wide;
    k.actuation_path = r.require("path");
    k.description = r.require("description");
    if (auto hints = r.get("hints")) {
        std::istringstream hs(*hints);
        std::string h;
        while (hs >> h)
            k.dependency_hints.push_back(h);
    }
    if (kind == "int") {
        k.kind = ValueKind::integer;
        k.domain.min = r.require_int("min");
        k.domain.max = r.require_int("max");
        k.domain.step = r.get_int("step", 1);
        k.domain.units = r.get("units").value_or("");
        if (k.domain.min > k.domain.max)
            throw ConfigError("knob '" + k.name + "': min > max");
        if (k.domain.step <= 0)
            throw ConfigError("knob '" + k.name + "': step must be > 0");
    } else if (kind == "enum") {
        k.kind = ValueKind::enumerated;
        std::istringstream vs(r.require("values"));
        std::string v;
        while (vs >> v)
            k.enum_values.push_back(v);
        if (k.enum_values.empty())
            throw ConfigError("knob '" + k.name + "': empty enum");
    } else if (kind == "bool") {
        k.kind = ValueKind::boolean;
    } else {
        throw ConfigError("knob '" + k.name + "': unknown kind '" + kind + "'");
    }
    auto dflt = k.parse_raw(r.require("default"));
    if (!dflt)
        throw ConfigError("knob '" + k.name + "': default not parseable in its kind");
    k.default_value = *dflt;
    if (!k.in_domain(k.default_value))
        throw ConfigError("knob '" + k.name + "': default outside declared domain");

    const bool has_cpu = k.actuation_path.find("{cpu}") != std::string::npos;
    const bool multiple = k.actuation_path.find("{cpu}") != k.actuation_path.rfind("{cpu}");
    if (k.scope == KnobScope::per_cpu && (!has_cpu || multiple))
        throw ConfigError("knob '" + k.name + "': per-cpu path needs exactly one {cpu} placeholder");
    if (k.scope == KnobScope::host_wide && has_cpu)
        throw ConfigError("knob '" + k.name + "': host-wide path must not contain {cpu}");
    return k;
}

} // namespace

Registry Registry::load(const std::string& catalog_text) {
    KvDocument doc = parse_kvdoc(catalog_text);
    Registry reg;
    std::set<std::string> seen;
    for (const auto& r : doc.records) {
        if (r.type == "knob") {
            KnobSpec k = parse_knob_record(r);
            if (!seen.insert(k.name).second)
                throw ConfigError("duplicate knob name: " + k.name);
            reg.knobs_.push_back(std::move(k));
        } else if (r.type == "rule") {
            DependencyRule rule;
            rule.id = r.require("id");
            const std::string kind = r.require("kind");
            if (kind == "ordering")
                rule.kind = RuleKind::ordering;
            else if (kind == "advisory")
                rule.kind = RuleKind::advisory;
            else
                throw ConfigError("rule '" + rule.id + "': unknown kind '" + kind + "'");
            std::istringstream ms(r.require("members"));
            std::string m;
            while (ms >> m)
                rule.members.push_back(m);
            rule.description = r.get("description").value_or("");
            reg.rules_.push_back(std::move(rule));
        } else if (r.type == "set") {
            std::vector<std::string> members;
            std::istringstream ms(r.require("members"));
            std::string m;
            while (ms >> m)
                members.push_back(m);
            reg.sets_.emplace_back(r.require("name"), std::move(members));
        } else {
            throw ConfigError("unknown record type in catalog: [" + r.type + "]");
        }
    }
    if (reg.knobs_.empty())
        throw ConfigError("no knobs in catalog");
    for (const auto& rule : reg.rules_) {
        for (const auto& m : rule.members) {
            if (!reg.find(m))
                throw ConfigError("rule '" + rule.id + "' references unknown knob '" + m + "'");
        }
        if (rule.kind == RuleKind::ordering) {
            if (rule.members.size() != 2)
                throw ConfigError("ordering rule '" + rule.id + "' needs exactly two members");
            for (const auto& m : rule.members) {
                if (reg.find(m)->kind != ValueKind::integer)
                    throw ConfigError("ordering rule '" + rule.id +
                                      "' member '" + m + "' is not an integer-range knob");
            }
        }
    }
    for (const auto& [set_name, members] : reg.sets_) {
        for (const auto& m : members) {
            if (!reg.find(m))
                throw ConfigError("set '" + set_name + "' references unknown knob '" + m + "'");
        }
    }
    return reg;
}

Registry Registry::load_file(const std::string& path) {
    return load(read_file(path));
}

const KnobSpec* Registry::find(const std::string& name) const {
    for (const auto& k : knobs_) {
        if (k.name == name)
            return &k;
    }
    return nullptr;
}

const std::vector<std::string>* Registry::named_set(const std::string& name) const {
    for (const auto& [n, members] : sets_) {
        if (n == name)
            return &members;
    }
    return nullptr;
}

std::vector<std::string> Registry::set_names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : sets_)
        out.push_back(n);
    return out;
}

KnobSet Registry::resolve_tunable_set(const std::vector<std::string>& names,
                                      const std::string& set_name) const {
    if (names.empty())
        throw ConfigError("tunable set must not be empty");
    std::vector<KnobSpec> members;
    std::set<std::string> seen;
    for (const auto& n : names) {
        const KnobSpec* spec = find(n);
        if (!spec)
            throw ConfigError("unknown knob name: " + n);
        if (!seen.insert(n).second)
            throw ConfigError("duplicate knob in set: " + n);
        members.push_back(*spec);
    }
    // A rule travels with the set when every member it names is present.
    std::vector<DependencyRule> rules;
    for (const auto& rule : rules_) {
        bool all = true;
        for (const auto& m : rule.members)
            all = all && seen.count(m) > 0;
        if (all)
            rules.push_back(rule);
    }
    return KnobSet(set_name, std::move(members), std::move(rules));
}

KnobSet Registry::resolve_named_set(const std::string& set_name) const {
    const auto* members = named_set(set_name);
    if (!members)
        throw ConfigError("unknown knob set: " + set_name);
    return resolve_tunable_set(*members, set_name);
}

std::string Registry::to_catalog_text() const {
    KvDocument doc;
    for (const auto& k : knobs_) {
        KvRecord r{"knob", {}};
        r.set("name", k.name);
        r.set("subsystem", to_string(k.subsystem));
        switch (k.kind) {
        case ValueKind::integer:
            r.set("kind", "int");
            r.set("min", std::to_string(k.domain.min));
            r.set("max", std::to_string(k.domain.max));
            r.set("step", std::to_string(k.domain.step));
            if (!k.domain.units.empty())
                r.set("units", k.domain.units);
            break;
        case ValueKind::enumerated: {
            r.set("kind", "enum");
            std::string vs;
            for (const auto& v : k.enum_values)
                vs += (vs.empty() ? "" : " ") + v;
            r.set("values", vs);
            break;
        }
        case ValueKind::boolean:
            r.set("kind", "bool");
            break;
        }
        r.set("scope", k.scope == KnobScope::per_cpu ? "per-cpu" : "host-wide");
        r.set("path", k.actuation_path);
        r.set("default", k.default_value.raw());
        r.set("description", k.description);
        if (!k.dependency_hints.empty()) {
            std::string hs;
            for (const auto& h : k.dependency_hints)
                hs += (hs.empty() ? "" : " ") + h;
            r.set("hints", hs);
        }
        doc.records.push_back(std::move(r));
    }
    for (const auto& rule : rules_) {
        KvRecord r{"rule", {}};
        r.set("id", rule.id);
        r.set("kind", rule.kind == RuleKind::ordering ? "ordering" : "advisory");
        std::string ms;
        for (const auto& m : rule.members)
            ms += (ms.empty() ? "" : " ") + m;
        r.set("members", ms);
        if (!rule.description.empty())
            r.set("description", rule.description);
        doc.records.push_back(std::move(r));
    }
    for (const auto& [name, members] : sets_) {
        KvRecord r{"set", {}};
        r.set("name", name);
        std::string ms;
        for (const auto& m : members)
            ms += (ms.empty() ? "" : " ") + m;
        r.set("members", ms);
        doc.records.push_back(std::move(r));
    }
    return render_kvdoc(doc);
}

bool Registry::operator==(const Registry& other) const {
    return knobs_ == other.knobs_ && rules_ == other.rules_ && sets_ == other.sets_;
}

Configuration default_configuration(const KnobSet& set) {
    if (set.members().empty())
        throw ConfigError("default_configuration: empty set");
    Configuration cfg;
    for (const auto& m : set.members()) {
        if (!set.value_in_active_range(m, m.default_value))
            throw ConfigError("default outside active range for knob '" + m.name + "'");
        cfg.assignments[m.name] = m.default_value;
    }
    cfg.commit_id = 0;
    return cfg;
}

std::string describe_for_prompt(const KnobSet& set) {
    std::ostringstream out;
    for (const auto& m : set.members()) {
        out << "- " << m.name << " (" << to_string(m.subsystem) << ", ";
        auto ar = set.active_range(m.name);
        if (ar && m.kind == ValueKind::integer) {
            out << "int [" << ar->lo << ", " << ar->hi << "] step " << m.domain.step;
            if (!m.domain.units.empty())
                out << " " << m.domain.units;
        } else if (ar && m.kind == ValueKind::enumerated) {
            out << "enum {";
            for (std::int64_t i = ar->lo; i <= ar->hi; ++i)
                out << (i > ar->lo ? ", " : "") << m.enum_values[static_cast<size_t>(i)];
            out << "}";
        } else {
            out << m.domain_text();
        }
        out << ", default " << m.default_value.raw() << "): " << m.description;
        out << "\n";
    }
    bool any_rule = false;
    for (const auto& rule : set.rules()) {
        if (!any_rule)
            out << "constraints:\n";
        any_rule = true;
        out << "- [" << (rule.kind == RuleKind::ordering ? "hard" : "hint") << "] "
            << rule.id << ": ";
        if (rule.kind == RuleKind::ordering)
            out << rule.members[0] << " <= " << rule.members[1];
        else {
            for (size_t i = 0; i < rule.members.size(); ++i)
                out << (i ? ", " : "") << rule.members[i];
        }
        if (!rule.description.empty())
            out << " (" << rule.description << ")";
        out << "\n";
    }
    return out.str();
}

} // namespace knobtune
