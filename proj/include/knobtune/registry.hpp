#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace knobtune {

enum class Subsystem { scheduler, power, idle, network, memory, io };
enum class KnobScope { host_wide, per_cpu };
enum class ValueKind { integer, enumerated, boolean };
enum class Direction { minimize, maximize };

std::string to_string(Subsystem s);
std::string to_string(Direction d);
Subsystem subsystem_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);

// A committed or proposed knob value. Exactly one representation is live,
// selected by `type`; the others stay zeroed so operator== is structural.
struct KnobValue {
    ValueKind type = ValueKind::integer;
    std::int64_t ival = 0;
    bool bval = false;
    std::string token;

    static KnobValue of_int(std::int64_t v);
    static KnobValue of_bool(bool v);
    static KnobValue of_token(std::string v);

    bool operator==(const KnobValue&) const = default;
    // Rendering used for actuation writes and logs: decimal integers,
    // 0/1 booleans, catalog token for enumerations.
    std::string raw() const;
    nlohmann::json to_json() const;
    static KnobValue from_json(const nlohmann::json& j);
};

struct IntDomain {
    std::int64_t min = 0;
    std::int64_t max = 0;
    std::int64_t step = 1;
    std::string units;

    bool operator==(const IntDomain&) const = default;
};

struct KnobSpec {
    std::string name;
    Subsystem subsystem = Subsystem::scheduler;
    ValueKind kind = ValueKind::integer;
    IntDomain domain;                      // integer kind only
    std::vector<std::string> enum_values;  // enumerated kind only, ordered
    KnobScope scope = KnobScope::host_wide;
    std::string actuation_path;            // contains {cpu} iff per-cpu
    KnobValue default_value;
    std::string description;
    std::vector<std::string> dependency_hints;

    bool operator==(const KnobSpec&) const = default;

    // Declared-domain membership, including step alignment (value ≡ min mod step).
    bool in_domain(const KnobValue& v) const;
    std::optional<int> enum_index(const std::string& token) const;
    // Parses a raw text value (as read back from an actuation path).
    std::optional<KnobValue> parse_raw(const std::string& raw) const;
    std::string domain_text() const;
    // Position of a value within the declared domain, in [0,1].
    double normalized_position(const KnobValue& v) const;
    // Ordinal coordinate: the integer value, enum index, or bool as 0/1.
    std::int64_t ordinal(const KnobValue& v) const;
    // All admissible values, smallest first (integer domains can be large).
    std::vector<KnobValue> admissible_values() const;
    std::size_t domain_size() const;
};

enum class RuleKind { ordering, advisory };

struct DependencyRule {
    std::string id;
    RuleKind kind = RuleKind::advisory;
    std::vector<std::string> members;  // ordering: exactly {lhs, rhs}, lhs <= rhs
    std::string description;

    bool operator==(const DependencyRule&) const = default;
};

// Narrowed admissible interval in ordinal coordinates (integer value for
// integer knobs, enum index for enumerations, 0/1 for booleans).
struct ActiveRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;

    bool operator==(const ActiveRange&) const = default;
};

class Registry;

// An ordered session tunable set. Immutable during tuning except for
// trim-installed active ranges.
class KnobSet {
public:
    KnobSet() = default;
    KnobSet(std::string name, std::vector<KnobSpec> members,
            std::vector<DependencyRule> rules);

    const std::string& name() const { return name_; }
    const std::vector<KnobSpec>& members() const { return members_; }
    const std::vector<DependencyRule>& rules() const { return rules_; }
    const KnobSpec* find(const std::string& knob) const;
    bool contains(const std::string& knob) const { return find(knob) != nullptr; }

    std::optional<ActiveRange> active_range(const std::string& knob) const;
    // Declared domain expressed as an ActiveRange (ordinal coordinates).
    ActiveRange declared_range(const KnobSpec& spec) const;
    // Throws ConfigError if the range is not a subset of the declared domain.
    void narrow(const std::string& knob, ActiveRange range);
    void clear_narrowing(const std::string& knob);

    bool value_in_active_range(const KnobSpec& spec, const KnobValue& v) const;

private:
    std::string name_;
    std::vector<KnobSpec> members_;
    std::vector<DependencyRule> rules_;
    std::map<std::string, ActiveRange> active_ranges_;
};

// A committed assignment of values to a knob set.
struct Configuration {
    std::map<std::string, KnobValue> assignments;
    std::int64_t commit_id = 0;
    std::int64_t timestamp_ms = 0;

    bool same_assignments(const Configuration& other) const {
        return assignments == other.assignments;
    }
    nlohmann::json to_json() const;
    static Configuration from_json(const nlohmann::json& j);
};

class Registry {
public:
    static Registry load(const std::string& catalog_text);
    static Registry load_file(const std::string& path);

    const std::vector<KnobSpec>& knobs() const { return knobs_; }
    const std::vector<DependencyRule>& rules() const { return rules_; }
    const KnobSpec* find(const std::string& name) const;
    const std::vector<std::string>* named_set(const std::string& name) const;
    std::vector<std::string> set_names() const;

    KnobSet resolve_tunable_set(const std::vector<std::string>& names,
                                const std::string& set_name = "custom") const;
    KnobSet resolve_named_set(const std::string& set_name) const;

    std::string to_catalog_text() const;
    bool operator==(const Registry& other) const;

private:
    std::vector<KnobSpec> knobs_;
    std::vector<DependencyRule> rules_;
    std::vector<std::pair<std::string, std::vector<std::string>>> sets_;
};

// Assignment of every member's default value; commit_id 0. Throws
// ConfigError when a narrowed range excludes a member's default.
Configuration default_configuration(const KnobSet& set);

// Deterministic, stable-ordered schema block for prompts: names, kinds,
// domains (narrowed when trimmed), units, descriptions, advisory hints.
std::string describe_for_prompt(const KnobSet& set);

} // namespace knobtune
