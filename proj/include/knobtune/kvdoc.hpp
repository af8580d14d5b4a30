#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace knobtune {

// One record of a key/value document: a `[type]` header followed by
// `key = value` lines. Field order is preserved.
struct KvRecord {
    std::string type;
    std::vector<std::pair<std::string, std::string>> fields;

    bool has(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;
    // Throws ConfigError naming the record type and key when absent.
    std::string require(const std::string& key) const;
    long long require_int(const std::string& key) const;
    double require_double(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    void set(const std::string& key, const std::string& value);
};

struct KvDocument {
    std::vector<KvRecord> records;

    std::vector<const KvRecord*> of_type(const std::string& type) const;
};

// Parses the key/value document format used by catalog, surface, and
// session-config files. `#` starts a comment; blank lines are ignored.
KvDocument parse_kvdoc(const std::string& text);
KvDocument load_kvdoc(const std::string& path);
std::string render_kvdoc(const KvDocument& doc);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

} // namespace knobtune
