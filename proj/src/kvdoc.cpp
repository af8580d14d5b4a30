#include "knobtune/kvdoc.hpp"

#include "knobtune/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace knobtune {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos)
        return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

bool KvRecord::has(const std::string& key) const {
    return get(key).has_value();
}

std::optional<std::string> KvRecord::get(const std::string& key) const {
    for (const auto& [k, v] : fields) {
        if (k == key)
            return v;
    }
    return std::nullopt;
}

std::string KvRecord::require(const std::string& key) const {
    auto v = get(key);
    if (!v)
        throw ConfigError("[" + type + "] record missing field '" + key + "'");
    return *v;
}

long long KvRecord::require_int(const std::string& key) const {
    const std::string v = require(key);
    char* end = nullptr;
    long long n = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("[" + type + "] field '" + key + "' is not an integer: " + v);
    return n;
}

double KvRecord::require_double(const std::string& key) const {
    const std::string v = require(key);
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("[" + type + "] field '" + key + "' is not a number: " + v);
    return d;
}

long long KvRecord::get_int(const std::string& key, long long fallback) const {
    return has(key) ? require_int(key) : fallback;
}

double KvRecord::get_double(const std::string& key, double fallback) const {
    return has(key) ? require_double(key) : fallback;
}

void KvRecord::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : fields) {
        if (k == key) {
            v = value;
            return;
        }
    }
    fields.emplace_back(key, value);
}

std::vector<const KvRecord*> KvDocument::of_type(const std::string& type) const {
    std::vector<const KvRecord*> out;
    for (const auto& r : records) {
        if (r.type == type)
            out.push_back(&r);
    }
    return out;
}

KvDocument parse_kvdoc(const std::string& text) {
    KvDocument doc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    KvRecord* current = nullptr;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed record header: " + t);
            doc.records.push_back(KvRecord{trim(t.substr(1, t.size() - 2)), {}});
            current = &doc.records.back();
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value': " + t);
        if (!current)
            throw ConfigError("line " + std::to_string(lineno) + ": field outside any [record]");
        current->fields.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return doc;
}

KvDocument load_kvdoc(const std::string& path) {
    return parse_kvdoc(read_file(path));
}

std::string render_kvdoc(const KvDocument& doc) {
    std::ostringstream out;
    bool first = true;
    for (const auto& r : doc.records) {
        if (!first)
            out << "\n";
        first = false;
        out << "[" << r.type << "]\n";
        for (const auto& [k, v] : r.fields)
            out << k << " = " << v << "\n";
    }
    return out.str();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ConfigError("cannot write file: " + path);
    out << content;
}

} // namespace knobtune
