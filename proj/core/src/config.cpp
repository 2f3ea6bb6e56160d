#include "mixtune/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mixtune/errors.hpp"

namespace mixtune {

namespace {

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.erase(s.begin());
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.pop_back();
    }
    return s;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

double to_double(const std::string& key, const std::string& value) {
    double v;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("key '" + key + "': bad number '" + value + "'");
    }
    return v;
}

long to_long(const std::string& key, const std::string& value) {
    long v;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("key '" + key + "': bad integer '" + value + "'");
    }
    return v;
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') {
            continue;
        }
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        Entry e;
        e.key = trim(stripped.substr(0, eq));
        e.value = trim(stripped.substr(eq + 1));
        if (e.key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        for (const Entry& existing : cfg.entries_) {
            if (existing.key == e.key) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" +
                                  e.key + "'");
            }
        }
        cfg.entries_.push_back(std::move(e));
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path.string());
}

bool KvConfig::has(const std::string& key) const {
    for (const Entry& e : entries_) {
        if (e.key == key) {
            return true;
        }
    }
    return false;
}

std::string KvConfig::raw(const std::string& key) {
    for (Entry& e : entries_) {
        if (e.key == key) {
            e.consumed = true;
            return e.value;
        }
    }
    throw ConfigError("missing key '" + key + "' in " + origin_);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
    return has(key) ? raw(key) : fallback;
}

std::string KvConfig::require_string(const std::string& key) {
    return raw(key);
}

double KvConfig::get_double(const std::string& key, double fallback) {
    return has(key) ? to_double(key, raw(key)) : fallback;
}

long KvConfig::get_long(const std::string& key, long fallback) {
    return has(key) ? to_long(key, raw(key)) : fallback;
}

std::uint64_t KvConfig::get_seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) {
        return fallback;
    }
    const std::string value = raw(key);
    std::uint64_t v;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("key '" + key + "': bad seed '" + value + "'");
    }
    return v;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
    if (!has(key)) {
        return fallback;
    }
    const std::string value = raw(key);
    if (value == "true" || value == "1" || value == "yes" || value == "on") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no" || value == "off") {
        return false;
    }
    throw ConfigError("key '" + key + "': bad boolean '" + value + "'");
}

std::vector<double> KvConfig::get_doubles(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) {
        return fallback;
    }
    std::vector<double> out;
    for (const std::string& item : split_list(raw(key))) {
        out.push_back(to_double(key, item));
    }
    if (out.empty()) {
        throw ConfigError("key '" + key + "': empty list");
    }
    return out;
}

std::vector<long> KvConfig::get_longs(const std::string& key, std::vector<long> fallback) {
    if (!has(key)) {
        return fallback;
    }
    std::vector<long> out;
    for (const std::string& item : split_list(raw(key))) {
        out.push_back(to_long(key, item));
    }
    if (out.empty()) {
        throw ConfigError("key '" + key + "': empty list");
    }
    return out;
}

std::vector<std::int64_t> KvConfig::get_dims(const std::string& key,
                                             std::vector<std::int64_t> fallback) {
    if (!has(key)) {
        return fallback;
    }
    std::vector<std::int64_t> out;
    for (const long v : get_longs(key, {})) {
        out.push_back(static_cast<std::int64_t>(v));
    }
    return out;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    for (Entry& e : entries_) {
        if (e.key == key) {
            e.value = value;
            e.consumed = false;
            return;
        }
    }
    entries_.push_back(Entry{key, value, false});
}

void KvConfig::require_all_consumed() const {
    std::string unknown;
    for (const Entry& e : entries_) {
        if (!e.consumed) {
            if (!unknown.empty()) {
                unknown += ", ";
            }
            unknown += e.key;
        }
    }
    if (!unknown.empty()) {
        throw ConfigError("unknown config keys in " + origin_ + ": " + unknown);
    }
}

std::string KvConfig::dump() const {
    std::string out;
    for (const Entry& e : entries_) {
        out += e.key + " = " + e.value + "\n";
    }
    return out;
}

}  // namespace mixtune
