#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mixtune {

/// Flat key=value configuration with dotted section keys. Lines starting with
/// '#' (or blank) are ignored. Keys are consumed by typed getters; any key
/// never read is reported as an error so typos cannot silently change a run.
class KvConfig {
public:
    static KvConfig parse_file(const std::filesystem::path& path);
    static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback);
    std::string require_string(const std::string& key);
    double get_double(const std::string& key, double fallback);
    long get_long(const std::string& key, long fallback);
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback);
    std::vector<long> get_longs(const std::string& key, std::vector<long> fallback);
    std::vector<std::int64_t> get_dims(const std::string& key, std::vector<std::int64_t> fallback);

    /// Overrides (or inserts) a value before getters run.
    void set(const std::string& key, const std::string& value);

    /// Throws ConfigError naming every key that was never consumed.
    void require_all_consumed() const;

    /// Canonical re-serialization of the raw entries, one key = value per line.
    std::string dump() const;

private:
    std::string raw(const std::string& key);
    struct Entry {
        std::string key;
        std::string value;
        bool consumed = false;
    };
    std::vector<Entry> entries_;
    std::string origin_;
};

}  // namespace mixtune
