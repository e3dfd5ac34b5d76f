#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace smetod {

// Flat key=value configuration with [section] headers. Keys are addressed as
// "section.key"; '#' starts a comment. Values keep their raw text.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text);
    static Config load_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Sections and keys sorted; reparsing yields an equal config.
    std::string canonical_text() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace smetod
