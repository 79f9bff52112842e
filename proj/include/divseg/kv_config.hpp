#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace divseg {

/// Flat `key = value` text document. Blank lines and lines starting with '#'
/// are ignored. Entry order is preserved; a repeated key keeps every value.
class KeyValueDoc {
public:
    static KeyValueDoc parse(const std::string& text, const std::string& origin = "<text>");
    static KeyValueDoc load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    void add(const std::string& key, const std::string& value);

    bool contains(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;
    std::vector<std::string> get_all(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
    const std::string& origin() const noexcept { return origin_; }

    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_ = "<text>";
};

int parse_int(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);

// Formats with enough digits to round-trip a double exactly.
std::string format_double(double v);

}  // namespace divseg
