#include "divseg/kv_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "divseg/error.hpp"

namespace divseg {
namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace

int parse_int(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError(what + ": expected an integer, got '" + text + "'");
    }
    return value;
}

double parse_double(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError(what + ": expected a number, got '" + text + "'");
    }
    return value;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& origin) {
    KeyValueDoc doc;
    doc.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        doc.entries_.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

void KeyValueDoc::set(const std::string& key, const std::string& value) {
    std::erase_if(entries_, [&](const auto& e) { return e.first == key; });
    entries_.emplace_back(key, value);
}

void KeyValueDoc::add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

bool KeyValueDoc::contains(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueDoc::get(const std::string& key) const {
    // Last occurrence wins.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->first == key) return it->second;
    }
    return std::nullopt;
}

std::vector<std::string> KeyValueDoc::get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
        if (k == key) out.push_back(v);
    }
    return out;
}

std::string KeyValueDoc::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

std::string KeyValueDoc::require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError(origin_ + ": missing key '" + key + "'");
    return *v;
}

int KeyValueDoc::get_int(const std::string& key, int fallback) const {
    auto v = get(key);
    return v ? parse_int(*v, origin_ + ": " + key) : fallback;
}

double KeyValueDoc::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    return v ? parse_double(*v, origin_ + ": " + key) : fallback;
}

bool KeyValueDoc::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(origin_ + ": " + key + ": expected true/false, got '" + *v + "'");
}

std::string KeyValueDoc::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

void KeyValueDoc::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << to_string();
    if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace divseg
