#ifndef DBNMON_CONFIG_HPP
#define DBNMON_CONFIG_HPP

#include <map>
#include <string>

namespace dbnmon {

/// Plain-text key-value configuration: one `key = value` per line,
/// '#' starts a comment, blank lines ignored.
class Config {
public:
    Config() = default;
    static Config load(const std::string& path);
    static Config parse(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    long get(const std::string& key, long fallback) const;
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace dbnmon

#endif
