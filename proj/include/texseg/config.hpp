#pragma once

// Flat key=value run configuration. A config file seeds the values and CLI
// flags override them; every run writes back the fully resolved set so it can
// be replayed with --config alone.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace texseg {

struct KeyValueConfig {
    std::map<std::string, std::string> values;

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config: " + path);
        KeyValueConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw std::runtime_error("config line " + std::to_string(lineno) +
                                             ": expected key=value");
                continue;
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
            cfg.values[key] = value;
        }
        return cfg;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write config: " + path);
        for (const auto& [k, v] : values) out << k << " = " << v << "\n";
        if (!out) throw std::runtime_error("config write failed: " + path);
    }

    bool has(const std::string& key) const { return values.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values[key] = value; }

    template <typename T>
    void set_num(const std::string& key, T value) {
        std::ostringstream os;
        os.precision(17);
        os << value;
        values[key] = os.str();
    }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        const auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    double get_num(const std::string& key, double fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key + "' is not a number: " + it->second);
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key + "' is not an integer: " + it->second);
        }
    }

    bool get_flag(const std::string& key, bool fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        const std::string& v = it->second;
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw std::runtime_error("config key '" + key + "' is not a flag (on/off): " + v);
    }
};

}  // namespace texseg
