#pragma once

// Sectioned key-value files (scenario and session configs) on top of the
// Boost ini reader, which only knows ';' comments and unquoted values.

#include "printloop/util.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace printloop::ini {

namespace pt = boost::property_tree;

inline std::string unquote(std::string v) {
    v = std::string(trim(v));
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
        v = v.substr(1, v.size() - 2);
    }
    return v;
}

inline std::string strip_hash_comments(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        out << line << '\n';
    }
    return out.str();
}

inline pt::ptree parse(const std::string& text, const std::string& what) {
    pt::ptree tree;
    std::istringstream in(strip_hash_comments(text));
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument(what + ": " + e.what());
    }
    return tree;
}

template <typename T>
void read(const pt::ptree& section, const char* key, T& out) {
    if (auto v = section.get_optional<std::string>(key)) {
        const auto s = unquote(*v);
        try {
            if constexpr (std::is_same_v<T, std::string>) {
                out = s;
            } else if constexpr (std::is_same_v<T, bool>) {
                const auto l = to_lower(s);
                if (l == "true" || l == "yes" || l == "1") out = true;
                else if (l == "false" || l == "no" || l == "0") out = false;
                else throw std::invalid_argument("not a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                out = static_cast<T>(std::stoll(s));
            } else {
                out = std::stod(s);
            }
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("bad value for '") + key + "': " + s);
        }
    }
}

}  // namespace printloop::ini
