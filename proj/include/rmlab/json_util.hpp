#pragma once

#include "rmlab/errors.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace rmlab::json_util {

/// Reads optional keys from an object and rejects any key nobody asked for.
class Reader {
public:
    Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    bool get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return false;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
        return true;
    }

    template <class T>
    void require(const char* key, T& out) {
        if (!get(key, out)) throw ConfigError(where_ + ": missing required key '" + key + "'");
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace rmlab::json_util
