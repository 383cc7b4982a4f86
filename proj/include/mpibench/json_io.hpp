#pragma once

// JSON conversion for configuration types. Parsing is strict: unknown keys
// and missing required fields raise ConfigError naming the field path.

#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "mpibench/error.hpp"
#include "mpibench/simdata.hpp"

namespace mpibench {

using json = nlohmann::json;

class StrictObject {
public:
    StrictObject(const json& j, std::string path);

    bool has(const std::string& key) const { return obj_->contains(key); }
    const json& raw(const std::string& key);

    template <class T>
    T required(const std::string& key) {
        if (!has(key)) throw ConfigError("missing required field '" + field(key) + "'");
        return convert<T>(key);
    }

    template <class T>
    T optional(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    StrictObject child(const std::string& key);
    std::optional<StrictObject> optional_child(const std::string& key);

    /// Throws when the object has keys that were never read.
    void finish() const;

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const { return path_; }

private:
    template <class T>
    T convert(const std::string& key) {
        seen_.insert(key);
        try {
            return (*obj_)[key].get<T>();
        } catch (const json::exception&) {
            throw ConfigError("field '" + field(key) + "' has the wrong type");
        }
    }

    const json* obj_;
    std::string path_;
    std::set<std::string> seen_;
};

json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const json& j, const std::string& path = "grid");

json phantom_to_json(const PhantomSpec& p);
PhantomSpec phantom_from_json(const json& j, const std::string& path = "phantom");

json operator_to_json(const OperatorModel& m);
OperatorModel operator_from_json(const json& j, const std::string& path = "operator");

/// Parses a file; I/O problems raise DataError, syntax errors ConfigError.
json read_json_file(const std::string& path);

}  // namespace mpibench
