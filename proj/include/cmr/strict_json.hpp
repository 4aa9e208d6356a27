#pragma once

#include <algorithm>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

namespace cmr {

// Reads only the listed keys of a JSON object; anything else is an error.
class StrictObject {
public:
  StrictObject(std::string context, const nlohmann::json& j, std::initializer_list<const char*> allowed)
      : context_(std::move(context)), j_(j.is_null() ? nlohmann::json::object() : j) {
    if (!j_.is_object()) {
      throw std::invalid_argument(fmt::format("{}: settings must be a JSON object", context_));
    }
    for (const auto& [key, value] : j_.items()) {
      if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
        throw std::invalid_argument(fmt::format("{}: unknown setting \"{}\"", context_, key));
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  T get(const char* key, T fallback) const {
    return has(key) ? require<T>(key) : fallback;
  }

  template <class T>
  T require(const char* key) const {
    if (!has(key)) {
      throw std::invalid_argument(fmt::format("{}: missing setting \"{}\"", context_, key));
    }
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(fmt::format("{}: setting \"{}\" has the wrong type", context_, key));
    }
  }

  const nlohmann::json& raw(const char* key) const { return j_.at(key); }
  const std::string& context() const { return context_; }

private:
  std::string context_;
  nlohmann::json j_;
};

} // namespace cmr
