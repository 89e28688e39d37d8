#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "omlab/error.hpp"

namespace omlab::jsonutil {

/// Throws ContractError if `j` is not an object or holds a key outside `allowed`.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view where) {
  if (!j.is_object()) throw ContractError(std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ContractError(std::string(where) + ": unknown key '" + item.key() + "'");
    }
  }
}

/// Overwrites `out` when `key` is present; type errors become ContractError.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace omlab::jsonutil
