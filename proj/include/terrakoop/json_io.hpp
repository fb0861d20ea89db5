#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "terrakoop/excitation.hpp"
#include "terrakoop/terramech.hpp"
#include "terrakoop/vehicle.hpp"

namespace terrakoop::json_io {

using json = nlohmann::json;

[[noreturn]] void throw_config(const std::string& msg);

/// Throws ConfigError naming the first key of j not in `allowed`.
void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where);

/// Reads j[key] into out when present; type mismatches become ConfigError.
template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw_config(where + "." + key + ": " + e.what());
  }
}

json to_json(const excitation::SignalSpec& s);
/// Fields absent from j keep their defaults.
excitation::SignalSpec signal_spec_from_json(const json& j);

json to_json(const vehicle::VehicleParams& p);
/// Applies the keys present in j as overrides on top of `base`.
vehicle::VehicleParams vehicle_params_from_json(const json& j,
                                                vehicle::VehicleParams base = {});

json to_json(const terramech::SoilParams& s);
terramech::SoilParams soil_params_from_json(const json& j, terramech::SoilParams base);

/// Hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

/// Shortest decimal form that reads back to the same double.
void append_number(std::string& out, double v);
std::string format_number(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace terrakoop::json_io
