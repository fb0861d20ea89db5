#include "terrakoop/json_io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "terrakoop/errors.hpp"

namespace terrakoop::json_io {

void throw_config(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw_config(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw_config(where + ": unknown key '" + it.key() + "'");
  }
}

json to_json(const excitation::SignalSpec& s) {
  return json{{"family", excitation::to_string(s.family)},
              {"lo", s.lo},
              {"hi", s.hi},
              {"offset", s.offset},
              {"amplitude", s.amplitude},
              {"level", s.level},
              {"frequency_pool", s.frequency_pool},
              {"tones", s.tones},
              {"f0", s.f0},
              {"f1", s.f1},
              {"rate", s.rate},
              {"dwell", s.dwell},
              {"countersteer", s.countersteer},
              {"t_start", s.t_start},
              {"dither", s.dither},
              {"seed", s.seed}};
}

excitation::SignalSpec signal_spec_from_json(const json& j) {
  const std::string w = "signal";
  check_keys(j,
             {"family", "lo", "hi", "offset", "amplitude", "level", "frequency_pool", "tones",
              "f0", "f1", "rate", "dwell", "countersteer", "t_start", "dither", "seed"},
             w);
  excitation::SignalSpec s;
  std::string fam = excitation::to_string(s.family);
  read_opt(j, "family", fam, w);
  s.family = excitation::family_from_string(fam);
  read_opt(j, "lo", s.lo, w);
  read_opt(j, "hi", s.hi, w);
  read_opt(j, "offset", s.offset, w);
  read_opt(j, "amplitude", s.amplitude, w);
  read_opt(j, "level", s.level, w);
  read_opt(j, "frequency_pool", s.frequency_pool, w);
  read_opt(j, "tones", s.tones, w);
  read_opt(j, "f0", s.f0, w);
  read_opt(j, "f1", s.f1, w);
  read_opt(j, "rate", s.rate, w);
  read_opt(j, "dwell", s.dwell, w);
  read_opt(j, "countersteer", s.countersteer, w);
  read_opt(j, "t_start", s.t_start, w);
  read_opt(j, "dither", s.dither, w);
  read_opt(j, "seed", s.seed, w);
  return s;
}

json to_json(const vehicle::VehicleParams& p) {
  return json{
      {"m", p.m},         {"m_w", p.m_w},     {"I_z", p.I_z},       {"I_y", p.I_y},
      {"I_wf", p.I_wf},   {"I_wr", p.I_wr},   {"l_f", p.l_f},       {"l_r", p.l_r},
      {"k_f", p.k_f},     {"k_r", p.k_r},     {"c_f", p.c_f},       {"c_r", p.c_r},
      {"r", p.wheel.r},   {"b", p.wheel.b},   {"rho_air", p.rho_air}, {"C_d", p.C_d},
      {"A_fx", p.A_fx},   {"A_fy", p.A_fy},   {"g", p.g},
      {"rolling",
       {{"P", p.rolling.P},
        {"alpha_R", p.rolling.alpha_R},
        {"beta_R", p.rolling.beta_R},
        {"A", p.rolling.A},
        {"B", p.rolling.B},
        {"C", p.rolling.C}}},
      {"eom_sign_convention",
       p.sign_convention == vehicle::SignConvention::standard ? "standard" : "as_printed"}};
}

vehicle::VehicleParams vehicle_params_from_json(const json& j, vehicle::VehicleParams p) {
  const std::string w = "vehicle";
  check_keys(j,
             {"m", "m_w", "I_z", "I_y", "I_wf", "I_wr", "l_f", "l_r", "k_f", "k_r", "c_f", "c_r",
              "r", "b", "rho_air", "C_d", "A_fx", "A_fy", "g", "rolling", "eom_sign_convention"},
             w);
  read_opt(j, "m", p.m, w);
  read_opt(j, "m_w", p.m_w, w);
  read_opt(j, "I_z", p.I_z, w);
  read_opt(j, "I_y", p.I_y, w);
  read_opt(j, "I_wf", p.I_wf, w);
  read_opt(j, "I_wr", p.I_wr, w);
  read_opt(j, "l_f", p.l_f, w);
  read_opt(j, "l_r", p.l_r, w);
  read_opt(j, "k_f", p.k_f, w);
  read_opt(j, "k_r", p.k_r, w);
  read_opt(j, "c_f", p.c_f, w);
  read_opt(j, "c_r", p.c_r, w);
  read_opt(j, "r", p.wheel.r, w);
  read_opt(j, "b", p.wheel.b, w);
  read_opt(j, "rho_air", p.rho_air, w);
  read_opt(j, "C_d", p.C_d, w);
  read_opt(j, "A_fx", p.A_fx, w);
  read_opt(j, "A_fy", p.A_fy, w);
  read_opt(j, "g", p.g, w);
  if (j.contains("rolling")) {
    const json& r = j.at("rolling");
    const std::string wr = w + ".rolling";
    check_keys(r, {"P", "alpha_R", "beta_R", "A", "B", "C"}, wr);
    read_opt(r, "P", p.rolling.P, wr);
    read_opt(r, "alpha_R", p.rolling.alpha_R, wr);
    read_opt(r, "beta_R", p.rolling.beta_R, wr);
    read_opt(r, "A", p.rolling.A, wr);
    read_opt(r, "B", p.rolling.B, wr);
    read_opt(r, "C", p.rolling.C, wr);
  }
  if (j.contains("eom_sign_convention")) {
    std::string c;
    read_opt(j, "eom_sign_convention", c, w);
    if (c == "standard") {
      p.sign_convention = vehicle::SignConvention::standard;
    } else if (c == "as_printed") {
      p.sign_convention = vehicle::SignConvention::as_printed;
    } else {
      throw_config(w + ".eom_sign_convention: expected 'standard' or 'as_printed'");
    }
  }
  p.validate();
  return p;
}

json to_json(const terramech::SoilParams& s) {
  return json{{"name", s.name}, {"k_c", s.k_c},         {"k_phi", s.k_phi}, {"c", s.c},
              {"phi", s.phi},   {"n", s.n},             {"k_t", s.k_t},
              {"k_c_shear", s.k_c_shear},               {"a0", s.a0},       {"a1", s.a1},
              {"lambda_r", s.lambda_r}};
}

terramech::SoilParams soil_params_from_json(const json& j, terramech::SoilParams s) {
  const std::string w = "soil";
  check_keys(j, {"name", "k_c", "k_phi", "c", "phi", "n", "k_t", "k_c_shear", "a0", "a1",
                 "lambda_r"},
             w);
  read_opt(j, "name", s.name, w);
  read_opt(j, "k_c", s.k_c, w);
  read_opt(j, "k_phi", s.k_phi, w);
  read_opt(j, "c", s.c, w);
  read_opt(j, "phi", s.phi, w);
  read_opt(j, "n", s.n, w);
  read_opt(j, "k_t", s.k_t, w);
  read_opt(j, "k_c_shear", s.k_c_shear, w);
  read_opt(j, "a0", s.a0, w);
  read_opt(j, "a1", s.a1, w);
  read_opt(j, "lambda_r", s.lambda_r, w);
  s.validate();
  return s;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  }
  return os.str();
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

void append_number(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string format_number(double v) {
  std::string s;
  append_number(s, v);
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

}  // namespace terrakoop::json_io
