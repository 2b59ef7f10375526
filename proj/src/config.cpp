#include "svit/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "svit/error.hpp"

namespace svit {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename N>
N parse_number(std::string_view key, const std::string& text) {
  N value{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + text + "' is not a valid number");
  }
  return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto end = text.find('\n');
    std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (cfg.values_.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                        std::string(key) + "'");
    }
    cfg.values_.emplace(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool KeyValueConfig::has(std::string_view key) const { return values_.find(key) != values_.end(); }

void KeyValueConfig::set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

const std::string* KeyValueConfig::find(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.emplace(it->first);
  return &it->second;
}

std::string KeyValueConfig::get_string(std::string_view key) const {
  const auto* v = find(key);
  if (!v) throw ConfigError("missing required config key '" + std::string(key) + "'");
  return *v;
}

std::string KeyValueConfig::get_string(std::string_view key, std::string fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

int KeyValueConfig::get_int(std::string_view key, int fallback) const {
  const auto* v = find(key);
  return v ? parse_number<int>(key, *v) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(std::string_view key, std::uint64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used == v->size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not a valid number");
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not a boolean");
}

void KeyValueConfig::check_all_used() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

}  // namespace svit
