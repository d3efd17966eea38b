#include "molspin/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "molspin/io.hpp"

namespace molspin::cfg {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw BadValue("config " + what + ": expected a number, got '" + text + "'");
  return v;
}

// Strips a trailing "; comment" or "# comment" (INI inline comments).
std::string strip_comment(const std::string& v) {
  const auto pos = v.find_first_of(";#");
  return trim(pos == std::string::npos ? v : v.substr(0, pos));
}

}  // namespace

std::string env_name(const std::string& section, const std::string& key) {
  std::string s = "MOLSPIN_" + section + "_" + key;
  for (char& c : s) {
    if (c == '-' || c == '.') c = '_';
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return s;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

Config Config::from_string(const std::string& text, EnvLookup env, std::string source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw BadValue(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Config c;
  c.env_ = std::move(env);
  c.source_ = std::move(source);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw BadValue(c.source_ + ": key '" + section + "' outside of any [section]");
    auto& dst = c.values_[lower(section)];
    for (const auto& [key, value] : body) dst[lower(key)] = strip_comment(value.data());
  }
  return c;
}

Config Config::from_file(const std::filesystem::path& path, EnvLookup env) {
  if (!std::filesystem::exists(path)) throw InvalidArgument("config file not found: " + path.string());
  Config c = from_string(io::read_file(path), std::move(env), path.string());
  c.directory_ = path.parent_path();
  return c;
}

bool Config::has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

bool Config::has_section(const std::string& section) const { return values_.count(section) > 0; }

std::optional<std::string> Config::raw(const std::string& section, const std::string& key) const {
  if (env_) {
    if (auto v = env_(env_name(section, key))) return trim(*v);
  }
  const auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void Config::record(const std::string& section, const std::string& key, const std::string& value) const {
  effective_[section + "." + key] = value;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               std::optional<std::string> fallback) const {
  auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    v = *fallback;
  }
  record(section, key, *v);
  return *v;
}

double Config::get_double(const std::string& section, const std::string& key, std::optional<double> fallback) const {
  const auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    record(section, key, io::format_double(*fallback));
    return *fallback;
  }
  const double d = parse_double(*v, "[" + section + "] " + key);
  record(section, key, io::format_double(d));
  return d;
}

long Config::get_long(const std::string& section, const std::string& key, std::optional<long> fallback) const {
  const auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    record(section, key, std::to_string(*fallback));
    return *fallback;
  }
  // Accept 1e7-style integers.
  const double d = parse_double(*v, "[" + section + "] " + key);
  if (d != std::floor(d) || std::abs(d) > 9.2e18)
    throw BadValue("config [" + section + "] " + key + ": expected an integer, got '" + *v + "'");
  record(section, key, std::to_string(static_cast<long>(d)));
  return static_cast<long>(d);
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::optional<std::uint64_t> fallback) const {
  const auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    record(section, key, std::to_string(*fallback));
    return *fallback;
  }
  const std::string t = trim(*v);
  std::uint64_t u = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), u);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw BadValue("config [" + section + "] " + key + ": expected an unsigned integer, got '" + *v + "'");
  record(section, key, std::to_string(u));
  return u;
}

bool Config::get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback) const {
  const auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    record(section, key, *fallback ? "true" : "false");
    return *fallback;
  }
  const std::string t = lower(trim(*v));
  bool b = false;
  if (t == "true" || t == "yes" || t == "on" || t == "1")
    b = true;
  else if (t == "false" || t == "no" || t == "off" || t == "0")
    b = false;
  else
    throw BadValue("config [" + section + "] " + key + ": expected true/false, got '" + *v + "'");
  record(section, key, b ? "true" : "false");
  return b;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     std::optional<std::vector<double>> fallback) const {
  const auto v = raw(section, key);
  std::vector<double> out;
  if (!v) {
    if (!fallback) throw MissingKey(section, key);
    out = *fallback;
  } else {
    std::istringstream in(*v);
    std::string item;
    while (std::getline(in, item, ','))
      if (!trim(item).empty()) out.push_back(parse_double(item, "[" + section + "] " + key));
  }
  std::string s;
  for (std::size_t i = 0; i < out.size(); ++i) s += (i ? ", " : "") + io::format_double(out[i]);
  record(section, key, s);
  return out;
}

std::vector<std::string> Config::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [section, body] : values_)
    for (const auto& [key, value] : body)
      if (!effective_.count(section + "." + key)) out.push_back(section + "." + key);
  return out;
}

std::string Config::canonical() const {
  std::string s;
  for (const auto& [k, v] : effective_) s += k + " = " + v + "\n";
  return s;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace molspin::cfg
