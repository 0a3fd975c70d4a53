#include "run_config.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>

namespace lethe::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::pair<std::string, std::string> split_assignment(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw UsageError(where + ": expected key=value, got \"" + line + "\"");
  auto key = trim(line.substr(0, eq));
  auto value = trim(line.substr(eq + 1));
  if (key.empty()) throw UsageError(where + ": empty key in \"" + line + "\"");
  return {key, value};
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  RunConfig config;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(n);
    auto [key, value] = split_assignment(line, where);
    if (config.values_.count(key)) throw UsageError(where + ": duplicate key " + key);
    config.values_[key] = value;
  }
  return config;
}

void RunConfig::set(const std::string& assignment) {
  auto [key, value] = split_assignment(assignment, "--set");
  values_[key] = value;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::string RunConfig::scoped_name(const std::string& key) const {
  if (!scope_.empty() && values_.count(scope_ + "." + key)) return scope_ + "." + key;
  return key;
}

std::optional<std::string> RunConfig::lookup(const std::string& key) const {
  auto it = values_.find(scoped_name(key));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return lookup(key).has_value(); }

std::string RunConfig::text(const std::string& key, const std::optional<std::string>& fallback) {
  auto v = lookup(key);
  if (!v) {
    if (!fallback) throw UsageError("missing config key: " + key);
    v = fallback;
  }
  resolved_[key] = *v;
  return *v;
}

double RunConfig::real(const std::string& key, std::optional<double> fallback) {
  auto v = lookup(key);
  if (!v) {
    if (!fallback) throw UsageError("missing config key: " + key);
    resolved_[key] = *fallback;
    return *fallback;
  }
  double out = 0.0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config key " + key + ": not a number: \"" + *v + "\"");
  resolved_[key] = out;
  return out;
}

std::size_t RunConfig::count(const std::string& key, std::optional<std::size_t> fallback) {
  auto v = lookup(key);
  if (!v) {
    if (!fallback) throw UsageError("missing config key: " + key);
    resolved_[key] = *fallback;
    return *fallback;
  }
  const auto out = static_cast<std::size_t>(parse_u64(*v, "config key " + key));
  resolved_[key] = out;
  return out;
}

std::vector<std::string> RunConfig::list(const std::string& key, const std::string& fallback) {
  const auto joined = text(key, fallback);
  std::vector<std::string> out;
  std::stringstream ss(joined);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw UsageError("config key " + key + ": empty list");
  return out;
}

std::uint64_t RunConfig::seed(std::optional<std::uint64_t> flag) {
  std::uint64_t s = 0;
  if (flag) {
    s = *flag;
  } else if (auto v = lookup("seed")) {
    s = parse_u64(*v, "config key seed");
  } else if (const char* env = std::getenv("LETHE_SEED"); env && *env) {
    s = parse_u64(env, "LETHE_SEED");
  } else {
    throw UsageError("missing config key: seed (pass --seed, set seed in the config or export LETHE_SEED)");
  }
  resolved_["seed"] = s;
  return s;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t out = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw UsageError(what + ": not a non-negative integer: \"" + text + "\"");
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  const auto bytes = read_text(path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw RunError("sha256 failed for " + path.string());
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

void append_manifest(const std::filesystem::path& out_dir, const nlohmann::ordered_json& record) {
  std::ofstream out(out_dir / "runs.jsonl", std::ios::app | std::ios::binary);
  if (!out) throw RunError("cannot append to " + (out_dir / "runs.jsonl").string());
  out << record.dump() << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write " + path.string());
  out << text;
  if (!out) throw RunError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lethe::cli
