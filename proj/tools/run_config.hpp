#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace lethe::cli {

// Bad flags, bad config values or missing keys. Exits with status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A library failure during a run. Exits with status 1.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key=value settings. Lines may carry '#' comments; later --set
// overrides win over the file. Lookups may name a scope such as "ga", in which
// case "ga.lr" is preferred over "lr". Every value read is recorded so the
// manifest echoes exactly what the run used.
class RunConfig {
 public:
  static RunConfig from_file(const std::filesystem::path& path);
  void set(const std::string& assignment);
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  std::vector<std::string> keys() const;

  bool has(const std::string& key) const;
  std::string text(const std::string& key, const std::optional<std::string>& fallback = std::nullopt);
  double real(const std::string& key, std::optional<double> fallback = std::nullopt);
  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt);
  std::vector<std::string> list(const std::string& key, const std::string& fallback);

  // Seed from the flag, then the config, then LETHE_SEED.
  std::uint64_t seed(std::optional<std::uint64_t> flag);

  const nlohmann::ordered_json& resolved() const { return resolved_; }

 private:
  std::optional<std::string> lookup(const std::string& key) const;
  std::string scoped_name(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::string scope_;
  nlohmann::ordered_json resolved_ = nlohmann::ordered_json::object();
};

std::uint64_t parse_u64(const std::string& text, const std::string& what);

// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

// Appends one JSON line to <out>/runs.jsonl.
void append_manifest(const std::filesystem::path& out_dir, const nlohmann::ordered_json& record);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace lethe::cli
