#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mvc {

/// Flat `key = value` configuration. Lines starting with '#' are comments;
/// later assignments override earlier ones. dump() writes keys sorted, so a
/// snapshot of the same settings is byte-identical.
class FlatConfig {
 public:
  static FlatConfig parse(std::string_view text);
  static FlatConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& get(const std::string& key) const;

  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const;

  // Entries of `overrides` replace ours.
  void merge(const FlatConfig& overrides);
  std::string dump() const;
  void save(const std::filesystem::path& path) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Shortest round-trip decimal form, used for every real in config snapshots.
std::string format_real(double v);
std::string format_sizes(const std::vector<std::size_t>& v);

}  // namespace mvc
