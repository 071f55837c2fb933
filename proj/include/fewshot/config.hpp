#pragma once
// Plain key=value configuration. One entry per line, '#' starts a comment,
// later entries (and --set overrides) replace earlier ones. Unknown keys are
// rejected so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fewshot {

class Config {
 public:
  // Every recognised key with its default value.
  static const std::map<std::string, std::string, std::less<>>& defaults();

  Config() = default;
  static Config parse(std::string_view text);
  static Config read(const std::filesystem::path& path);

  void set(std::string_view key, std::string_view value);
  // "key=value"
  void apply_override(std::string_view assignment);

  bool has(std::string_view key) const;  // explicitly set
  std::string get(std::string_view key) const;  // value or default
  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;  // non-negative int
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  // Comma-separated doubles; empty value -> empty list.
  std::vector<double> get_doubles(std::string_view key) const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }
  // Canonical text: every key (explicit or default), sorted, "key=value\n".
  std::string canonical() const;
  // FNV-1a 64 over the canonical lines of the keys that shape training
  // (seed, dataset, episode, augment, model, loss, weights, train).
  std::uint64_t fingerprint() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

std::string fingerprint_hex(std::uint64_t fingerprint);

}  // namespace fewshot
