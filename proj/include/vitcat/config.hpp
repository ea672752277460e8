#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vitcat::cli {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

// Flat key=value run configuration. Every key is validated against the
// schema; unknown keys are rejected so typos cannot silently fall back to
// defaults. The resolved view (defaults plus overrides) is what the
// manifest echoes.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<ConfigKey>& schema();

  // '#' starts a comment; blank lines are skipped; "key = value" per line.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // All keys with their effective values, sorted by key.
  std::vector<std::pair<std::string, std::string>> resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace vitcat::cli
