#pragma once

#include <map>
#include <string>

#include "dacsm/pipeline.hpp"

namespace dacsm {

// Flat key = value run configuration. Every key has a registered default and
// a one-line description; unknown keys are rejected wherever they appear
// (file, override, or programmatic set). Values stay strings until typed
// accessors parse them, so error messages can echo the offending text.
class RunConfig {
 public:
  static RunConfig defaults();

  // Parses a config file: one `key = value` per line, blank lines and
  // #-comments ignored, later duplicates win. Throws ConfigError on unknown
  // keys or unparseable lines.
  static RunConfig from_file(const std::string& path);

  // Applies a single `key=value` override (the --set form).
  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& assignment);  // "key=value"

  const std::string& raw(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Typed views. Both validate and throw ConfigError (wrapping parameter
  // problems) so the CLI maps every bad-config path to one exit code.
  TrainConfig to_train_config() const;
  SyntheticDomainSpec to_domain_spec() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  // Human-readable key reference: key, default, description.
  static std::string describe_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dacsm
