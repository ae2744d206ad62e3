#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mvldp {

struct KeySpec {
  std::string name;
  /// Empty means the key has no default and must be given when `required` is set.
  std::string default_value;
  std::string help;
  bool required = false;
};

std::vector<std::string> command_names();
/// Command-specific keys (without the global ones). ConfigError for an unknown command.
const std::vector<KeySpec>& command_keys(const std::string& command);
bool command_is_stochastic(const std::string& command);

/// Flat key=value text with '#' comments. ConfigError names the offending line.
std::map<std::string, std::string> parse_config_text(std::string_view text);

struct ExperimentConfig {
  std::string command;
  /// Every command key plus seed and precision, defaults filled in.
  std::map<std::string, std::string> values;
  std::uint64_t seed = 1;
  std::string out_dir;
  std::size_t threads = 1;
  int precision = 12;

  /// Merges file values under flag values. ConfigError on unknown keys, missing
  /// required keys, or a missing seed for a stochastic command.
  static ExperimentConfig make(const std::string& command, const std::map<std::string, std::string>& file_values,
                               const std::map<std::string, std::string>& flag_values);

  const std::string& text(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
};

struct AssertionRecord {
  std::string name;
  double observed = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  /// "<=", ">=", "abs", "rel", "in" (reference <= observed <= tolerance) or "true".
  std::string relation;
  bool pass = false;
};

struct PlotTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ExperimentReport {
  std::string command;
  std::map<std::string, std::string> config;
  std::string input_hash;
  std::string rng_policy;
  std::vector<AssertionRecord> assertions;
  nlohmann::json results = nlohmann::json::object();
  std::map<std::string, PlotTable> plots;
  /// Extra outputs written next to the report (file name -> content).
  std::map<std::string, std::string> files;
  int precision = 12;
  double wall_seconds = 0.0;
  std::size_t threads = 1;

  bool pass() const;
  /// Without the runtime section the layout is byte-stable across runs and thread counts.
  nlohmann::json to_json(bool include_runtime = true) const;
};

/// Number rounded to the report precision; non-finite values become strings.
nlohmann::json report_number(double x, int precision);

/// Git blob object id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(std::string_view content);

ExperimentReport run_command(const ExperimentConfig& cfg);

std::vector<std::string> plot_kinds();
/// Writes <dir>/<kind>.dat: a '#' header naming the columns, then whitespace-separated rows.
/// ParameterError for an unknown kind or one the report does not carry.
std::string emit_plot_data(const ExperimentReport& report, const std::string& kind, const std::string& dir);

/// Full command line entry: 0 when every assertion passes, 1 on a failed assertion
/// or numerical failure, 2 on a configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mvldp
