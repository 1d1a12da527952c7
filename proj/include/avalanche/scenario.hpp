#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "avalanche/protocol.hpp"

namespace avalanche {

using ordered_json = nlohmann::ordered_json;

/// Malformed config, unknown key or bad override. Maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitQuality = 3 };

struct Sweep {
  std::string parameter;
  std::vector<ordered_json> values;
};

/// Effective run description after preset, file and override merging.
struct RunConfig {
  std::string scenario = "custom";
  ProtocolConfig protocol;
  double omega_ref = 1.0;
  /// Seconds per 1/Omega_gr; only used to add SI times to summaries when > 0.
  double si_time_unit = 0.0;
  std::filesystem::path output_dir = "out";
  std::vector<std::string> formats{"csv", "json"};
  std::optional<Sweep> sweep;
  std::vector<std::string> notes;
  /// The flat key/value form this config was built from.
  ordered_json flat;
};

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
/// Every accepted key with its default value.
ordered_json default_config();
/// Keys a preset sets on top of the defaults.
ordered_json preset_overrides(const std::string& name);

/// Merges `patch` into `base`; unknown keys and type mismatches throw ConfigError.
void merge_strict(ordered_json& base, const ordered_json& patch, const std::string& origin);
/// "key=value"; the value is read as JSON when it parses, else as a string.
void apply_override(ordered_json& flat, const std::string& assignment);

RunConfig build_run_config(const ordered_json& flat);
/// Preset name or path to a JSON file, then overrides in order.
RunConfig load_run_config(const std::string& name_or_path, const std::vector<std::string>& overrides);
/// Same config with one key replaced (used for sweep jobs).
RunConfig with_value(const RunConfig& cfg, const std::string& key, const ordered_json& value);

/// t, S, S_0..S_{N-1}; 17 significant digits.
std::string trace_csv(const SignalTrace& trace);
/// Mean of S over grid times t >= 0.75 t_final.
double final_quarter_mean(const SignalTrace& trace);

struct JobOutcome {
  std::string label;
  ordered_json value;
  RunConfig config;
  ProtocolResult result;
  std::filesystem::path dir;
  std::vector<std::string> quality_issues;
};

struct RunOutcome {
  int exit_code = kExitOk;
  std::vector<JobOutcome> jobs;
  ordered_json summary;
};

/// Physics-quality problems that fail a strict run.
std::vector<std::string> quality_issues(const ProtocolResult& result);
ordered_json job_summary(const JobOutcome& job, const std::string& timestamp);

/// Runs every job, writes trace.csv / summary.json per job directory (and an
/// aggregate summary.json for sweeps). Exit code 3 for quality issues when
/// strict, 0 otherwise. Errors propagate as exceptions.
RunOutcome run_scenario(const RunConfig& cfg, bool strict, int threads);

}  // namespace avalanche
