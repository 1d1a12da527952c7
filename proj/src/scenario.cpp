#include "avalanche/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "avalanche/parallel.hpp"

namespace avalanche {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, ordered_json>& presets() {
  static const std::map<std::string, ordered_json> table = [] {
    std::map<std::string, ordered_json> t;
    const ordered_json fig2 = {
        {"n_sites", 11},        {"omega_gr", 1.0}, {"delta_gr", -500.0}, {"v_rr", 500.0},
        {"absorption_site", -1}, {"t_amp", 6.0},   {"n_output", 601},
        {"notes", {"chain length 11 assumed for all signal panels"}},
    };
    t["fig2-local"] = fig2;
    t["fig2-local"]["absorption"] = "local";
    t["fig2-collective"] = fig2;
    t["fig2-collective"]["absorption"] = "collective";
    t["fig2-mixed"] = fig2;
    t["fig2-mixed"]["absorption"] = "mixed";

    t["figS1-rabi-scan"] = fig2;
    t["figS1-rabi-scan"]["absorption"] = "local";
    t["figS1-rabi-scan"]["t_amp"] = 12.0;
    t["figS1-rabi-scan"]["n_output"] = 1201;
    t["figS1-rabi-scan"]["sweep"] = {{"parameter", "omega_gr"}, {"values", {0.5, 1.0, 2.0}}};
    t["figS1-rabi-scan"]["notes"] = {"chain length 11 assumed for all signal panels",
                                     "Rabi grid {0.5, 1, 2} x omega_ref is a design choice"};

    t["figS2-dephasing"] = {
        {"n_sites", 5},
        {"omega_gr", 1.0},
        {"delta_gr", -500.0},
        {"v_rr", 500.0},
        {"absorption", "local"},
        {"absorption_site", -1},
        {"gamma_deph", 10.0},
        {"dephasing_method", "lindblad"},
        {"t_amp", 30.0},
        {"n_output", 301},
        {"sweep", {{"parameter", "gamma_deph"}, {"values", {0.1, 1.0, 10.0}}}},
        {"notes", {"dephasing grid {0.1, 1, 10} is a design choice"}},
    };

    t["fig4-phonon"] = {
        {"n_sites", 7},
        {"omega_gr", 1.0},
        {"delta_gr", -20.0},
        {"v_rr", 20.0},
        {"absorption", "local"},
        {"absorption_site", -1},
        {"phonons", true},
        {"nu", 8.0},
        {"phonon_cutoff", 7},
        {"backend", "tebd"},
        {"chi_max", 64},
        {"svd_cutoff", 1e-4},
        {"trotter_dt", 0.02},
        {"t_amp", 4.0},
        {"n_output", 81},
        {"sweep", {{"parameter", "kappa"}, {"values", {0.0, 1.5, 3.0}}}},
        {"notes",
         {"chain length 7 keeps the local-dimension-16 TEBD runs short",
          "v_rr = -delta_gr = 20 is a runtime choice; the facilitation condition holds and omega_gr/v_rr = 0.05",
          "svd_cutoff 1e-4 keeps the discarded weight near 1e-5 at kappa = 3"}},
    };
    return t;
  }();
  return table;
}

enum class Kind { Bool, String, Integer, Unsigned, Float, StringArray, Object };

Kind kind_of(const ordered_json& v) {
  if (v.is_boolean()) return Kind::Bool;
  if (v.is_string()) return Kind::String;
  if (v.is_number_unsigned()) return Kind::Unsigned;
  if (v.is_number_integer()) return Kind::Integer;
  if (v.is_number_float()) return Kind::Float;
  if (v.is_array()) return Kind::StringArray;
  return Kind::Object;
}

// Coerces `value` to the type of `reference`, or throws.
ordered_json coerce(const ordered_json& reference, const ordered_json& value, const std::string& key) {
  auto fail = [&] {
    throw ConfigError("config key '" + key + "': expected " + std::string(reference.type_name()) + ", got " +
                      value.dump());
  };
  auto integral = [&](const ordered_json& v) {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && std::isfinite(v.get<double>()) && std::floor(v.get<double>()) == v.get<double>();
  };
  switch (kind_of(reference)) {
    case Kind::Bool:
      if (!value.is_boolean()) fail();
      return value;
    case Kind::String:
      if (!value.is_string()) fail();
      return value;
    case Kind::Integer:
      if (!integral(value)) fail();
      return ordered_json(static_cast<long long>(value.get<double>()));
    case Kind::Unsigned:
      if (value.is_number_unsigned()) return value;
      if (!integral(value) || value.get<double>() < 0) fail();
      return ordered_json(static_cast<std::uint64_t>(value.get<double>()));
    case Kind::Float:
      if (!value.is_number()) fail();
      return ordered_json(value.get<double>());
    case Kind::StringArray:
      if (!value.is_array()) fail();
      for (const auto& item : value)
        if (!item.is_string()) fail();
      return value;
    case Kind::Object:
      if (!value.is_object()) fail();
      return value;
  }
  fail();
  return {};
}

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

ordered_json number_or_null(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

bool has_format(const RunConfig& cfg, const std::string& f) {
  return std::find(cfg.formats.begin(), cfg.formats.end(), f) != cfg.formats.end();
}

template <typename T>
T pick(const ordered_json& flat, const char* key) {
  return flat.at(key).get<T>();
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : presets()) names.push_back(name);
  return names;
}

bool is_preset(const std::string& name) { return presets().count(name) > 0; }

ordered_json default_config() {
  return {
      {"scenario", "custom"},
      {"n_sites", 11},
      {"omega_gr", 1.0},
      {"delta_gr", -500.0},
      {"v_rr", 500.0},
      {"gamma_thz", 0.0},
      {"gamma_deph", 0.0},
      {"phonons", false},
      {"nu", 8.0},
      {"kappa", 0.0},
      {"phonon_cutoff", 7},
      {"t_sense", 1.0},
      {"t_amp", 10.0},
      {"n_output", 201},
      {"absorption", "local"},
      {"absorption_site", -1},
      {"backend", "dense"},
      {"dephasing_method", "lindblad"},
      {"integrator", "krylov"},
      {"rel_tol", 1e-8},
      {"abs_tol", 1e-10},
      {"krylov_dim", 30},
      {"n_trajectories", 200},
      {"chi_max", 64},
      {"svd_cutoff", 1e-10},
      {"trotter_dt", 1e-3},
      {"seed", std::uint64_t{0}},
      {"threads", 1},
      {"omega_ref", 1.0},
      {"si_time_unit", 0.0},
      {"output_dir", "out"},
      {"formats", {"csv", "json"}},
      {"sweep", ordered_json::object()},
      {"notes", ordered_json::array()},
  };
}

ordered_json preset_overrides(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) throw ConfigError("unknown scenario '" + name + "'");
  ordered_json out = it->second;
  out["scenario"] = name;
  return out;
}

void merge_strict(ordered_json& base, const ordered_json& patch, const std::string& origin) {
  if (!patch.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    base[key] = coerce(base[key], value, key);
  }
}

void apply_override(ordered_json& flat, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ordered_json value = ordered_json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  merge_strict(flat, ordered_json{{key, value}}, "override");
}

RunConfig build_run_config(const ordered_json& flat_in) {
  ordered_json flat = default_config();
  merge_strict(flat, flat_in, "config");

  RunConfig cfg;
  cfg.flat = flat;
  cfg.scenario = pick<std::string>(flat, "scenario");
  auto& p = cfg.protocol;
  auto& m = p.model;
  m.n_sites = pick<int>(flat, "n_sites");
  m.omega_gr = pick<double>(flat, "omega_gr");
  m.delta_gr = pick<double>(flat, "delta_gr");
  m.v_rr = pick<double>(flat, "v_rr");
  m.gamma_thz = pick<double>(flat, "gamma_thz");
  m.gamma_deph = pick<double>(flat, "gamma_deph");
  if (pick<bool>(flat, "phonons")) {
    PhononParams ph;
    ph.nu = pick<double>(flat, "nu");
    ph.kappa = pick<double>(flat, "kappa");
    ph.cutoff = pick<int>(flat, "phonon_cutoff");
    p.phonons = ph;
  }
  p.t_sense = pick<double>(flat, "t_sense");
  p.t_amp = pick<double>(flat, "t_amp");
  p.n_output = pick<int>(flat, "n_output");

  const auto absorption = pick<std::string>(flat, "absorption");
  if (absorption == "local")
    p.absorption = Absorption::local_at(pick<int>(flat, "absorption_site"));
  else if (absorption == "local-sampled")
    p.absorption = Absorption::local_sampled();
  else if (absorption == "collective")
    p.absorption = Absorption::collective();
  else if (absorption == "mixed")
    p.absorption = Absorption::mixed_average();
  else
    throw ConfigError("absorption must be local, local-sampled, collective or mixed");

  const auto backend = pick<std::string>(flat, "backend");
  if (backend == "dense")
    p.backend = Backend::Dense;
  else if (backend == "tebd")
    p.backend = Backend::Tebd;
  else
    throw ConfigError("backend must be dense or tebd");

  const auto deph = pick<std::string>(flat, "dephasing_method");
  if (deph == "lindblad")
    p.dephasing = DephasingMethod::Lindblad;
  else if (deph == "trajectories")
    p.dephasing = DephasingMethod::Trajectories;
  else
    throw ConfigError("dephasing_method must be lindblad or trajectories");

  const auto integrator = pick<std::string>(flat, "integrator");
  if (integrator == "krylov")
    p.integrator.method = IntegratorMethod::KrylovExpm;
  else if (integrator == "rk45")
    p.integrator.method = IntegratorMethod::AdaptiveRK;
  else
    throw ConfigError("integrator must be krylov or rk45");
  p.integrator.rel_tol = pick<double>(flat, "rel_tol");
  p.integrator.abs_tol = pick<double>(flat, "abs_tol");
  p.integrator.krylov_dim = pick<int>(flat, "krylov_dim");

  p.trajectories.n_trajectories = pick<int>(flat, "n_trajectories");
  p.trajectories.n_threads = pick<int>(flat, "threads");
  p.truncation.chi_max = pick<int>(flat, "chi_max");
  p.truncation.svd_cutoff = pick<double>(flat, "svd_cutoff");
  p.truncation.trotter_dt = pick<double>(flat, "trotter_dt");
  p.seed = pick<std::uint64_t>(flat, "seed");

  cfg.omega_ref = pick<double>(flat, "omega_ref");
  cfg.si_time_unit = pick<double>(flat, "si_time_unit");
  cfg.output_dir = pick<std::string>(flat, "output_dir");
  cfg.formats = pick<std::vector<std::string>>(flat, "formats");
  cfg.notes = pick<std::vector<std::string>>(flat, "notes");
  for (const auto& f : cfg.formats)
    if (f != "csv" && f != "json") throw ConfigError("formats may only contain csv and json");
  if (!(cfg.omega_ref > 0.0)) throw ConfigError("omega_ref must be positive");
  if (cfg.si_time_unit < 0.0) throw ConfigError("si_time_unit must be >= 0");

  const auto& sweep = flat.at("sweep");
  if (!sweep.empty()) {
    for (const auto& [key, _] : sweep.items())
      if (key != "parameter" && key != "values") throw ConfigError("sweep: unknown key '" + key + "'");
    if (!sweep.contains("parameter") || !sweep["parameter"].is_string())
      throw ConfigError("sweep.parameter must be a string");
    if (!sweep.contains("values") || !sweep["values"].is_array() || sweep["values"].empty())
      throw ConfigError("sweep.values must be a non-empty array");
    Sweep s;
    s.parameter = sweep["parameter"].get<std::string>();
    static const std::vector<std::string> fixed{"scenario", "sweep", "output_dir", "formats", "notes", "threads"};
    if (!default_config().contains(s.parameter) ||
        std::find(fixed.begin(), fixed.end(), s.parameter) != fixed.end())
      throw ConfigError("sweep.parameter '" + s.parameter + "' cannot be swept");
    for (const auto& v : sweep["values"]) {
      ordered_json probe = flat;
      merge_strict(probe, ordered_json{{s.parameter, v}}, "sweep");
      s.values.push_back(probe[s.parameter]);
    }
    cfg.sweep = std::move(s);
  }

  try {
    p.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& name_or_path, const std::vector<std::string>& overrides) {
  ordered_json flat = default_config();
  if (is_preset(name_or_path)) {
    merge_strict(flat, preset_overrides(name_or_path), "preset");
  } else {
    std::ifstream in(name_or_path);
    if (!in) throw ConfigError("'" + name_or_path + "' is neither a scenario nor a readable config file");
    ordered_json file = ordered_json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file '" + name_or_path + "' is not valid JSON");
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    if (file.contains("scenario") && file["scenario"].is_string() && is_preset(file["scenario"].get<std::string>()))
      merge_strict(flat, preset_overrides(file["scenario"].get<std::string>()), "preset");
    merge_strict(flat, file, name_or_path);
  }
  for (const auto& o : overrides) apply_override(flat, o);
  return build_run_config(flat);
}

RunConfig with_value(const RunConfig& cfg, const std::string& key, const ordered_json& value) {
  ordered_json flat = cfg.flat;
  flat["sweep"] = ordered_json::object();
  merge_strict(flat, ordered_json{{key, value}}, "sweep");
  return build_run_config(flat);
}

std::string trace_csv(const SignalTrace& trace) {
  std::string out = "t,S";
  for (int j = 0; j < trace.n_sites(); ++j) out += ",S_" + std::to_string(j);
  out += '\n';
  for (std::size_t t = 0; t < trace.times.size(); ++t) {
    out += format_double(trace.times[t]);
    out += ',';
    out += format_double(trace.s_total[t]);
    for (int j = 0; j < trace.n_sites(); ++j) {
      out += ',';
      out += format_double(trace.s_site(j, static_cast<Eigen::Index>(t)));
    }
    out += '\n';
  }
  return out;
}

double final_quarter_mean(const SignalTrace& trace) {
  const double start = 0.75 * trace.times.back();
  double sum = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < trace.times.size(); ++t) {
    if (trace.times[t] < start - 1e-12) continue;
    sum += trace.s_total[t];
    ++count;
  }
  return sum / count;
}

std::vector<std::string> quality_issues(const ProtocolResult& result) {
  std::vector<std::string> out;
  const auto& m = result.trace.metadata;
  if (m.truncation_flagged)
    out.push_back("truncation: chi_max saturated with discarded weight " + format_double(m.discarded_weight));
  if (m.lindblad_min_eigenvalue && *m.lindblad_min_eigenvalue < -1e-6)
    out.push_back("density matrix lost positivity: min eigenvalue " + format_double(*m.lindblad_min_eigenvalue));
  for (const auto& w : m.warnings)
    if (w.rfind("trajectory aborted", 0) == 0) out.push_back(w);
  return out;
}

ordered_json job_summary(const JobOutcome& job, const std::string& timestamp) {
  const auto& r = job.result;
  const auto& m = r.trace.metadata;
  ordered_json s;
  s["schema"] = 1;
  s["scenario"] = job.config.scenario;
  s["timestamp"] = timestamp;
  s["status"] = r.summary ? "ok" : "no-turnover";
  if (r.summary) {
    const auto& a = *r.summary;
    s["summary"] = {
        {"t_a", a.t_a},
        {"s_max", a.s_max},
        {"velocity", a.velocity},
        {"omega_ref", a.omega_ref},
        {"turnover_time", a.turnover_time},
        {"early_slope", number_or_null(a.early_slope)},
        {"mid_slope", number_or_null(a.mid_slope)},
        {"crossover_time", number_or_null(a.crossover_time)},
    };
    if (job.config.si_time_unit > 0.0) s["summary"]["t_a_seconds"] = a.t_a * job.config.si_time_unit;
  } else {
    s["summary"] = nullptr;
  }
  s["summary_error"] = r.summary_error;
  s["final_quarter_mean"] = final_quarter_mean(r.trace);
  s["absorption"] = {{"absorbed", r.record.absorbed},
                     {"time", r.record.time},
                     {"site", r.record.site},
                     {"collective", r.record.collective},
                     {"mixed", r.record.mixed}};
  s["seed"] = job.config.protocol.seed;
  s["backend"] = m.backend;
  s["diagnostics"] = {
      {"discarded_weight", m.discarded_weight},
      {"max_bond", m.max_bond},
      {"truncation_flagged", m.truncation_flagged},
      {"max_phonon_occupation", m.max_phonon_occupation},
      {"max_cutoff_population", m.max_cutoff_population},
      {"lindblad_min_eigenvalue", m.lindblad_min_eigenvalue ? ordered_json(*m.lindblad_min_eigenvalue) : ordered_json()},
      {"trajectories_completed", m.trajectories_completed},
      {"warnings", m.warnings},
  };
  s["quality_issues"] = job.quality_issues;
  s["notes"] = job.config.notes;
  s["config"] = job.config.flat;
  return s;
}

RunOutcome run_scenario(const RunConfig& cfg, bool strict, int threads) {
  RunOutcome out;
  if (cfg.sweep) {
    for (const auto& v : cfg.sweep->values) {
      JobOutcome job;
      job.value = v;
      job.label = cfg.sweep->parameter + "=" + v.dump();
      job.config = with_value(cfg, cfg.sweep->parameter, v);
      job.dir = cfg.output_dir / job.label;
      out.jobs.push_back(std::move(job));
    }
  } else {
    JobOutcome job;
    job.label = cfg.scenario;
    job.config = cfg;
    job.dir = cfg.output_dir;
    out.jobs.push_back(std::move(job));
  }

  parallel_for(static_cast<int>(out.jobs.size()), threads, [&](int i) {
    auto& job = out.jobs[i];
    job.result = run_protocol(job.config.protocol);
    if (job.result.summary) job.result.summary = analyze(job.result.trace, job.config.omega_ref);
    job.result.trace.metadata.preset = job.config.scenario;
    job.quality_issues = quality_issues(job.result);
  });

  const std::string stamp = timestamp_utc();
  for (const auto& job : out.jobs) {
    fs::create_directories(job.dir);
    if (has_format(cfg, "csv")) write_text(job.dir / "trace.csv", trace_csv(job.result.trace));
    if (has_format(cfg, "json")) write_text(job.dir / "summary.json", job_summary(job, stamp).dump(2) + "\n");
    if (!job.quality_issues.empty() && strict) out.exit_code = kExitQuality;
  }

  if (cfg.sweep) {
    ordered_json agg;
    agg["schema"] = 1;
    agg["scenario"] = cfg.scenario;
    agg["timestamp"] = stamp;
    agg["sweep"] = {{"parameter", cfg.sweep->parameter}, {"values", cfg.sweep->values}};
    const JobOutcome* reference = nullptr;
    if (cfg.sweep->parameter == "omega_gr")
      for (const auto& job : out.jobs)
        if (job.result.summary && std::abs(job.value.get<double>() - cfg.omega_ref) < 1e-12) reference = &job;
    agg["jobs"] = ordered_json::array();
    for (const auto& job : out.jobs) {
      ordered_json j;
      j["label"] = job.label;
      j["value"] = job.value;
      j["dir"] = job.label;
      j["status"] = job.result.summary ? "ok" : "no-turnover";
      const auto& s = job.result.summary;
      j["t_a"] = s ? ordered_json(s->t_a) : ordered_json();
      j["s_max"] = s ? ordered_json(s->s_max) : ordered_json();
      j["velocity"] = s ? ordered_json(s->velocity) : ordered_json();
      if (cfg.sweep->parameter == "omega_gr") {
        const double ratio = job.value.get<double>() / cfg.omega_ref;
        j["velocity_per_omega"] = s ? ordered_json(s->velocity / ratio) : ordered_json();
        j["t_a_relative"] = s && reference ? ordered_json(s->t_a / reference->result.summary->t_a) : ordered_json();
      }
      j["final_quarter_mean"] = final_quarter_mean(job.result.trace);
      j["discarded_weight"] = job.result.trace.metadata.discarded_weight;
      j["quality_issues"] = job.quality_issues;
      agg["jobs"].push_back(std::move(j));
    }
    agg["notes"] = cfg.notes;
    agg["config"] = cfg.flat;
    out.summary = agg;
    if (has_format(cfg, "json")) {
      fs::create_directories(cfg.output_dir);
      write_text(cfg.output_dir / "summary.json", agg.dump(2) + "\n");
    }
  } else {
    out.summary = job_summary(out.jobs.front(), stamp);
  }
  return out;
}

}  // namespace avalanche
