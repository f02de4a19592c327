#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixfit/dataset.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/fit.hpp"
#include "fixfit/mlp.hpp"
#include "fixfit/parallel.hpp"
#include "fixfit/rng.hpp"
#include "fixfit/scsa.hpp"
#include "fixfit/svg.hpp"
#include "fixfit/sweep.hpp"

namespace fixfit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kStageFormatVersion = 1;

// Stage salts mixed into the master seed so stages draw independent streams.
inline constexpr std::uint64_t kSweepSalt = 2;
inline constexpr std::uint64_t kFitSalt = 4;

// ------------------------------------------------------------------ config

/// Every accepted key with its default. User files and --set overrides may only
/// touch keys present here (plus free-form entries under simulation.params).
inline json default_config(const std::string& pipeline) {
  json c;
  c["pipeline"] = pipeline;
  c["seed"] = 0;
  c["sweep"] = {{"k_values", {1, 2, 3, 4, 5}}, {"replicates", 10}, {"alpha", 0.05}};
  c["train"] = {{"batch_size", 256}, {"max_epochs", 5000}, {"patience", 200}, {"lr", 1e-3}};
  c["sensitivity"] = {{"degree", 3}, {"k", 0}};
  c["fit"] = {{"n_hops", 100}, {"step_size", 0.2},   {"temperature", 0.0}, {"penalty", 1e3},
              {"restarts", 1}, {"bound_widen", 0.1}, {"grad_tol", 1e-8},   {"max_iter", 500}};
  if (pipeline == "kepler") {
    c["sampling"] = {{"n_raw", 4000}, {"skip", 1}, {"lower", 0.1}, {"upper", 1.0}};
    c["simulation"] = {{"G", 0.5}, {"n_theta", 100}, {"e_min", 0.7}, {"e_max", 0.95}};
    c["network"] = {{"encoder", {14, 14}}, {"decoder", {110, 110}}, {"activation", "tanh"}};
  } else if (pipeline == "larter_breakspear") {
    c["sampling"] = {{"n_raw", 300}, {"skip", 1}, {"free", json::array()}};
    c["simulation"] = {{"regions", 8},          {"connectivity", ""},     {"lambda", 0.0},
                       {"duration_ms", 300000.0}, {"dt_ms", 0.1},         {"record_every_ms", 1.0},
                       {"osc_threshold", 0.05}, {"max_mean_fc", 0.3},     {"tr_s", 0.8},
                       {"f_lo", 0.01},          {"f_hi", 0.1},            {"transient_s", 20.0},
                       {"params", json::object()}};
    c["network"] = {{"encoder", {21, 21}}, {"decoder", {3013}}, {"activation", "relu"}};
  } else {
    throw ConfigError("config: unknown pipeline '" + pipeline + "' (expected kepler or larter_breakspear)");
  }
  return c;
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

inline bool free_form(const std::vector<std::string>& path) {
  return path.size() >= 2 && path[0] == "simulation" && path[1] == "params";
}

inline void merge_checked(json& base, const json& user, std::vector<std::string> path) {
  for (const auto& [key, value] : user.items()) {
    path.push_back(key);
    std::string dotted;
    for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
    if (free_form(path)) {
      if (path.size() == 2 && !value.is_object()) throw ConfigError("config: simulation.params must be an object");
      if (path.size() == 3 && !value.is_number()) throw ConfigError("config: '" + dotted + "' must be a number");
      base[key] = value;
    } else if (!base.contains(key)) {
      throw ConfigError("config: unknown key '" + dotted + "'");
    } else if (base[key].is_object()) {
      if (!value.is_object()) throw ConfigError("config: '" + dotted + "' must be an object");
      merge_checked(base[key], value, path);
    } else {
      if (!same_kind(base[key], value)) throw ConfigError("config: '" + dotted + "' has the wrong type");
      base[key] = value;
    }
    path.pop_back();
  }
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) out.push_back(cur), cur.clear();
    else cur += c;
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// Resolved configuration: defaults for the selected pipeline merged with a
/// user document and command-line overrides.
class PipelineConfig {
 public:
  PipelineConfig() : PipelineConfig(json{{"pipeline", "kepler"}}) {}

  explicit PipelineConfig(const json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be a JSON object");
    if (!user.contains("pipeline") || !user["pipeline"].is_string())
      throw ConfigError("config: missing string key 'pipeline'");
    j_ = default_config(user["pipeline"].get<std::string>());
    detail::merge_checked(j_, user, {});
    validate();
  }

  static PipelineConfig from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config: malformed JSON in '" + path.string() + "': " + e.what());
    }
    return PipelineConfig(j);
  }

  /// Applies one `section.key=value` override. The value is parsed as JSON when
  /// possible and taken as a string otherwise.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    const auto path = detail::split(assignment.substr(0, eq), '.');
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    if (path.size() == 1 && path[0] == "pipeline") throw ConfigError("--set cannot change the pipeline");
    json patch = value;
    for (auto it = path.rbegin(); it != path.rend(); ++it) patch = json{{*it, patch}};
    json merged = j_;
    detail::merge_checked(merged, patch, {});
    std::swap(j_, merged);
    try {
      validate();
    } catch (...) {
      std::swap(j_, merged);
      throw;
    }
  }

  const json& raw() const noexcept { return j_; }
  std::string pipeline() const { return j_["pipeline"].get<std::string>(); }
  bool is_kepler() const { return pipeline() == "kepler"; }
  std::uint64_t seed() const { return j_["seed"].get<std::uint64_t>(); }
  const json& section(const std::string& name) const { return j_.at(name); }

  /// Hash over the sections that determine a stage's artifacts.
  std::string stage_hash(const std::string& stage) const {
    std::vector<std::string> keys{"pipeline", "seed", "sampling", "simulation"};
    if (stage != "generate") keys.insert(keys.end(), {"network", "train", "sweep"});
    if (stage == "sensitivity") keys.push_back("sensitivity");
    if (stage == "fit") keys.push_back("fit");
    json sub = json::object();
    for (const auto& k : keys) sub[k] = j_[k];
    return detail::hex(detail::fnv1a(sub.dump()));
  }

  // Module configs -------------------------------------------------------

  std::size_t n_raw() const { return section("sampling")["n_raw"].get<std::size_t>(); }

  ParamSpace space() const {
    const auto& s = section("sampling");
    if (is_kepler()) return kepler_space(s["lower"].get<double>(), s["upper"].get<double>());
    auto specs = lb_space().specs();
    const auto free = s["free"].get<std::vector<std::string>>();
    if (!free.empty()) {
      for (const auto& name : free)
        if (std::none_of(specs.begin(), specs.end(), [&](const ParamSpec& p) { return p.name == name; }))
          throw ConfigError("config: sampling.free names unknown parameter '" + name + "'");
      for (auto& p : specs) p.fixed = std::find(free.begin(), free.end(), p.name) == free.end();
    }
    return ParamSpace(specs);
  }

  KeplerGenConfig kepler_gen() const {
    const auto& s = section("simulation");
    KeplerGenConfig g;
    g.G = s["G"].get<double>();
    g.n_theta = s["n_theta"].get<std::size_t>();
    g.e_min = s["e_min"].get<double>();
    g.e_max = s["e_max"].get<double>();
    g.skip = section("sampling")["skip"].get<std::size_t>();
    return g;
  }

  LBGenConfig lb_gen(std::size_t jobs) const {
    const auto& s = section("simulation");
    LBGenConfig g;
    for (const auto& [name, value] : s["params"].items()) {
      if (!lb::field_index(name)) throw ConfigError("config: simulation.params names unknown parameter '" + name + "'");
      g.base[name] = value.get<double>();
    }
    const auto csv = s["connectivity"].get<std::string>();
    if (!csv.empty()) {
      g.conn = lb::load_connectivity_csv(csv);
    } else {
      const double lambda = s["lambda"].get<double>();
      g.conn = lb::synthetic_connectivity(s["regions"].get<std::size_t>(),
                                          lambda > 0.0 ? std::optional<double>(lambda) : std::nullopt);
    }
    g.sim.duration_ms = s["duration_ms"].get<double>();
    g.sim.dt_ms = s["dt_ms"].get<double>();
    g.sim.record_every_ms = s["record_every_ms"].get<double>();
    g.bold.TR = s["tr_s"].get<double>();
    g.bold.f_lo = s["f_lo"].get<double>();
    g.bold.f_hi = s["f_hi"].get<double>();
    g.bold.transient_discard = s["transient_s"].get<double>();
    g.osc_threshold = s["osc_threshold"].get<double>();
    g.max_mean_fc = s["max_mean_fc"].get<double>();
    g.seed = seed();
    g.skip = section("sampling")["skip"].get<std::size_t>();
    g.jobs = jobs;
    return g;
  }

  nn::MLPSpec network(std::size_t inputs, std::size_t k, std::size_t outputs) const {
    const auto& n = section("network");
    return nn::bottleneck_spec(inputs, n["encoder"].get<std::vector<std::size_t>>(), k,
                               n["decoder"].get<std::vector<std::size_t>>(), outputs,
                               nn::activation_from_string(n["activation"].get<std::string>()));
  }

  nn::TrainConfig train() const {
    const auto& t = section("train");
    nn::TrainConfig c;
    c.batch_size = t["batch_size"].get<std::size_t>();
    c.max_epochs = t["max_epochs"].get<int>();
    c.patience = t["patience"].get<int>();
    c.adam.lr = t["lr"].get<double>();
    return c;
  }

  sweep::SweepConfig sweep(std::size_t jobs) const {
    const auto& s = section("sweep");
    sweep::SweepConfig c;
    c.k_values = s["k_values"].get<std::vector<std::size_t>>();
    c.replicates = s["replicates"].get<std::size_t>();
    c.alpha = s["alpha"].get<double>();
    c.train = train();
    c.master_seed = derive_seed(seed(), {kSweepSalt});
    c.jobs = jobs;
    return c;
  }

  fit::FitConfig fit() const {
    const auto& f = section("fit");
    fit::FitConfig c;
    c.n_hops = f["n_hops"].get<int>();
    c.step_size = f["step_size"].get<double>();
    c.temperature = f["temperature"].get<double>();
    c.bfgs.grad_tol = f["grad_tol"].get<double>();
    c.bfgs.max_iter = f["max_iter"].get<int>();
    return c;
  }

 private:
  void validate() const {
    const auto& s = j_["sampling"];
    if (s["n_raw"].get<long long>() < 1) throw ConfigError("config: sampling.n_raw must be at least 1");
    if (s["skip"].get<long long>() < 0) throw ConfigError("config: sampling.skip must be non-negative");
    if (j_["seed"].get<long long>() < 0) throw ConfigError("config: seed must be non-negative");
    const auto ks = j_["sweep"]["k_values"];
    if (ks.empty()) throw ConfigError("config: sweep.k_values is empty");
    for (const auto& k : ks)
      if (!k.is_number_integer() || k.get<long long>() < 1) throw ConfigError("config: sweep.k_values must be positive integers");
    if (j_["sweep"]["replicates"].get<long long>() < 1) throw ConfigError("config: sweep.replicates must be >= 1");
    const double alpha = j_["sweep"]["alpha"].get<double>();
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("config: sweep.alpha must be in (0, 1)");
    train().validate();
    if (j_["train"]["lr"].get<double>() <= 0.0) throw ConfigError("config: train.lr must be positive");
    if (j_["sensitivity"]["degree"].get<long long>() < 1) throw ConfigError("config: sensitivity.degree must be >= 1");
    if (j_["sensitivity"]["k"].get<long long>() < 0) throw ConfigError("config: sensitivity.k must be >= 0");
    fit().validate();
    if (j_["fit"]["restarts"].get<long long>() < 1) throw ConfigError("config: fit.restarts must be >= 1");
    if (j_["fit"]["penalty"].get<double>() < 0.0) throw ConfigError("config: fit.penalty must be non-negative");
    if (j_["fit"]["bound_widen"].get<double>() < 0.0) throw ConfigError("config: fit.bound_widen must be non-negative");
    nn::activation_from_string(j_["network"]["activation"].get<std::string>());
    space();
  }

  json j_;
};

// --------------------------------------------------------------- workdir

struct Workdir {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path dataset() const { return root / "dataset"; }
  fs::path sweep() const { return root / "sweep"; }
  fs::path sensitivity() const { return root / "sensitivity"; }
  fs::path fit() const { return root / "fit"; }
  fs::path report() const { return root / "report"; }
};

inline json stage_record(const PipelineConfig& cfg, const std::string& stage) {
  return {{"stage", stage},
          {"config_hash", cfg.stage_hash(stage)},
          {"format_version", kStageFormatVersion},
          {"fixfit_version", kVersion}};
}

/// Hash recorded by a stage directory, if it has one. The dataset keeps it
/// inside its own manifest under "stage".
inline std::optional<std::string> recorded_hash(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  const auto j = nn::read_json_file(path);
  if (j.contains("stage") && j["stage"].is_object()) return j["stage"].value("config_hash", std::string());
  return j.value("config_hash", std::string());
}

/// Refuses to mix artifacts of different configurations in one stage directory.
inline void check_stage(const fs::path& dir, const PipelineConfig& cfg, const std::string& stage) {
  const auto h = recorded_hash(dir);
  if (h && *h != cfg.stage_hash(stage))
    throw ConfigError("'" + dir.string() + "' holds " + stage + " artifacts from a different configuration (hash " + *h +
                      ", current " + cfg.stage_hash(stage) + "); use a fresh workdir or the original config");
}

/// The upstream stage must exist and match the current configuration.
inline void require_stage(const fs::path& dir, const PipelineConfig& cfg, const std::string& stage) {
  const auto h = recorded_hash(dir);
  if (!h) throw DataError("missing " + stage + " artifacts: '" + (dir / "manifest.json").string() + "' not found");
  if (*h != cfg.stage_hash(stage))
    throw ConfigError("'" + dir.string() + "' was produced by a different configuration; rerun the " + stage + " stage");
}

inline void write_json(const fs::path& path, const json& j) { detail::write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- generate

struct GenerateSummary {
  std::size_t retained = 0;
  std::map<std::string, std::size_t> counts;
};

inline GenerateSummary cmd_generate(const PipelineConfig& cfg, const Workdir& wd, std::size_t jobs,
                                    std::ostream& log = std::cout) {
  fs::create_directories(wd.root);
  check_stage(wd.dataset(), cfg, "generate");
  Dataset ds = cfg.is_kepler() ? generate_kepler(cfg.space(), cfg.n_raw(), cfg.kepler_gen())
                               : generate_lb(cfg.space(), cfg.n_raw(), cfg.lb_gen(jobs));
  ds.provenance.seed = cfg.seed();
  save_dataset(ds, wd.dataset());
  json manifest = dataset_manifest(ds);
  manifest["stage"] = stage_record(cfg, "generate");
  write_json(wd.dataset() / "manifest.json", manifest);
  write_json(wd.config(), cfg.raw());

  GenerateSummary s{ds.size(), ds.provenance.counts};
  log << "generated " << cfg.pipeline() << " dataset: " << ds.size() << " retained of " << cfg.n_raw() << " raw";
  for (const auto& [name, n] : s.counts)
    if (name != "retained") log << ", " << name << " " << n;
  log << " (train " << ds.split.train.size() << ", val " << ds.split.val.size() << ")\n";
  return s;
}

inline Dataset load_stage_dataset(const PipelineConfig& cfg, const Workdir& wd) {
  require_stage(wd.dataset(), cfg, "generate");
  return load_dataset(wd.dataset());
}

// ------------------------------------------------------------------- sweep

inline sweep::SweepResult cmd_sweep(const PipelineConfig& cfg, const Workdir& wd, std::size_t jobs,
                                    std::ostream& log = std::cout) {
  const Dataset ds = load_stage_dataset(cfg, wd);
  check_stage(wd.sweep(), cfg, "sweep");
  fs::create_directories(wd.sweep());
  // Recorded up front so that a resumed run is checked against the same hash.
  write_json(wd.sweep() / "manifest.json", stage_record(cfg, "sweep"));

  const auto in = ds.input_dim(), out = ds.output_dim();
  auto sr = sweep::run_sweep(ds, [&](std::size_t k) { return cfg.network(in, k, out); }, cfg.sweep(jobs), wd.sweep());

  json j = sweep::sweep_to_json(sr);
  json best = json::object();
  for (auto k : sr.k_values)
    if (auto b = sweep::best_replicate(sr, k)) best[std::to_string(k)] = b->weight_file;
  j["best_weights"] = best;
  j["selected_weights"] = best[std::to_string(sr.selected_k)];
  write_json(wd.sweep() / "sweep.json", j);
  sweep::write_sweep_csv(sr, wd.sweep() / "sweep.csv");
  std::vector<double> kd(sr.k_values.begin(), sr.k_values.end());
  svg::errorbar_plot(kd, sr.means, sr.standard_errors, "Validation error vs bottleneck width").save(wd.sweep() / "sweep.svg");

  for (std::size_t i = 0; i < sr.k_values.size(); ++i)
    log << "k=" << sr.k_values[i] << "  mean " << nn::format_double(sr.means[i]) << "  se "
        << nn::format_double(sr.standard_errors[i]) << "  p " << nn::format_double(sr.p_values[i]) << "\n";
  log << "selected k* = " << sr.selected_k << "\n";
  return sr;
}

/// Weight file to analyse: explicit path, else the best replicate at `k`, else
/// the best replicate at the selected k.
inline fs::path resolve_weights(const Workdir& wd, const std::optional<fs::path>& weights, std::size_t k = 0) {
  if (weights) {
    if (!fs::exists(*weights)) throw DataError("weight file not found: '" + weights->string() + "'");
    return *weights;
  }
  const auto summary = wd.sweep() / "sweep.json";
  if (!fs::exists(summary)) throw DataError("no weights given and no sweep summary at '" + summary.string() + "'");
  const auto j = nn::read_json_file(summary);
  std::string file;
  if (k == 0) {
    file = j.at("selected_weights").get<std::string>();
  } else {
    const auto key = std::to_string(k);
    if (!j.at("best_weights").contains(key)) throw DataError("sweep has no trained replicate at k = " + key);
    file = j["best_weights"][key].get<std::string>();
  }
  const auto path = wd.sweep() / file;
  if (!fs::exists(path)) throw DataError("weight file not found: '" + path.string() + "'");
  return path;
}

inline void check_model_matches(const nn::MLPModel& m, const Dataset& ds, const fs::path& path) {
  if (m.spec.input_dim() != ds.input_dim() || m.spec.output_dim() != ds.output_dim())
    throw ShapeError("weights '" + path.string() + "' are " + std::to_string(m.spec.input_dim()) + " -> " +
                     std::to_string(m.spec.output_dim()) + ", dataset is " + std::to_string(ds.input_dim()) + " -> " +
                     std::to_string(ds.output_dim()));
}

// ------------------------------------------------------------- sensitivity

inline void write_sensitivity_csv(const scsa::SensitivityMatrix& sm, const fs::path& path) {
  std::ostringstream out;
  out << "parameter";
  for (Eigen::Index j = 0; j < sm.s_unc.cols(); ++j) out << ",L" << (j + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < sm.s_unc.rows(); ++i) {
    out << sm.input_names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < sm.s_unc.cols(); ++j) out << ',' << nn::format_double(sm.s_unc(i, j));
    out << '\n';
  }
  detail::write_text(path, out.str());
}

inline scsa::SensitivityMatrix cmd_sensitivity(const PipelineConfig& cfg, const Workdir& wd,
                                               const std::optional<fs::path>& weights, std::ostream& log = std::cout) {
  const Dataset ds = load_stage_dataset(cfg, wd);
  const auto path = resolve_weights(wd, weights, cfg.section("sensitivity")["k"].get<std::size_t>());
  const auto model = nn::load_model(path);
  check_model_matches(model, ds, path);
  check_stage(wd.sensitivity(), cfg, "sensitivity");
  fs::create_directories(wd.sensitivity());

  const int degree = cfg.section("sensitivity")["degree"].get<int>();
  const auto sm = scsa::sensitivity_matrix(model, ds, degree);
  write_sensitivity_csv(sm, wd.sensitivity() / "sensitivity.csv");

  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < sm.s_unc.rows(); ++i) {
    rows.emplace_back();
    for (Eigen::Index j = 0; j < sm.s_unc.cols(); ++j) rows.back().push_back(sm.s_unc(i, j));
  }
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < sm.s_unc.cols(); ++j) cols.push_back("L" + std::to_string(j + 1));
  write_json(wd.sensitivity() / "sensitivity.json", {{"s_unc", rows},
                                                     {"input_names", sm.input_names},
                                                     {"latents", cols},
                                                     {"basis_degree", sm.basis_degree},
                                                     {"sample_count", sm.sample_count},
                                                     {"weights", fs::relative(path, wd.root).generic_string()}});
  svg::heatmap(rows, sm.input_names, cols, "Uncorrelated sensitivity of latents to inputs").save(wd.sensitivity() / "sensitivity.svg");
  json manifest = stage_record(cfg, "sensitivity");
  manifest["weights"] = fs::relative(path, wd.root).generic_string();
  write_json(wd.sensitivity() / "manifest.json", manifest);

  for (std::size_t i = 0; i < sm.input_names.size(); ++i) {
    log << sm.input_names[i];
    for (Eigen::Index j = 0; j < sm.s_unc.cols(); ++j) log << "  " << nn::format_double(sm.s_unc(static_cast<Eigen::Index>(i), j));
    log << "\n";
  }
  return sm;
}

// --------------------------------------------------------------------- fit

/// Either a file of raw simulator outputs or a validation-set row of the dataset.
struct FitTarget {
  std::optional<fs::path> file;
  std::optional<std::size_t> val_index;
};

/// Raw target values from a JSON array, a JSON object with a "raw" array, or
/// comma/whitespace separated text.
inline std::vector<double> read_raw_target(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open target file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  std::vector<double> out;
  if (first != std::string::npos && (text[first] == '[' || text[first] == '{')) {
    try {
      auto j = json::parse(text);
      if (j.is_object()) j = j.at("raw");
      out = j.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw DataError("malformed target file '" + path.string() + "': " + e.what());
    }
  } else {
    std::string token;
    for (char c : text + "\n") {
      if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        if (!token.empty()) {
          std::size_t used = 0;
          double v = 0.0;
          try {
            v = std::stod(token, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != token.size()) throw DataError("target file '" + path.string() + "': cannot parse '" + token + "'");
          out.push_back(v);
          token.clear();
        }
      } else {
        token += c;
      }
    }
  }
  if (out.empty()) throw DataError("target file '" + path.string() + "' holds no values");
  return out;
}

/// Reads the transform record straight from the dataset manifest; a dataset
/// without one cannot be used to scale raw targets.
inline OutputTransform stored_transform(const fs::path& dataset_dir) {
  const auto j = nn::read_json_file(dataset_dir / "manifest.json");
  if (!j.contains("transform") || !j["transform"].is_object())
    throw DataError("dataset manifest '" + (dataset_dir / "manifest.json").string() +
                    "' has no output transform record; refusing to fit an unscaled target");
  try {
    return j["transform"].get<OutputTransform>();
  } catch (const json::exception& e) {
    throw DataError("dataset transform record is malformed: " + std::string(e.what()));
  }
}

struct FitRun {
  std::uint64_t seed = 0;
  fit::FitResult result;
};

struct FitSummary {
  std::vector<FitRun> runs;
  std::size_t best_run = 0;
  double latent_spread = 0.0;  // largest pairwise max-abs distance between run optima, unit coordinates
  double decoded_rss = 0.0;
};

inline FitSummary cmd_fit(const PipelineConfig& cfg, const Workdir& wd, const std::optional<fs::path>& weights,
                          const FitTarget& target, std::size_t jobs, std::ostream& log = std::cout) {
  if (target.file.has_value() == target.val_index.has_value())
    throw ConfigError("fit: give exactly one of a target file or a validation index");
  const auto transform = stored_transform(wd.dataset());
  const Dataset ds = load_stage_dataset(cfg, wd);
  const auto path = resolve_weights(wd, weights);
  const auto model = nn::load_model(path);
  check_model_matches(model, ds, path);

  Eigen::VectorXd y;
  json source;
  if (target.file) {
    const auto raw = read_raw_target(*target.file);
    if (raw.size() != ds.output_dim())
      throw ShapeError("target has " + std::to_string(raw.size()) + " values, network outputs " +
                       std::to_string(ds.output_dim()));
    const auto t = transform.apply(raw);
    y = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
    source = {{"file", target.file->filename().generic_string()}};
  } else {
    if (*target.val_index >= ds.split.val.size())
      throw DataError("validation index " + std::to_string(*target.val_index) + " out of range (" +
                      std::to_string(ds.split.val.size()) + " validation samples)");
    const auto row = static_cast<Eigen::Index>(ds.split.val[*target.val_index]);
    y = ds.Y.row(row).transpose();
    std::vector<double> x;
    for (Eigen::Index c = 0; c < ds.X.cols(); ++c) x.push_back(ds.X(row, c));
    source = {{"val_index", *target.val_index}, {"sample", ds.split.val[*target.val_index]}, {"unit_params", x}};
  }

  check_stage(wd.fit(), cfg, "fit");
  fs::create_directories(wd.fit());
  const auto& fsec = cfg.section("fit");
  const auto bounds = fit::latent_bounds(nn::encode(model, ds.X_train()), fsec["bound_widen"].get<double>());
  const auto restarts = fsec["restarts"].get<std::size_t>();
  const double penalty = fsec["penalty"].get<double>();

  FitSummary s;
  s.runs.resize(restarts);
  parallel_for(restarts, jobs, [&](std::size_t r) {
    auto fc = cfg.fit();
    fc.seed = derive_seed(cfg.seed(), {kFitSalt, r});
    s.runs[r] = {fc.seed, fit::fit_latent(model, y, bounds, fc, penalty)};
  });
  for (std::size_t r = 1; r < restarts; ++r)
    if (s.runs[r].result.best_objective < s.runs[s.best_run].result.best_objective) s.best_run = r;
  for (std::size_t a = 0; a < restarts; ++a)
    for (std::size_t b = a + 1; b < restarts; ++b)
      s.latent_spread = std::max(
          s.latent_spread, (s.runs[a].result.best_unit - s.runs[b].result.best_unit).cwiseAbs().maxCoeff());
  const auto& best = s.runs[s.best_run].result;
  s.decoded_rss = (nn::decode(model, best.best_latent.transpose()).row(0).transpose() - y).squaredNorm();

  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json runs = json::array();
  for (const auto& r : s.runs)
    runs.push_back({{"seed", r.seed},
                    {"best_latent", vec(r.result.best_latent)},
                    {"best_unit", vec(r.result.best_unit)},
                    {"best_objective", r.result.best_objective},
                    {"temperature", r.result.temperature},
                    {"evaluations", r.result.evaluations}});
  write_json(wd.fit() / "fit.json", {{"weights", fs::relative(path, wd.root).generic_string()},
                                     {"target", source},
                                     {"best_latent", vec(best.best_latent)},
                                     {"best_unit", vec(best.best_unit)},
                                     {"best_objective", best.best_objective},
                                     {"decoded_rss", s.decoded_rss},
                                     {"latent_spread", s.latent_spread},
                                     {"latent_bounds", {{"lo", vec(bounds.lo)}, {"hi", vec(bounds.hi)}}},
                                     {"runs", runs},
                                     {"config", fsec}});

  std::ostringstream trace;
  trace << "run,hop,accepted,flagged,objective";
  for (Eigen::Index i = 0; i < bounds.size(); ++i) trace << ",u" << (i + 1);
  trace << '\n';
  std::vector<double> dist, obj;
  std::vector<bool> accepted;
  for (std::size_t r = 0; r < s.runs.size(); ++r)
    for (std::size_t h = 0; h < s.runs[r].result.trace.size(); ++h) {
      const auto& t = s.runs[r].result.trace[h];
      trace << r << ',' << h << ',' << (t.accepted ? 1 : 0) << ',' << (t.flagged ? 1 : 0) << ','
            << nn::format_double(t.objective);
      for (Eigen::Index i = 0; i < t.local_min.size(); ++i) trace << ',' << nn::format_double(t.local_min[i]);
      trace << '\n';
      dist.push_back((t.local_min - best.best_unit).norm());
      obj.push_back(t.objective);
      accepted.push_back(t.accepted);
    }
  detail::write_text(wd.fit() / "trace.csv", trace.str());
  svg::scatter(dist, obj, accepted, "Local minima found by basin hopping", "distance from best (scaled)", "RSS", true)
      .save(wd.fit() / "fit.svg");
  json manifest = stage_record(cfg, "fit");
  manifest["weights"] = fs::relative(path, wd.root).generic_string();
  write_json(wd.fit() / "manifest.json", manifest);

  log << "best objective " << nn::format_double(best.best_objective) << " at latent";
  for (Eigen::Index i = 0; i < best.best_latent.size(); ++i) log << ' ' << nn::format_double(best.best_latent[i]);
  log << "\n";
  if (restarts > 1) log << "latent spread over " << restarts << " runs: " << nn::format_double(s.latent_spread) << "\n";
  return s;
}

// ------------------------------------------------------------------ report

struct ReportSummary {
  std::vector<std::string> written;
  std::vector<std::string> missing;
  bool empty = false;
};

namespace detail {

inline std::vector<std::vector<double>> read_numeric_csv(const fs::path& path, std::vector<std::string>* header = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (header) *header = split(line, ',');
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Renders every plot whose inputs exist; lists what could not be produced.
inline ReportSummary cmd_report(const Workdir& wd, std::ostream& log = std::cout) {
  ReportSummary rs;
  const bool any = fs::exists(wd.dataset() / "manifest.json") || fs::exists(wd.sweep() / "sweep.json") ||
                   fs::exists(wd.sensitivity() / "sensitivity.json") || fs::exists(wd.fit() / "fit.json");
  if (!any) {
    rs.empty = true;
    log << "empty report: no pipeline artifacts found in '" << wd.root.string() << "'\n";
    return rs;
  }
  fs::create_directories(wd.report());
  const auto sweep_json = wd.sweep() / "sweep.json";
  std::optional<json> sj;
  if (fs::exists(sweep_json)) sj = nn::read_json_file(sweep_json);

  // Error vs k, plus a CSV summary.
  if (sj) {
    std::vector<double> k, mean, se;
    std::ostringstream csv;
    csv << "k,replicates,mean,se,p_value,selected\n";
    auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
    for (const auto& e : (*sj)["per_k"]) {
      k.push_back(e["k"].get<double>());
      mean.push_back(num(e["mean"]));
      se.push_back(num(e["se"]));
      csv << e["k"].get<std::size_t>() << ',' << e["replicates"].get<std::size_t>() << ','
          << nn::format_double(mean.back()) << ',' << nn::format_double(se.back()) << ','
          << nn::format_double(num(e["p_value"])) << ','
          << (e["k"].get<std::size_t>() == (*sj)["selected_k"].get<std::size_t>() ? 1 : 0) << '\n';
    }
    svg::errorbar_plot(k, mean, se, "Validation error vs bottleneck width").save(wd.report() / "error_vs_k.svg");
    detail::write_text(wd.report() / "sweep_summary.csv", csv.str());
    rs.written.insert(rs.written.end(), {"error_vs_k.svg", "sweep_summary.csv"});
  } else {
    rs.missing.push_back("error_vs_k.svg (needs sweep/sweep.json)");
  }

  // Sensitivity heatmap.
  const auto sens = wd.sensitivity() / "sensitivity.json";
  if (fs::exists(sens)) {
    const auto j = nn::read_json_file(sens);
    svg::heatmap(j["s_unc"].get<std::vector<std::vector<double>>>(), j["input_names"].get<std::vector<std::string>>(),
                 j["latents"].get<std::vector<std::string>>(), "Uncorrelated sensitivity of latents to inputs")
        .save(wd.report() / "sensitivity_heatmap.svg");
    fs::copy_file(wd.sensitivity() / "sensitivity.csv", wd.report() / "sensitivity.csv",
                  fs::copy_options::overwrite_existing);
    rs.written.insert(rs.written.end(), {"sensitivity_heatmap.svg", "sensitivity.csv"});
  } else {
    rs.missing.push_back("sensitivity_heatmap.svg (needs sensitivity/sensitivity.json)");
  }

  // Latent histograms of the selected model over the training inputs.
  const bool have_weights = sj && sj->contains("selected_weights") && fs::exists(wd.sweep() / (*sj)["selected_weights"].get<std::string>());
  if (have_weights && fs::exists(wd.dataset() / "manifest.json")) {
    const auto ds = load_dataset(wd.dataset());
    const auto model = nn::load_model(wd.sweep() / (*sj)["selected_weights"].get<std::string>());
    check_model_matches(model, ds, wd.sweep() / (*sj)["selected_weights"].get<std::string>());
    const Eigen::MatrixXd L = nn::encode(model, ds.X_train());
    std::vector<std::vector<double>> cols;
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < L.cols(); ++j) {
      cols.emplace_back(L.col(j).data(), L.col(j).data() + L.rows());
      names.push_back("L" + std::to_string(j + 1));
    }
    svg::histograms(cols, names, "Latent values over the training inputs").save(wd.report() / "latent_histograms.svg");
    rs.written.push_back("latent_histograms.svg");
  } else {
    rs.missing.push_back("latent_histograms.svg (needs dataset and selected sweep weights)");
  }

  // Validation curves of the best replicate at each k.
  if (sj && sj->contains("best_weights") && !(*sj)["best_weights"].empty()) {
    std::vector<svg::Series> series;
    for (const auto& [k, file] : (*sj)["best_weights"].items()) {
      auto stem = file.get<std::string>();
      stem = stem.substr(0, stem.find(".weights.json"));
      const auto csv = wd.sweep() / (stem + ".train.csv");
      if (!fs::exists(csv)) continue;
      svg::Series s{"k=" + k, {}, {}};
      for (const auto& row : detail::read_numeric_csv(csv)) s.x.push_back(row.at(0)), s.y.push_back(row.at(2));
      series.push_back(std::move(s));
    }
    std::sort(series.begin(), series.end(), [](const svg::Series& a, const svg::Series& b) {
      return std::stoul(a.name.substr(2)) < std::stoul(b.name.substr(2));
    });
    svg::line_plot(series, "Validation MSE during training (best replicate per k)", "epoch", "val MSE", true)
        .save(wd.report() / "training_curves.svg");
    rs.written.push_back("training_curves.svg");
  } else {
    rs.missing.push_back("training_curves.svg (needs sweep/sweep.json and training curves)");
  }

  write_json(wd.report() / "report.json", {{"written", rs.written}, {"missing", rs.missing}});
  for (const auto& w : rs.written) log << "wrote report/" << w << "\n";
  for (const auto& m : rs.missing) log << "missing: " << m << "\n";
  return rs;
}

}  // namespace fixfit::pipeline
