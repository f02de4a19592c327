#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixfit/bold.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/kepler.hpp"
#include "fixfit/larter_breakspear.hpp"
#include "fixfit/parallel.hpp"
#include "fixfit/param_space.hpp"
#include "fixfit/rng.hpp"
#include "fixfit/sobol.hpp"

namespace fixfit {

inline constexpr int kDatasetFormatVersion = 1;

/// Output transform recorded with a dataset so that new targets can be mapped
/// into the same space the network was trained on.
struct OutputTransform {
  bool log = false;
  bool minmax = false;
  double min = 0.0;
  double max = 1.0;

  double apply(double raw) const {
    double v = raw;
    if (log) {
      if (!(v > 0.0)) throw DataError("output transform: log of a non-positive value");
      v = std::log(v);
    }
    if (minmax) v = (v - min) / (max - min);
    return v;
  }

  std::vector<double> apply(const std::vector<double>& raw) const {
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = apply(raw[i]);
    return out;
  }
};

inline void to_json(nlohmann::json& j, const OutputTransform& t) {
  j = {{"log", t.log}, {"minmax", t.minmax}, {"min", t.min}, {"max", t.max}};
}

inline void from_json(const nlohmann::json& j, OutputTransform& t) {
  t.log = j.at("log").get<bool>();
  t.minmax = j.at("minmax").get<bool>();
  t.min = j.at("min").get<double>();
  t.max = j.at("max").get<double>();
}

struct Provenance {
  std::string pipeline;
  std::uint64_t seed = 0;
  std::size_t skip = 1;
  std::size_t n_raw = 0;
  std::map<std::string, std::size_t> counts;
};

inline void to_json(nlohmann::json& j, const Provenance& p) {
  j = {{"pipeline", p.pipeline}, {"seed", p.seed}, {"skip", p.skip}, {"n_raw", p.n_raw}, {"counts", p.counts}};
}

inline void from_json(const nlohmann::json& j, Provenance& p) {
  p.pipeline = j.at("pipeline").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.skip = j.at("skip").get<std::size_t>();
  p.n_raw = j.at("n_raw").get<std::size_t>();
  p.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Every 10th retained sample (1-based position divisible by 10) is held out.
inline Split every_tenth_split(std::size_t n) {
  Split s;
  for (std::size_t i = 0; i < n; ++i) ((i + 1) % 10 == 0 ? s.val : s.train).push_back(i);
  return s;
}

struct Dataset {
  ParamSpace space;
  Eigen::MatrixXd X;  // samples x inputs, unit cube
  Eigen::MatrixXd Y;  // samples x outputs
  Split split;
  OutputTransform transform;
  Provenance provenance;

  std::size_t size() const noexcept { return static_cast<std::size_t>(X.rows()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(X.cols()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(Y.cols()); }

  Eigen::MatrixXd rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
    return out;
  }
  Eigen::MatrixXd X_train() const { return rows(X, split.train); }
  Eigen::MatrixXd Y_train() const { return rows(Y, split.train); }
  Eigen::MatrixXd X_val() const { return rows(X, split.val); }
  Eigen::MatrixXd Y_val() const { return rows(Y, split.val); }
};

// ---------------------------------------------------------------- Kepler

inline ParamSpace kepler_space(double lower = 0.1, double upper = 1.0) {
  return ParamSpace({{"m1", lower, upper, false}, {"m2", lower, upper, false},
                     {"r0", lower, upper, false}, {"omega0", lower, upper, false}});
}

struct KeplerGenConfig {
  double G = 0.5;
  std::size_t n_theta = 100;
  double e_min = 0.7;
  double e_max = 0.95;
  std::size_t skip = 1;
};

inline kepler::KeplerParams kepler_params_from_native(const std::vector<double>& native, double G) {
  if (native.size() != 4) throw ShapeError("kepler: expected 4 native parameters");
  return {native[0], native[1], native[2], native[3], G};
}

/// Eccentricity band filter; samples outside [e_min, e_max] are rejected.
inline bool kepler_accepts(double e, const KeplerGenConfig& cfg) { return !(e > cfg.e_max || e < cfg.e_min); }

/// Log radii of the orbit for native parameters (untransformed beyond the log).
inline std::vector<double> kepler_log_radii(const std::vector<double>& native, const KeplerGenConfig& cfg) {
  const auto orbit = kepler::kepler_orbit(kepler_params_from_native(native, cfg.G), cfg.n_theta);
  std::vector<double> out(orbit.radii.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(orbit.radii[i]);
  return out;
}

inline Dataset generate_kepler(const ParamSpace& space, std::size_t n_raw, const KeplerGenConfig& cfg = {}) {
  if (space.dimension() != 4) throw ConfigError("generate_kepler: space must hold the four Kepler parameters");
  if (n_raw == 0) throw ConfigError("generate_kepler: n_raw must be at least 1");
  const auto points = sobol_points(4, n_raw, cfg.skip);

  std::vector<std::vector<double>> kept_unit;
  std::vector<std::vector<double>> kept_log;
  std::size_t rejected = 0;
  for (const auto& u : points) {
    const auto native = space.to_native(u);
    const auto shape = kepler::kepler_shape(kepler_params_from_native(native, cfg.G));
    if (!kepler_accepts(shape.e, cfg)) {
      ++rejected;
      continue;
    }
    kept_unit.push_back(u);
    kept_log.push_back(kepler_log_radii(native, cfg));
  }
  if (kept_unit.empty()) throw FilterExhaustedError("generate_kepler: no sample passed the eccentricity filter");

  Dataset ds;
  ds.space = space;
  const auto n = static_cast<Eigen::Index>(kept_unit.size());
  ds.X.resize(n, 4);
  ds.Y.resize(n, static_cast<Eigen::Index>(cfg.n_theta));
  double lo = kept_log[0][0], hi = kept_log[0][0];
  for (const auto& row : kept_log)
    for (double v : row) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) throw DataError("generate_kepler: outputs have zero range");
  ds.transform = {true, true, lo, hi};
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) ds.X(r, c) = kept_unit[r][c];
    for (Eigen::Index c = 0; c < ds.Y.cols(); ++c) ds.Y(r, c) = (kept_log[r][c] - lo) / (hi - lo);
  }
  ds.split = every_tenth_split(kept_unit.size());
  ds.provenance.pipeline = "kepler";
  ds.provenance.skip = cfg.skip;
  ds.provenance.n_raw = n_raw;
  ds.provenance.counts = {{"retained", kept_unit.size()}, {"rejected_eccentricity", rejected}};
  return ds;
}

// ---------------------------------------------------------- Larter-Breakspear

inline ParamSpace lb_space() {
  std::vector<ParamSpec> specs;
  for (const auto& r : lb::kFreeRanges) specs.push_back({std::string(r.name), r.lower, r.upper, false});
  return ParamSpace(std::move(specs));
}

struct LBGenConfig {
  lb::LBParams base = lb::default_params();
  lb::Connectivity conn = lb::synthetic_connectivity(8);
  lb::SimConfig sim{};
  lb::BoldConfig bold{};
  double osc_threshold = 0.05;
  double max_mean_fc = 0.3;
  std::uint64_t seed = 0;
  std::size_t skip = 1;
  std::size_t jobs = 1;
};

enum class LBOutcome { retained, diverged, non_oscillatory, degenerate_fc, high_mean_fc };

struct LBSample {
  LBOutcome outcome = LBOutcome::retained;
  std::vector<double> flat;
};

inline lb::LBParams lb_params_from_native(const ParamSpace& space, const std::vector<double>& native,
                                          const lb::LBParams& base) {
  lb::LBParams p = base;
  const auto names = space.free_names();
  if (names.size() != native.size()) throw ShapeError("lb: native vector does not match the parameter space");
  for (std::size_t i = 0; i < names.size(); ++i) p[names[i]] = native[i];
  return p;
}

/// Applies both behavioural filters to a simulated trajectory.
inline LBSample lb_classify(const lb::RegionTimeSeries& ts, const LBGenConfig& cfg) {
  LBSample s;
  if (!lb::is_oscillatory(ts.after(cfg.bold.transient_discard * 1000.0), cfg.osc_threshold)) {
    s.outcome = LBOutcome::non_oscillatory;
    return s;
  }
  try {
    s.flat = lb::bold_fc(ts, cfg.bold).flat;
  } catch (const NumericalError&) {
    s.outcome = LBOutcome::degenerate_fc;
    return s;
  }
  if (lb::mean_fc(s.flat) > cfg.max_mean_fc) s.outcome = LBOutcome::high_mean_fc;
  return s;
}

/// Simulates one parameter set and classifies the result.
inline LBSample lb_evaluate(const lb::LBParams& params, const LBGenConfig& cfg, std::uint64_t sim_seed) {
  lb::RegionTimeSeries ts;
  try {
    ts = lb::lb_simulate(params, cfg.conn, cfg.sim, sim_seed);
  } catch (const SimulationDivergedError&) {
    return {LBOutcome::diverged, {}};
  }
  return lb_classify(ts, cfg);
}

inline Dataset generate_lb(const ParamSpace& space, std::size_t n_raw, const LBGenConfig& cfg) {
  if (space.dimension() == 0) throw ConfigError("generate_lb: empty parameter space");
  if (n_raw == 0) throw ConfigError("generate_lb: n_raw must be at least 1");
  for (const auto& name : space.free_names())
    if (!lb::field_index(name)) throw ConfigError("generate_lb: unknown parameter '" + name + "'");
  cfg.conn.validate();
  cfg.bold.validate();
  if (cfg.sim.duration_ms / 1000.0 <= cfg.bold.transient_discard)
    throw ConfigError("generate_lb: simulation must be longer than the transient");

  const auto points = sobol_points(space.dimension(), n_raw, cfg.skip);
  std::vector<LBSample> samples(points.size());
  parallel_for(points.size(), cfg.jobs, [&](std::size_t i) {
    const auto params = lb_params_from_native(space, space.to_native(points[i]), cfg.base);
    samples[i] = lb_evaluate(params, cfg, derive_seed(cfg.seed, {i + cfg.skip}));
  });

  std::map<std::string, std::size_t> counts{{"retained", 0}, {"diverged", 0}, {"non_oscillatory", 0},
                                            {"degenerate_fc", 0}, {"high_mean_fc", 0}};
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    switch (samples[i].outcome) {
      case LBOutcome::retained: ++counts["retained"]; kept.push_back(i); break;
      case LBOutcome::diverged: ++counts["diverged"]; break;
      case LBOutcome::non_oscillatory: ++counts["non_oscillatory"]; break;
      case LBOutcome::degenerate_fc: ++counts["degenerate_fc"]; break;
      case LBOutcome::high_mean_fc: ++counts["high_mean_fc"]; break;
    }
  }
  if (kept.empty()) throw FilterExhaustedError("generate_lb: no sample passed the behavioural filters");

  Dataset ds;
  ds.space = space;
  const auto n = static_cast<Eigen::Index>(kept.size());
  const auto in = static_cast<Eigen::Index>(space.dimension());
  const auto out = static_cast<Eigen::Index>(samples[kept[0]].flat.size());
  ds.X.resize(n, in);
  ds.Y.resize(n, out);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& u = points[kept[static_cast<std::size_t>(r)]];
    for (Eigen::Index c = 0; c < in; ++c) ds.X(r, c) = u[static_cast<std::size_t>(c)];
    const auto& f = samples[kept[static_cast<std::size_t>(r)]].flat;
    for (Eigen::Index c = 0; c < out; ++c) ds.Y(r, c) = f[static_cast<std::size_t>(c)];
  }
  ds.split = every_tenth_split(kept.size());
  ds.transform = {};
  ds.provenance.pipeline = "larter_breakspear";
  ds.provenance.seed = cfg.seed;
  ds.provenance.skip = cfg.skip;
  ds.provenance.n_raw = n_raw;
  ds.provenance.counts = counts;
  return ds;
}

// ----------------------------------------------------------- persistence

namespace detail {

inline void write_f64(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(m.size()) * 8);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, k += 8) {
      auto bits = std::bit_cast<std::uint64_t>(m(r, c));
      for (int b = 0; b < 8; ++b) buf[k + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline Eigen::MatrixXd read_f64(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() != rows * cols * 8)
    throw ShapeError("'" + path.string() + "' holds " + std::to_string(buf.size()) + " bytes, manifest implies " +
                     std::to_string(rows * cols * 8));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, k += 8) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[k + static_cast<std::size_t>(b)]) << (8 * b);
      m(r, c) = std::bit_cast<double>(bits);
    }
  return m;
}

}  // namespace detail

inline nlohmann::json dataset_manifest(const Dataset& ds) {
  return {{"format_version", kDatasetFormatVersion},
          {"n_samples", ds.size()},
          {"input_dim", ds.input_dim()},
          {"output_dim", ds.output_dim()},
          {"params", ds.space.specs()},
          {"transform", ds.transform},
          {"split", {{"train", ds.split.train}, {"val", ds.split.val}}},
          {"provenance", ds.provenance}};
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create dataset directory '" + dir.string() + "'");
  detail::write_f64(dir / "X.f64", ds.X);
  detail::write_f64(dir / "Y.f64", ds.Y);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
  out << dataset_manifest(ds).dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in '" + dir.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset manifest: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    if (j.at("format_version").get<int>() != kDatasetFormatVersion) throw DataError("unsupported dataset format version");
    const auto n = j.at("n_samples").get<std::size_t>();
    const auto in_dim = j.at("input_dim").get<std::size_t>();
    const auto out_dim = j.at("output_dim").get<std::size_t>();
    ds.space = ParamSpace(j.at("params").get<std::vector<ParamSpec>>());
    if (ds.space.dimension() != in_dim) throw ShapeError("manifest input_dim disagrees with its parameter list");
    ds.transform = j.at("transform").get<OutputTransform>();
    ds.split.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    ds.split.val = j.at("split").at("val").get<std::vector<std::size_t>>();
    ds.provenance = j.at("provenance").get<Provenance>();
    ds.X = detail::read_f64(dir / "X.f64", n, in_dim);
    ds.Y = detail::read_f64(dir / "Y.f64", n, out_dim);
    std::vector<bool> seen(n, false);
    for (const auto* part : {&ds.split.train, &ds.split.val})
      for (std::size_t i : *part) {
        if (i >= n || seen[i]) throw ShapeError("manifest split indices are out of range or repeated");
        seen[i] = true;
      }
    if (ds.split.train.size() + ds.split.val.size() != n) throw ShapeError("manifest split does not cover every sample");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace fixfit
