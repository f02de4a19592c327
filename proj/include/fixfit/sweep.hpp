#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixfit/dataset.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/mlp.hpp"
#include "fixfit/parallel.hpp"
#include "fixfit/rng.hpp"

namespace fixfit::sweep {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double standard_error(const std::vector<double>& v) {
  return v.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(variance(v) / static_cast<double>(v.size()));
}

/// Two-sided p-value of Welch's unequal-variance t-test.
inline double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("welch_t: each sample needs at least two values");
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  const double diff = std::abs(mean(a) - mean(b));
  const double se2 = va + vb;
  if (se2 == 0.0) return diff == 0.0 ? 1.0 : 0.0;
  const double t = diff / std::sqrt(se2);
  const double df = se2 * se2 / (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, t)));
}

struct ReplicateResult {
  std::size_t k = 0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = 0;
  std::string weight_file;  // relative to the sweep directory, empty in memory-only runs
  std::string error;
};

struct SweepResult {
  std::vector<std::size_t> k_values;
  std::vector<std::vector<double>> errors;  // successful replicate best validation MSEs per k
  std::vector<double> means;
  std::vector<double> standard_errors;
  std::vector<double> p_values;  // against the best-mean k
  std::size_t best_mean_k = 0;
  std::size_t selected_k = 0;
  double alpha = 0.05;
  std::vector<ReplicateResult> replicates;
};

/// Smallest k whose replicate errors are not significantly different (p >= alpha)
/// from those at the k with minimum mean error. Fills means, SEs and p-values.
inline std::size_t select_k(SweepResult& sr, double alpha = 0.05) {
  if (sr.k_values.empty() || sr.errors.size() != sr.k_values.size()) throw DataError("select_k: empty sweep");
  sr.alpha = alpha;
  sr.means.assign(sr.k_values.size(), std::numeric_limits<double>::quiet_NaN());
  sr.standard_errors.assign(sr.k_values.size(), std::numeric_limits<double>::quiet_NaN());
  sr.p_values.assign(sr.k_values.size(), std::numeric_limits<double>::quiet_NaN());
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < sr.k_values.size(); ++i) {
    if (sr.errors[i].empty()) continue;
    sr.means[i] = mean(sr.errors[i]);
    sr.standard_errors[i] = standard_error(sr.errors[i]);
    if (!best || sr.means[i] < sr.means[*best]) best = i;
  }
  if (!best) throw DataError("select_k: no k has a successful replicate");
  sr.best_mean_k = sr.k_values[*best];
  for (std::size_t i = 0; i < sr.k_values.size(); ++i) {
    if (i == *best) sr.p_values[i] = 1.0;
    else if (sr.errors[i].size() >= 2 && sr.errors[*best].size() >= 2) sr.p_values[i] = welch_t(sr.errors[i], sr.errors[*best]);
  }
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < sr.k_values.size(); ++i)
    if (sr.p_values[i] >= alpha && (!chosen || sr.k_values[i] < sr.k_values[*chosen])) chosen = i;
  sr.selected_k = sr.k_values[*chosen];
  return sr.selected_k;
}

struct SweepConfig {
  std::vector<std::size_t> k_values{1, 2, 3, 4, 5};
  std::size_t replicates = 10;
  nn::TrainConfig train{};
  std::uint64_t master_seed = 0;
  double alpha = 0.05;
  std::size_t jobs = 1;
};

inline std::string replicate_stem(std::size_t k, std::size_t rep) {
  return "k" + std::to_string(k) + "_r" + std::to_string(rep);
}

/// Trains replicates x |k_values| networks with seeds derived from the master
/// seed. With an output directory, every replicate writes its best weights and
/// training curve; replicates whose weight file already exists with a matching
/// seed are loaded instead of retrained.
inline SweepResult run_sweep(const Eigen::MatrixXd& X_train, const Eigen::MatrixXd& Y_train, const Eigen::MatrixXd& X_val,
                             const Eigen::MatrixXd& Y_val, const std::function<nn::MLPSpec(std::size_t)>& spec_for_k,
                             const SweepConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (cfg.replicates < 1) throw ConfigError("run_sweep: replicates must be >= 1");
  if (cfg.k_values.empty()) throw ConfigError("run_sweep: empty k list");
  const auto outputs = static_cast<std::size_t>(Y_train.cols());
  for (auto k : cfg.k_values)
    if (k < 1 || k >= outputs) throw ConfigError("run_sweep: k = " + std::to_string(k) + " must be in [1, O)");
  if (out_dir) std::filesystem::create_directories(*out_dir);

  const std::size_t total = cfg.k_values.size() * cfg.replicates;
  std::vector<ReplicateResult> results(total);
  parallel_for(total, cfg.jobs, [&](std::size_t idx) {
    ReplicateResult& r = results[idx];
    r.k = cfg.k_values[idx / cfg.replicates];
    r.replicate = idx % cfg.replicates;
    r.seed = derive_seed(cfg.master_seed, {r.k, r.replicate});
    const std::string stem = replicate_stem(r.k, r.replicate);
    if (out_dir) {
      r.weight_file = stem + ".weights.json";
      const auto path = *out_dir / r.weight_file;
      if (std::filesystem::exists(path)) {
        const auto meta = nn::read_json_file(path).at("meta");
        if (meta.value("seed", std::uint64_t{0}) == r.seed) {
          r.ok = true;
          r.val_mse = meta.at("val_mse").get<double>();
          r.best_epoch = meta.at("best_epoch").get<int>();
          return;
        }
      }
    }
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(r.seed, {1});
    try {
      const auto rec = nn::train(nn::init_glorot(spec_for_k(r.k), derive_seed(r.seed, {0})), X_train, Y_train, X_val,
                                 Y_val, tc);
      r.ok = true;
      r.val_mse = rec.best_val_mse;
      r.best_epoch = rec.best_epoch;
      if (out_dir) {
        nn::write_train_csv(rec, *out_dir / (stem + ".train.csv"));
        nn::save_model(rec.best_model, *out_dir / r.weight_file,
                       {{"k", r.k}, {"replicate", r.replicate}, {"seed", r.seed}, {"val_mse", r.val_mse},
                        {"best_epoch", r.best_epoch}});
      }
    } catch (const TrainingDivergedError& e) {
      r.ok = false;
      r.error = e.what();
      r.weight_file.clear();
    }
  });

  SweepResult sr;
  sr.k_values = cfg.k_values;
  sr.errors.resize(cfg.k_values.size());
  for (const auto& r : results)
    if (r.ok) sr.errors[static_cast<std::size_t>(&r - results.data()) / cfg.replicates].push_back(r.val_mse);
  for (std::size_t i = 0; i < sr.k_values.size(); ++i)
    if (sr.errors[i].empty())
      throw NumericalError("run_sweep: every replicate failed at k = " + std::to_string(sr.k_values[i]));
  sr.replicates = std::move(results);
  select_k(sr, cfg.alpha);
  return sr;
}

inline SweepResult run_sweep(const Dataset& ds, const std::function<nn::MLPSpec(std::size_t)>& spec_for_k,
                             const SweepConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  return run_sweep(ds.X_train(), ds.Y_train(), ds.X_val(), ds.Y_val(), spec_for_k, cfg, out_dir);
}

/// Replicate with the lowest validation error at k, if any succeeded.
inline std::optional<ReplicateResult> best_replicate(const SweepResult& sr, std::size_t k) {
  std::optional<ReplicateResult> best;
  for (const auto& r : sr.replicates)
    if (r.ok && r.k == k && (!best || r.val_mse < best->val_mse)) best = r;
  return best;
}

namespace detail {
inline nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json sweep_to_json(const SweepResult& sr) {
  nlohmann::json per_k = nlohmann::json::array();
  for (std::size_t i = 0; i < sr.k_values.size(); ++i)
    per_k.push_back({{"k", sr.k_values[i]},
                     {"replicates", sr.errors[i].size()},
                     {"mean", detail::nullable(sr.means[i])},
                     {"se", detail::nullable(sr.standard_errors[i])},
                     {"p_value", detail::nullable(sr.p_values[i])}});
  std::size_t failed = 0;
  for (const auto& r : sr.replicates) failed += r.ok ? 0 : 1;
  return {{"per_k", per_k},
          {"best_mean_k", sr.best_mean_k},
          {"selected_k", sr.selected_k},
          {"alpha", sr.alpha},
          {"failed_replicates", failed}};
}

inline void write_sweep_csv(const SweepResult& sr, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "k,replicate,val_mse,weight_file\n";
  for (const auto& r : sr.replicates)
    out << r.k << ',' << r.replicate << ',' << (r.ok ? nn::format_double(r.val_mse) : "failed") << ','
        << r.weight_file << '\n';
}

}  // namespace fixfit::sweep
