#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "fixfit/errors.hpp"
#include "fixfit/larter_breakspear.hpp"

namespace fixfit::lb {

/// Four-state Balloon-Windkessel hemodynamics plus the sampling and filtering
/// used to turn voltages into functional connectivity.
struct BoldConfig {
  double kappa = 0.65;   // signal decay (1/s)
  double gamma = 0.41;   // flow autoregulation (1/s)
  double tau = 0.98;     // transit time (s)
  double alpha = 0.32;   // Grubb's exponent
  double rho = 0.34;     // resting oxygen extraction fraction
  double V0 = 0.02;      // resting blood volume fraction
  double efficacy = 1.0; // neural input gain
  double s0 = 0.0, f0 = 1.0, v0 = 1.0, q0 = 1.0;

  double TR = 0.8;  // s
  double f_lo = 0.01;
  double f_hi = 0.1;
  double transient_discard = 20.0;  // s

  void validate() const {
    if (!(TR > 0.0)) throw ConfigError("bold: TR must be positive");
    if (!(f_lo > 0.0 && f_lo < f_hi)) throw ConfigError("bold: band must satisfy 0 < f_lo < f_hi");
    if (!(tau > 0.0 && alpha > 0.0 && rho > 0.0 && rho < 1.0)) throw ConfigError("bold: invalid hemodynamic constants");
    if (transient_discard < 0.0) throw ConfigError("bold: transient_discard must be non-negative");
  }
};

struct FCMatrix {
  Eigen::MatrixXd c;
};

struct FCResult {
  FCMatrix fc;
  std::vector<double> flat;
};

/// Hemodynamic response of one region. `input` is sampled every `dt_s`
/// seconds; the returned BOLD series has the same length.
inline std::vector<double> balloon_windkessel(const std::vector<double>& input, double dt_s, const BoldConfig& cfg) {
  const double k1 = 7.0 * cfg.rho, k2 = 2.0, k3 = 2.0 * cfg.rho - 0.2;
  const double inv_alpha = 1.0 / cfg.alpha;
  auto rhs = [&](const std::array<double, 4>& x, double z) {
    const auto [s, f, v, q] = x;
    if (!(f > 0.0) || !(v > 0.0)) throw NumericalError("bold: hemodynamic flow or volume left the positive range");
    const double vout = std::pow(v, inv_alpha);
    const double extraction = (1.0 - std::pow(1.0 - cfg.rho, 1.0 / f)) / cfg.rho;
    return std::array<double, 4>{cfg.efficacy * z - cfg.kappa * s - cfg.gamma * (f - 1.0), s,
                                 (f - vout) / cfg.tau, (f * extraction - vout * q / v) / cfg.tau};
  };
  auto bold = [&](const std::array<double, 4>& x) {
    const double v = x[2], q = x[3];
    return cfg.V0 * (k1 * (1.0 - q) + k2 * (1.0 - q / v) + k3 * (1.0 - v));
  };

  std::vector<double> out(input.size());
  std::array<double, 4> x{cfg.s0, cfg.f0, cfg.v0, cfg.q0};
  if (input.empty()) return out;
  out[0] = bold(x);
  auto axpy = [](const std::array<double, 4>& a, double h, const std::array<double, 4>& k) {
    return std::array<double, 4>{a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3]};
  };
  for (std::size_t t = 1; t < input.size(); ++t) {
    const double z0 = input[t - 1], z1 = input[t], zm = 0.5 * (z0 + z1);
    const auto a = rhs(x, z0);
    const auto b = rhs(axpy(x, 0.5 * dt_s, a), zm);
    const auto c = rhs(axpy(x, 0.5 * dt_s, b), zm);
    const auto d = rhs(axpy(x, dt_s, c), z1);
    for (int i = 0; i < 4; ++i) x[i] += dt_s / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    out[t] = bold(x);
  }
  return out;
}

/// Zero-phase ideal band-pass: removes the mean, keeps only the discrete
/// Fourier components with f_lo <= f <= f_hi, and transforms back.
inline std::vector<double> bandpass(const std::vector<double>& x, double dt_s, double f_lo, double f_hi) {
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  if (n < 2) return y;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  const double df = 1.0 / (static_cast<double>(n) * dt_s);
  const double w = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t k = 1; 2 * k <= n; ++k) {
    const double f = static_cast<double>(k) * df;
    if (f < f_lo || f > f_hi) continue;
    double a = 0.0, b = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = w * static_cast<double>((k * t) % n);
      a += (x[t] - mean) * std::cos(ph);
      b += (x[t] - mean) * std::sin(ph);
    }
    const double scale = (2 * k == n) ? 1.0 / static_cast<double>(n) : 2.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = w * static_cast<double>((k * t) % n);
      y[t] += scale * (a * std::cos(ph) + b * std::sin(ph));
    }
  }
  return y;
}

/// Pearson correlation matrix of row signals. A region whose signal has zero
/// variance makes the matrix undefined and is reported by index.
inline FCMatrix pearson_fc(const Eigen::MatrixXd& signals) {
  const Eigen::Index n = signals.rows();
  const Eigen::Index t = signals.cols();
  if (t < 2) throw ShapeError("pearson_fc: need at least two samples per region");
  Eigen::MatrixXd centered = signals.colwise() - signals.rowwise().mean();
  Eigen::VectorXd norms = centered.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i) {
    // A signal reduced to rounding noise has no defined correlation.
    if (!(norms[i] / std::sqrt(static_cast<double>(t)) > 1e-13))
      throw UndefinedCorrelationError(static_cast<std::size_t>(i),
                                      "pearson_fc: region " + std::to_string(i) + " has zero variance");
  }
  for (Eigen::Index i = 0; i < n; ++i) centered.row(i) /= norms[i];
  FCMatrix fc{centered * centered.transpose()};
  for (Eigen::Index i = 0; i < n; ++i) {
    fc.c(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::clamp(0.5 * (fc.c(i, j) + fc.c(j, i)), -1.0, 1.0);
      fc.c(i, j) = fc.c(j, i) = v;
    }
  }
  return fc;
}

/// Strict upper triangle, row-major: length N(N-1)/2.
inline std::vector<double> upper_triangle(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.rows() * (m.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) flat.push_back(m(i, j));
  return flat;
}

/// Band-passed BOLD signals (rows = regions) sampled at TR after the transient.
inline Eigen::MatrixXd bold_signals(const RegionTimeSeries& ts, const BoldConfig& cfg) {
  cfg.validate();
  if (ts.samples() < 2) throw ShapeError("bold: time series too short");
  const double dt_s = (ts.t[1] - ts.t[0]) / 1000.0;
  const double end_s = ts.t.back() / 1000.0;
  if (end_s <= cfg.transient_discard) throw ShapeError("bold: time series not longer than the transient");

  std::vector<std::size_t> picks;
  for (std::size_t j = 0;; ++j) {
    const double ts_s = cfg.transient_discard + static_cast<double>(j) * cfg.TR;
    if (ts_s > end_s + 1e-9) break;
    const auto idx = static_cast<std::size_t>(std::llround((ts_s * 1000.0 - ts.t[0]) / (dt_s * 1000.0)));
    if (idx >= ts.samples()) break;
    picks.push_back(idx);
  }
  if (picks.size() < 2) throw ShapeError("bold: fewer than two retained BOLD samples");

  const Eigen::Index n = ts.V.rows();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(picks.size()));
  std::vector<double> input(ts.samples());
  for (Eigen::Index i = 0; i < n; ++i) {
    // The hemodynamic input is the voltage fluctuation about its run mean.
    const double mean = ts.V.row(i).mean();
    for (std::size_t k = 0; k < input.size(); ++k) input[k] = ts.V(i, static_cast<Eigen::Index>(k)) - mean;
    const auto bold = balloon_windkessel(input, dt_s, cfg);
    std::vector<double> sampled(picks.size());
    for (std::size_t k = 0; k < picks.size(); ++k) sampled[k] = bold[picks[k]];
    const auto filtered = bandpass(sampled, cfg.TR, cfg.f_lo, cfg.f_hi);
    for (std::size_t k = 0; k < filtered.size(); ++k) out(i, static_cast<Eigen::Index>(k)) = filtered[k];
  }
  return out;
}

inline FCResult bold_fc(const RegionTimeSeries& ts, const BoldConfig& cfg) {
  FCResult r{pearson_fc(bold_signals(ts, cfg)), {}};
  r.flat = upper_triangle(r.fc.c);
  return r;
}

inline double mean_fc(const std::vector<double>& flat) {
  if (flat.empty()) return 0.0;
  double s = 0.0;
  for (double v : flat) s += v;
  return s / static_cast<double>(flat.size());
}

}  // namespace fixfit::lb
