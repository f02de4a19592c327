#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "fixfit/errors.hpp"

namespace fixfit::kepler {

/// Two-body parameters. Units are chosen so that all four sampled values share
/// a magnitude: kg, m, day^-1 and m^3 kg^-1 day^-2.
struct KeplerParams {
  double m1 = 0.5;
  double m2 = 0.5;
  double r0 = 0.5;
  double omega0 = 1.0;
  double G = 0.5;

  bool valid() const noexcept {
    return m1 > 0 && m2 > 0 && r0 > 0 && omega0 > 0 && G > 0 && std::isfinite(m1) &&
           std::isfinite(m2) && std::isfinite(r0) && std::isfinite(omega0) && std::isfinite(G);
  }
};

struct OrbitShape {
  double e = 0.0;  // eccentricity
  double l = 0.0;  // semi-latus rectum
};

struct OrbitCurve {
  std::vector<double> thetas;
  std::vector<double> radii;
  double e = 0.0;
  double l = 0.0;
};

/// Eccentricity and semi-latus rectum of the closed orbit. The orbiting mass m1
/// does not enter either expression.
inline OrbitShape kepler_shape(const KeplerParams& p) {
  if (!p.valid()) throw InvalidParameterError("kepler: parameters must be finite and strictly positive");
  const double ratio = p.r0 * p.r0 * p.r0 * p.omega0 * p.omega0 / (p.G * p.m2);
  OrbitShape s{std::abs(ratio - 1.0), ratio * p.r0};
  if (!std::isfinite(s.e) || !std::isfinite(s.l))
    throw InvalidParameterError("kepler: non-finite eccentricity or semi-latus rectum");
  return s;
}

/// Angles evenly spaced over the closed interval [0, 2*pi].
inline std::vector<double> orbit_angles(std::size_t n_theta) {
  std::vector<double> thetas(n_theta);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n_theta - 1);
  for (std::size_t i = 0; i < n_theta; ++i) thetas[i] = step * static_cast<double>(i);
  return thetas;
}

inline OrbitCurve kepler_orbit(const KeplerParams& p, std::size_t n_theta = 100) {
  if (n_theta < 2) throw InvalidParameterError("kepler_orbit: n_theta must be at least 2");
  const OrbitShape s = kepler_shape(p);
  if (s.e >= 1.0)
    throw UnboundedOrbitError("kepler_orbit: eccentricity " + std::to_string(s.e) +
                              " >= 1 gives an unbounded orbit");
  OrbitCurve c;
  c.e = s.e;
  c.l = s.l;
  c.thetas = orbit_angles(n_theta);
  c.radii.resize(n_theta);
  for (std::size_t i = 0; i < n_theta; ++i) c.radii[i] = s.l / (1.0 + s.e * std::cos(c.thetas[i]));
  return c;
}

}  // namespace fixfit::kepler
