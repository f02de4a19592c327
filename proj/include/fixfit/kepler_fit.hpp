#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "fixfit/dataset.hpp"
#include "fixfit/fit.hpp"
#include "fixfit/kepler.hpp"

namespace fixfit::kepler {

/// Residual sum of squares of the transformed simulator output against a
/// target, over the four native parameters in unit-cube coordinates.
///
/// Coordinates are clamped to the cube for the simulator call and pulled back
/// by the cube penalty. For unbounded orbits the log of 1 + e cos(theta) is
/// continued below `log_floor` by its second-order Taylor expansion, so the
/// objective stays finite and smooth across e = 1.
class NativeObjective {
 public:
  NativeObjective(ParamSpace space, KeplerGenConfig cfg, OutputTransform transform, Eigen::VectorXd target,
                  double penalty = 1e3, double log_floor = 1e-3)
      : space_(std::move(space)), cfg_(cfg), transform_(transform), target_(std::move(target)),
        penalty_(penalty), eps_(log_floor), thetas_(orbit_angles(cfg.n_theta)) {
    if (space_.dimension() != 4) throw ConfigError("native objective: expected the four Kepler parameters");
    if (static_cast<std::size_t>(target_.size()) != cfg_.n_theta) throw ShapeError("native objective: target width mismatch");
    if (!transform_.log) throw ConfigError("native objective: expects log-transformed outputs");
  }

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
    const auto specs = space_.free_specs();
    double native[4], width[4];
    bool inside[4];
    for (int i = 0; i < 4; ++i) {
      inside[i] = u[i] >= 0.0 && u[i] <= 1.0;
      width[i] = specs[static_cast<std::size_t>(i)].upper - specs[static_cast<std::size_t>(i)].lower;
      native[i] = specs[static_cast<std::size_t>(i)].lower + std::clamp(u[i], 0.0, 1.0) * width[i];
    }
    const double m2 = native[1], r0 = native[2], w0 = native[3];
    const double R = r0 * r0 * r0 * w0 * w0 / (cfg_.G * m2);
    const double e = std::abs(R - 1.0);
    const double l = R * r0;
    const double de_dR = R >= 1.0 ? 1.0 : -1.0;
    const double scale = transform_.minmax ? 1.0 / (transform_.max - transform_.min) : 1.0;
    const double offset = transform_.minmax ? transform_.min : 0.0;

    double f = 0.0, df_dl = 0.0, df_de = 0.0;
    for (std::size_t t = 0; t < thetas_.size(); ++t) {
      const double c = std::cos(thetas_[t]);
      const double z = 1.0 + e * c;
      double g, dg;
      if (z >= eps_) {
        g = std::log(z);
        dg = 1.0 / z;
      } else {
        const double d = z - eps_;
        g = std::log(eps_) + d / eps_ - d * d / (2.0 * eps_ * eps_);
        dg = 1.0 / eps_ - d / (eps_ * eps_);
      }
      const double y = (std::log(l) - g - offset) * scale;
      const double r = y - target_[static_cast<Eigen::Index>(t)];
      f += r * r;
      df_dl += 2.0 * r * scale / l;
      df_de += -2.0 * r * scale * dg * c;
    }
    if (grad) {
      grad->setZero(4);
      // dR/dm2 = -R/m2, dR/dr0 = 3R/r0, dR/dw0 = 2R/w0; l = R r0.
      const double dR[4] = {0.0, -R / m2, 3.0 * R / r0, 2.0 * R / w0};
      const double dl[4] = {0.0, -l / m2, 4.0 * l / r0, 2.0 * l / w0};
      for (int i = 0; i < 4; ++i)
        if (inside[i]) (*grad)[i] = (df_de * de_dR * dR[i] + df_dl * dl[i]) * width[i];
    }
    return f + fit::cube_penalty(u, penalty_, grad);
  }

 private:
  ParamSpace space_;
  KeplerGenConfig cfg_;
  OutputTransform transform_;
  Eigen::VectorXd target_;
  double penalty_;
  double eps_;
  std::vector<double> thetas_;
};

/// Transformed output row for native parameters, identical to the dataset rows.
inline Eigen::VectorXd kepler_target(const std::vector<double>& native, const KeplerGenConfig& cfg,
                                     const OutputTransform& transform) {
  const auto log_r = kepler_log_radii(native, cfg);
  Eigen::VectorXd y(static_cast<Eigen::Index>(log_r.size()));
  for (std::size_t i = 0; i < log_r.size(); ++i) {
    double v = log_r[i];
    if (transform.minmax) v = (v - transform.min) / (transform.max - transform.min);
    y[static_cast<Eigen::Index>(i)] = v;
  }
  return y;
}

}  // namespace fixfit::kepler
