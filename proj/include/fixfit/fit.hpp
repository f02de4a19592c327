#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fixfit/dataset.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/mlp.hpp"
#include "fixfit/rng.hpp"

namespace fixfit::fit {

/// Objective value; writes the gradient when `grad` is non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct Bounds {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Eigen::Index size() const noexcept { return lo.size(); }
  Eigen::VectorXd to_native(const Eigen::VectorXd& u) const { return lo.array() + u.array() * (hi - lo).array(); }
  Eigen::VectorXd to_unit(const Eigen::VectorXd& v) const { return (v - lo).array() / (hi - lo).array(); }
};

/// Per-latent range of the encoded training inputs, widened by 10% of the
/// range on each side.
inline Bounds latent_bounds(const Eigen::MatrixXd& latents, double widen = 0.1) {
  if (latents.rows() == 0) throw DataError("latent_bounds: no latent samples");
  Bounds b{latents.colwise().minCoeff().transpose(), latents.colwise().maxCoeff().transpose()};
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const double range = b.hi[j] - b.lo[j];
    if (!(range > 0.0)) throw DataError("latent_bounds: latent " + std::to_string(j) + " has zero range");
    b.lo[j] -= widen * range;
    b.hi[j] += widen * range;
  }
  return b;
}

inline Bounds latent_bounds(const nn::MLPModel& model, const Dataset& ds) {
  return latent_bounds(nn::encode(model, ds.X_train()));
}

/// Quadratic penalty on excursions outside the unit cube.
inline double cube_penalty(const Eigen::VectorXd& u, double weight, Eigen::VectorXd* grad) {
  double p = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double excess = std::abs(u[i] - 0.5) - 0.5;
    if (excess > 0.0) {
      p += weight * excess * excess;
      if (grad) (*grad)[i] += 2.0 * weight * excess * (u[i] > 0.5 ? 1.0 : -1.0);
    }
  }
  return p;
}

/// Residual sum of squares between the decoded latent point and a target,
/// as a function of unit-cube coordinates.
class LatentObjective {
 public:
  LatentObjective(const nn::MLPModel& model, Eigen::VectorXd target, Bounds bounds, double penalty = 1e3)
      : model_(model), target_(std::move(target)), bounds_(std::move(bounds)), penalty_(penalty) {
    if (static_cast<std::size_t>(target_.size()) != model_.spec.output_dim())
      throw ShapeError("objective: target width " + std::to_string(target_.size()) + " != network output width " +
                       std::to_string(model_.spec.output_dim()));
    if (static_cast<std::size_t>(bounds_.size()) != model_.spec.latent_dim())
      throw ShapeError("objective: bounds do not match the latent width");
  }

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
    const Eigen::VectorXd latent = bounds_.to_native(u);
    const Eigen::MatrixXd& out = nn::forward_range(model_, model_.bottleneck_layer(), model_.layers(), latent, cache_);
    const Eigen::VectorXd diff = out.col(0) - target_;
    double f = diff.squaredNorm();
    if (grad) {
      const auto g = nn::backward_range(model_, cache_, 2.0 * diff, false);
      *grad = g.dX.col(0).cwiseProduct(bounds_.hi - bounds_.lo);
    }
    return f + cube_penalty(u, penalty_, grad);
  }

  const Bounds& bounds() const noexcept { return bounds_; }

 private:
  const nn::MLPModel& model_;
  Eigen::VectorXd target_;
  Bounds bounds_;
  double penalty_;
  mutable nn::ForwardCache cache_;
};

// -------------------------------------------------------------------- BFGS

struct BfgsOptions {
  double grad_tol = 1e-8;
  int max_iter = 500;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Quasi-Newton minimisation with an inverse-Hessian BFGS update and Armijo
/// backtracking. Stops on gradient norm below tolerance or the iteration cap;
/// a failed line search returns the best point reached with the flag set.
inline BfgsResult bfgs_minimize(const Objective& f, const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  BfgsResult r;
  r.x = x0;
  Eigen::VectorXd g(n);
  r.f = f(r.x, &g);
  r.evaluations = 1;
  if (!std::isfinite(r.f) || !g.allFinite()) {
    r.line_search_failed = true;
    return r;
  }
  if (g.norm() < opt.grad_tol) {
    r.converged = true;
    return r;
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g_new(n), x_new(n);
  for (r.iterations = 0; r.iterations < opt.max_iter;) {
    Eigen::VectorXd p = -H * g;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      H.setIdentity();
      p = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    bool found = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt, step *= opt.shrink) {
      x_new = r.x + step * p;
      f_new = f(x_new, &g_new);
      ++r.evaluations;
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= r.f + opt.armijo_c * step * slope) {
        found = true;
        break;
      }
    }
    if (!found) {
      r.line_search_failed = true;
      break;
    }
    ++r.iterations;
    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    r.x = x_new;
    r.f = f_new;
    g = g_new;
    if (g.norm() < opt.grad_tol) {
      r.converged = true;
      break;
    }
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (r.iterations == 1) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded.
      H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
  }
  return r;
}

// ------------------------------------------------------------ basin hopping

/// Metropolis acceptance probability min(1, exp(-delta / T)).
inline double acceptance_probability(double delta, double temperature) {
  if (delta <= 0.0) return 1.0;
  return std::exp(-delta / temperature);
}

inline bool metropolis_accept(double delta, double temperature, Rng& rng) {
  return uniform01(rng) < acceptance_probability(delta, temperature);
}

struct FitConfig {
  double temperature = 0.0;  // <= 0 selects 0.1 x the initial local minimum
  double min_temperature = 1e-12;
  double step_size = 0.2;
  int n_hops = 100;
  std::optional<Eigen::VectorXd> init;  // unit-cube start, default all 0.5
  std::uint64_t seed = 0;
  BfgsOptions bfgs{};

  void validate() const {
    if (!(step_size > 0.0 && step_size <= 1.0)) throw ConfigError("fit: step_size must be in (0, 1]");
    if (n_hops < 0) throw ConfigError("fit: n_hops must be non-negative");
    if (!(min_temperature > 0.0)) throw ConfigError("fit: min_temperature must be positive");
  }
};

struct TraceEntry {
  Eigen::VectorXd proposal;
  Eigen::VectorXd local_min;
  double objective = 0.0;
  bool accepted = false;
  bool flagged = false;
};

struct FitResult {
  Eigen::VectorXd best_unit;
  Eigen::VectorXd best_latent;  // filled by callers that map unit coordinates back
  double best_objective = std::numeric_limits<double>::infinity();
  double temperature = 0.0;
  std::vector<TraceEntry> trace;
  long evaluations = 0;
};

/// Basin-hopping over the unit cube: local BFGS from the start, then random
/// uniform displacements (clipped to the cube) each followed by BFGS and a
/// Metropolis decision. The global best is tracked independently of acceptance.
inline FitResult basin_hop(const Objective& objective, Eigen::Index dim, const FitConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Eigen::VectorXd start = cfg.init.value_or(Eigen::VectorXd::Constant(dim, 0.5));
  if (start.size() != dim) throw ShapeError("basin_hop: init has the wrong dimension");

  FitResult res;
  auto local = bfgs_minimize(objective, start, cfg.bfgs);
  res.evaluations += local.evaluations;
  res.temperature = cfg.temperature > 0.0 ? cfg.temperature : std::max(0.1 * local.f, cfg.min_temperature);
  if (!std::isfinite(res.temperature)) throw NumericalError("basin_hop: non-finite objective at the start");
  res.trace.push_back({start, local.x, local.f, true, local.line_search_failed});
  Eigen::VectorXd current = local.x;
  double f_current = local.f;
  res.best_unit = local.x;
  res.best_objective = local.f;

  for (int hop = 0; hop < cfg.n_hops; ++hop) {
    Eigen::VectorXd proposal = current;
    for (Eigen::Index i = 0; i < dim; ++i)
      proposal[i] = std::clamp(proposal[i] + uniform(rng, -cfg.step_size, cfg.step_size), 0.0, 1.0);
    local = bfgs_minimize(objective, proposal, cfg.bfgs);
    res.evaluations += local.evaluations;
    const bool finite = std::isfinite(local.f);
    const double u = uniform01(rng);
    const bool accept = finite && u < acceptance_probability(local.f - f_current, res.temperature);
    res.trace.push_back({proposal, local.x, local.f, accept, local.line_search_failed || !finite});
    if (finite && local.f < res.best_objective) {
      res.best_objective = local.f;
      res.best_unit = local.x;
    }
    if (accept) {
      current = local.x;
      f_current = local.f;
    }
  }
  return res;
}

/// Fits the latent point whose decoded output best matches `target` (already
/// in the training output space).
inline FitResult fit_latent(const nn::MLPModel& model, const Eigen::VectorXd& target, const Bounds& bounds,
                            const FitConfig& cfg, double penalty = 1e3) {
  const LatentObjective obj(model, target, bounds, penalty);
  auto res = basin_hop([&obj](const Eigen::VectorXd& u, Eigen::VectorXd* g) { return obj(u, g); },
                       bounds.size(), cfg);
  res.best_latent = bounds.to_native(res.best_unit);
  return res;
}

}  // namespace fixfit::fit
