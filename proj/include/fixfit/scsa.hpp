#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fixfit/dataset.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/mlp.hpp"

namespace fixfit::scsa {

/// Orthonormal shifted Legendre polynomial of the given degree on [0, 1].
inline double shifted_legendre(int degree, double x) {
  const double z = 2.0 * x - 1.0;
  double p_prev = 1.0, p = z;
  if (degree == 0) return 1.0;
  for (int n = 1; n < degree; ++n) {
    const double next = ((2.0 * n + 1.0) * z * p - n * p_prev) / (n + 1.0);
    p_prev = p;
    p = next;
  }
  return std::sqrt(2.0 * degree + 1.0) * p;
}

/// First-order HDMR expansion: y - mean(y) ~ sum_i f_i(x_i), each f_i a
/// combination of sample-centred shifted Legendre terms of degree 1..degree.
struct HdmrFit {
  int degree = 3;
  std::size_t inputs = 0;
  Eigen::MatrixXd coef;         // inputs x degree
  Eigen::MatrixXd basis_means;  // inputs x degree, sample means subtracted from each basis column
  double y_mean = 0.0;

  double component(std::size_t i, double x) const {
    double f = 0.0;
    for (int d = 1; d <= degree; ++d) {
      const auto ii = static_cast<Eigen::Index>(i);
      f += coef(ii, d - 1) * (shifted_legendre(d, x) - basis_means(ii, d - 1));
    }
    return f;
  }

  /// Sample vectors of every component: N x inputs.
  Eigen::MatrixXd components(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd F(X.rows(), static_cast<Eigen::Index>(inputs));
    for (Eigen::Index s = 0; s < X.rows(); ++s)
      for (Eigen::Index i = 0; i < F.cols(); ++i) F(s, i) = component(static_cast<std::size_t>(i), X(s, i));
    return F;
  }
};

inline HdmrFit fit_hdmr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int degree = 3) {
  if (degree < 1) throw ConfigError("fit_hdmr: degree must be >= 1");
  if (X.rows() != y.size()) throw ShapeError("fit_hdmr: X and y have different sample counts");
  const auto n = X.rows();
  const auto inputs = X.cols();
  const auto cols = inputs * degree;
  if (n <= cols + 1) throw DataError("fit_hdmr: need more samples than basis terms + 1");

  HdmrFit fit;
  fit.degree = degree;
  fit.inputs = static_cast<std::size_t>(inputs);
  fit.basis_means.resize(inputs, degree);
  Eigen::MatrixXd D(n, cols);
  for (Eigen::Index i = 0; i < inputs; ++i)
    for (int d = 1; d <= degree; ++d) {
      const Eigen::Index c = i * degree + (d - 1);
      for (Eigen::Index s = 0; s < n; ++s) D(s, c) = shifted_legendre(d, X(s, i));
      fit.basis_means(i, d - 1) = D.col(c).mean();
      D.col(c).array() -= fit.basis_means(i, d - 1);
    }
  fit.y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - fit.y_mean;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) {
    // Columns beyond the rank are linear combinations of the leading ones; name
    // their inputs and every input they load on.
    std::set<std::size_t> involved;
    const auto& perm = qr.colsPermutation().indices();
    std::vector<Eigen::Index> kept;
    for (Eigen::Index r = 0; r < qr.rank(); ++r) kept.push_back(perm[r]);
    Eigen::MatrixXd K(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) K.col(static_cast<Eigen::Index>(c)) = D.col(kept[c]);
    for (Eigen::Index r = qr.rank(); r < cols; ++r) {
      const Eigen::Index c = perm[r];
      involved.insert(static_cast<std::size_t>(c / degree));
      if (K.cols() == 0) continue;
      const Eigen::VectorXd w = K.colPivHouseholderQr().solve(D.col(c));
      const double scale = std::max(1e-300, w.cwiseAbs().maxCoeff());
      for (Eigen::Index q = 0; q < w.size(); ++q)
        if (std::abs(w[q]) > 1e-6 * scale) involved.insert(static_cast<std::size_t>(kept[static_cast<std::size_t>(q)] / degree));
    }
    std::string names;
    for (auto i : involved) names += (names.empty() ? "" : ", ") + std::to_string(i);
    throw RankDeficientError({involved.begin(), involved.end()},
                             "fit_hdmr: rank-deficient design; collinear inputs: " + names);
  }
  const Eigen::VectorXd beta = qr.solve(yc);
  fit.coef.resize(inputs, degree);
  for (Eigen::Index i = 0; i < inputs; ++i)
    for (int d = 0; d < degree; ++d) fit.coef(i, d) = beta[i * degree + d];
  return fit;
}

/// Exclusive contribution of each component: the part of f_i orthogonal to the
/// span of every other component, as a fraction of the output's total sum of
/// squares.
inline std::vector<double> uncorrelated_index(const Eigen::MatrixXd& F, const Eigen::VectorXd& y) {
  if (F.rows() != y.size()) throw ShapeError("uncorrelated_index: sample count mismatch");
  const double ss = (y.array() - y.mean()).square().sum();
  if (!(ss > 0.0)) throw UndefinedSensitivityError("uncorrelated_index: output has zero variance");
  const Eigen::Index inputs = F.cols();
  std::vector<double> s(static_cast<std::size_t>(inputs));
  for (Eigen::Index i = 0; i < inputs; ++i) {
    Eigen::VectorXd residual = F.col(i);
    if (inputs > 1) {
      Eigen::MatrixXd others(F.rows(), inputs - 1);
      for (Eigen::Index m = 0, c = 0; m < inputs; ++m)
        if (m != i) others.col(c++) = F.col(m);
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(others);
      residual -= others * cod.solve(residual);
    }
    s[static_cast<std::size_t>(i)] = residual.squaredNorm() / ss;
  }
  return s;
}

struct SensitivityMatrix {
  Eigen::MatrixXd s_unc;  // inputs x latents
  int basis_degree = 3;
  std::size_t sample_count = 0;
  std::vector<std::string> input_names;
};

/// Training inputs and their encoder latents, row-aligned.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> latent_samples(const nn::MLPModel& model, const Dataset& ds) {
  if (static_cast<std::size_t>(ds.X.cols()) != model.spec.input_dim())
    throw ShapeError("latent_samples: dataset input width does not match the network");
  Eigen::MatrixXd X = ds.X_train();
  Eigen::MatrixXd L = nn::encode(model, X);
  return {std::move(X), std::move(L)};
}

inline SensitivityMatrix sensitivity_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& L, int degree = 3) {
  SensitivityMatrix sm;
  sm.basis_degree = degree;
  sm.sample_count = static_cast<std::size_t>(X.rows());
  sm.s_unc.resize(X.cols(), L.cols());
  for (Eigen::Index j = 0; j < L.cols(); ++j) {
    const Eigen::VectorXd y = L.col(j);
    const auto fit = fit_hdmr(X, y, degree);
    const auto s = uncorrelated_index(fit.components(X), y);
    for (Eigen::Index i = 0; i < X.cols(); ++i) sm.s_unc(i, j) = s[static_cast<std::size_t>(i)];
  }
  return sm;
}

inline SensitivityMatrix sensitivity_matrix(const nn::MLPModel& model, const Dataset& ds, int degree = 3) {
  const auto [X, L] = latent_samples(model, ds);
  auto sm = sensitivity_matrix(X, L, degree);
  sm.input_names = ds.space.free_names();
  return sm;
}

}  // namespace fixfit::scsa
