#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "fixfit/bold.hpp"
#include "fixfit/kepler.hpp"
#include "fixfit/larter_breakspear.hpp"

#include <nlohmann/json.hpp>

using namespace fixfit;

// ---------------------------------------------------------------- Kepler

TEST(KeplerShape, HandEvaluatedEllipse) {
  const auto s = kepler::kepler_shape({0.3, 0.5, 0.5, 1.0, 0.5});
  EXPECT_NEAR(s.e, 0.5, 1e-15);
  EXPECT_NEAR(s.l, 0.25, 1e-15);
}

TEST(KeplerShape, CircularOrbit) {
  const auto s = kepler::kepler_shape({0.3, 0.25, 0.5, 1.0, 0.5});
  EXPECT_NEAR(s.e, 0.0, 1e-15);
  EXPECT_NEAR(s.l, 0.5, 1e-15);
}

TEST(KeplerShape, OrbitingMassCancels) {
  const auto a = kepler::kepler_shape({0.1, 0.4, 0.7, 0.9, 0.5});
  const auto b = kepler::kepler_shape({1.0, 0.4, 0.7, 0.9, 0.5});
  EXPECT_EQ(a.e, b.e);
  EXPECT_EQ(a.l, b.l);
  const auto oa = kepler::kepler_orbit({0.1, 0.4, 0.7, 0.9, 0.5});
  const auto ob = kepler::kepler_orbit({1.0, 0.4, 0.7, 0.9, 0.5});
  EXPECT_EQ(oa.radii, ob.radii);
}

TEST(KeplerShape, RejectsNonPositiveParameters) {
  EXPECT_THROW(kepler::kepler_shape({0.3, 0.0, 0.5, 1.0, 0.5}), InvalidParameterError);
  EXPECT_THROW(kepler::kepler_shape({0.3, 0.5, -0.5, 1.0, 0.5}), InvalidParameterError);
}

TEST(KeplerOrbit, PeriapsisAndApoapsis) {
  // m2 = 0.5, r0 = 0.5, w0 = 1 gives e = 0.5, l = 0.25; 101 angles put pi on the grid.
  const auto o = kepler::kepler_orbit({0.3, 0.5, 0.5, 1.0, 0.5}, 101);
  EXPECT_NEAR(o.radii.front(), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(o.radii[50], 0.5, 1e-15);
  EXPECT_NEAR(*std::min_element(o.radii.begin(), o.radii.end()), o.l / (1 + o.e), 1e-15);
  EXPECT_NEAR(*std::max_element(o.radii.begin(), o.radii.end()), o.l / (1 - o.e), 1e-15);
}

TEST(KeplerOrbit, DefaultGridSpansFullTurn) {
  const auto o = kepler::kepler_orbit({0.3, 0.5, 0.5, 1.0, 0.5});
  ASSERT_EQ(o.thetas.size(), 100u);
  EXPECT_EQ(o.thetas.front(), 0.0);
  EXPECT_NEAR(o.thetas.back(), 2 * std::numbers::pi, 1e-14);
}

TEST(KeplerOrbit, CircleHasConstantRadius) {
  const auto o = kepler::kepler_orbit({0.3, 0.25, 0.5, 1.0, 0.5});
  for (double r : o.radii) EXPECT_NEAR(r, 0.5, 1e-15);
}

TEST(KeplerOrbit, CosineSymmetry) {
  const auto o = kepler::kepler_orbit({0.3, 0.6, 0.8, 0.7, 0.5}, 100);
  for (std::size_t i = 0; i < o.radii.size(); ++i) EXPECT_NEAR(o.radii[i], o.radii[o.radii.size() - 1 - i], 1e-12);
}

TEST(KeplerOrbit, UnboundedOrbitIsAnError) {
  // r0^3 w0^2 / (G m2) = 1 / 0.05 = 20 -> e = 19.
  EXPECT_THROW(kepler::kepler_orbit({0.3, 0.1, 1.0, 1.0, 0.5}), UnboundedOrbitError);
}

// ------------------------------------------------------- Larter-Breakspear

namespace {

lb::State state3(std::size_t n, double v, double z, double w) {
  lb::State s(3 * n);
  for (std::size_t i = 0; i < n; ++i) s[i] = v, s[n + i] = z, s[2 * n + i] = w;
  return s;
}

}  // namespace

TEST(LBDerivative, PotassiumGateHandEvaluation) {
  const auto p = lb::default_params();
  const double V = 0.1, W = 0.2;
  const auto d = lb::lb_derivative(state3(1, V, -0.05, W), p, lb::synthetic_connectivity(1));
  const double m_k = 0.5 * (1.0 + std::tanh((V - p.T_K) / p.delta_K));
  EXPECT_NEAR(d[2], p.phi * (m_k - W) / p.tau_K, 1e-15);
}

TEST(LBDerivative, SingleRegionHandEvaluation) {
  auto p = lb::default_params();
  p.c = 0.0;
  const double V = 0.05, Z = 0.1, W = 0.25;
  const auto d = lb::lb_derivative(state3(1, V, Z, W), p, lb::synthetic_connectivity(1));
  const double qv = 0.5 * p.Q_Vmax * (1 + std::tanh((V - p.V_T) / p.delta));
  const double qz = 0.5 * p.Q_Zmax * (1 + std::tanh((Z - p.Z_T) / p.delta));
  const double mna = 0.5 * (1 + std::tanh((V - p.T_Na) / p.delta_Na));
  const double mca = 0.5 * (1 + std::tanh((V - p.T_Ca) / p.delta_Ca));
  const double dV = -(p.g_Ca + p.r_NMDA * p.a_ee * qv) * mca * (V - p.V_Ca) - (p.g_Na * mna + p.a_ee * qv) * (V - p.V_Na) -
                    p.g_K * W * (V - p.V_K) - p.g_L * (V - p.V_L) - p.a_ie * Z * qz + p.a_ne * p.I_0;
  const double dZ = p.b * (p.a_ni * p.I_0 + p.a_ei * V * qv);
  EXPECT_NEAR(d[0], dV, 1e-14);
  EXPECT_NEAR(d[1], dZ, 1e-15);
}

TEST(LBDerivative, UncoupledEqualsRegionwiseSingleRegion) {
  auto p = lb::default_params();
  p.c = 0.0;
  const auto conn = lb::synthetic_connectivity(3);
  const lb::State s{0.1, -0.05, 0.2, 0.02, 0.07, -0.1, 0.1, 0.25, 0.05};
  const auto d = lb::lb_derivative(s, p, conn);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto di = lb::lb_derivative({s[i], s[3 + i], s[6 + i]}, p, lb::synthetic_connectivity(1));
    EXPECT_EQ(d[i], di[0]);
    EXPECT_EQ(d[3 + i], di[1]);
    EXPECT_EQ(d[6 + i], di[2]);
  }
}

TEST(LBDerivative, IdenticalRegionsHaveIdenticalDerivatives) {
  const auto d = lb::lb_derivative(state3(2, 0.1, 0.05, 0.2), lb::default_params(), lb::synthetic_connectivity(2));
  EXPECT_EQ(d[0], d[1]);
  EXPECT_EQ(d[2], d[3]);
  EXPECT_EQ(d[4], d[5]);
}

TEST(LBDerivative, PermutationEquivariance) {
  const auto p = lb::default_params();
  lb::Connectivity c{Eigen::MatrixXd(3, 3)};
  c.u << 0, 0.5, 0.2, 0.5, 0, 0.9, 0.2, 0.9, 0;
  const lb::State s{0.1, -0.05, 0.2, 0.02, 0.07, -0.1, 0.1, 0.25, 0.05};
  const int perm[3] = {2, 0, 1};
  lb::Connectivity cp{Eigen::MatrixXd(3, 3)};
  lb::State sp(9);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) cp.u(i, j) = c.u(perm[i], perm[j]);
    for (int k = 0; k < 3; ++k) sp[static_cast<std::size_t>(3 * k + i)] = s[static_cast<std::size_t>(3 * k + perm[i])];
  }
  const auto d = lb::lb_derivative(s, p, c);
  const auto dp = lb::lb_derivative(sp, p, cp);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      EXPECT_NEAR(dp[static_cast<std::size_t>(3 * k + i)], d[static_cast<std::size_t>(3 * k + perm[i])], 1e-15);
}

TEST(LBDerivative, StateSizeMismatch) {
  EXPECT_THROW(lb::lb_derivative(state3(2, 0, 0, 0), lb::default_params(), lb::synthetic_connectivity(3)), ShapeError);
}

TEST(Connectivity, SyntheticIsValid) {
  const auto c = lb::synthetic_connectivity(8);
  EXPECT_NO_THROW(c.validate());
  EXPECT_NEAR(c.u(0, 2), std::exp(-1.0), 1e-15);  // lambda = 8 / 4
  EXPECT_EQ(c.u(3, 3), 0.0);
}

TEST(Connectivity, RejectsAsymmetricAndNegative) {
  auto c = lb::synthetic_connectivity(3);
  c.u(0, 1) = 0.9;
  EXPECT_THROW(c.validate(), DataError);
  c = lb::synthetic_connectivity(3);
  c.u(0, 1) = c.u(1, 0) = -0.1;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(Connectivity, CsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "fixfit_conn_test.csv";
  {
    std::ofstream out(path);
    out << "0,0.5,0.25\n0.5,0,1\n0.25,1,0\n";
  }
  const auto c = lb::load_connectivity_csv(path.string());
  EXPECT_EQ(c.region_count(), 3u);
  EXPECT_EQ(c.u(1, 2), 1.0);
  std::filesystem::remove(path);
  EXPECT_THROW(lb::load_connectivity_csv("/nonexistent/conn.csv"), DataError);
}

TEST(LBSimulate, DeterministicForSeed) {
  const lb::SimConfig cfg{50.0, 0.1, 1.0};
  const auto a = lb::lb_simulate(lb::midpoint_params(), lb::synthetic_connectivity(3), cfg, 11);
  const auto b = lb::lb_simulate(lb::midpoint_params(), lb::synthetic_connectivity(3), cfg, 11);
  EXPECT_EQ(a.V, b.V);
  EXPECT_EQ(a.W, b.W);
  EXPECT_EQ(a.t.size(), 51u);
}

TEST(LBSimulate, MidpointParametersStayBounded) {
  const auto ts = lb::lb_simulate(lb::midpoint_params(), lb::synthetic_connectivity(4), {2000.0, 0.1, 1.0}, 3);
  EXPECT_TRUE(ts.V.allFinite());
  EXPECT_LT(ts.V.cwiseAbs().maxCoeff(), 2.0);
  EXPECT_LT(ts.W.cwiseAbs().maxCoeff(), 2.0);
}

TEST(LBSimulate, Rk4IsFourthOrder) {
  const auto p = lb::midpoint_params();
  const auto conn = lb::synthetic_connectivity(3);
  const auto init = lb::random_initial_state(3, 5);
  auto final_state = [&](double dt) {
    const auto ts = lb::lb_simulate(p, conn, {20.0, dt, 20.0}, init);
    Eigen::VectorXd x(9);
    for (int i = 0; i < 3; ++i) x[i] = ts.V(i, 1), x[3 + i] = ts.Z(i, 1), x[6 + i] = ts.W(i, 1);
    return x;
  };
  // Steps at and below the production step; at 0.4 ms the error is not yet asymptotic.
  const auto x1 = final_state(0.1), x2 = final_state(0.05), x4 = final_state(0.025);
  const double ratio = (x1 - x2).norm() / (x2 - x4).norm();
  EXPECT_GT(ratio, 8.0);
  EXPECT_LT(ratio, 32.0);
}

TEST(LBSimulate, DivergenceIsReported) {
  auto p = lb::default_params();
  p.phi = 1e300;
  p.tau_K = 1e-300;
  EXPECT_THROW(lb::lb_simulate(p, lb::synthetic_connectivity(2), {10.0, 0.1, 1.0}, 1), SimulationDivergedError);
}

namespace {

lb::RegionTimeSeries series(const Eigen::MatrixXd& V) {
  lb::RegionTimeSeries ts;
  ts.V = V;
  ts.Z = Eigen::MatrixXd::Zero(V.rows(), V.cols());
  ts.W = ts.Z;
  for (Eigen::Index j = 0; j < V.cols(); ++j) ts.t.push_back(static_cast<double>(j));
  return ts;
}

}  // namespace

TEST(Oscillation, ConstantVoltageIsNotOscillatory) {
  EXPECT_FALSE(lb::is_oscillatory(series(Eigen::MatrixXd::Constant(3, 100, 0.2)), 0.05));
}

TEST(Oscillation, SinusoidIsOscillatory) {
  Eigen::MatrixXd V(2, 200);
  for (Eigen::Index j = 0; j < 200; ++j) V(0, j) = V(1, j) = std::sin(0.1 * static_cast<double>(j));
  EXPECT_TRUE(lb::is_oscillatory(series(V), 0.05));
}

TEST(Oscillation, AmplitudeAtThresholdIsNotOscillatory) {
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(1, 10);
  V(0, 3) = 0.05;
  EXPECT_FALSE(lb::is_oscillatory(series(V), 0.05));
}

// -------------------------------------------------------------------- BOLD

TEST(Bold, RestingInputStaysAtBaseline) {
  const auto y = lb::balloon_windkessel(std::vector<double>(1000, 0.0), 0.01, {});
  for (double v : y) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Bold, PositiveImpulseRaisesSignal) {
  std::vector<double> z(3000, 0.0);
  for (std::size_t i = 0; i < 100; ++i) z[i] = 1.0;
  const auto y = lb::balloon_windkessel(z, 0.01, {});
  EXPECT_GT(*std::max_element(y.begin(), y.end()), 0.0);
}

TEST(Bold, BandpassRemovesOutOfBandTones) {
  const double dt = 0.8;
  std::vector<double> x(500);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = dt * static_cast<double>(i);
    x[i] = std::sin(2 * std::numbers::pi * 0.05 * t) + std::sin(2 * std::numbers::pi * 0.3 * t) + 3.0;
  }
  const auto y = lb::bandpass(x, dt, 0.01, 0.1);
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    err = std::max(err, std::abs(y[i] - std::sin(2 * std::numbers::pi * 0.05 * dt * static_cast<double>(i))));
  EXPECT_LT(err, 1e-9);
}

TEST(Bold, FlatLengthForSeventyEightRegions) {
  EXPECT_EQ(lb::upper_triangle(Eigen::MatrixXd::Identity(78, 78)).size(), 3003u);
}

TEST(Bold, DuplicatedAndFlippedSignals) {
  Eigen::MatrixXd s(3, 64);
  for (Eigen::Index j = 0; j < 64; ++j) {
    s(0, j) = std::sin(0.3 * static_cast<double>(j)) + 0.1 * std::cos(1.7 * static_cast<double>(j));
    s(1, j) = s(0, j);
    s(2, j) = -s(0, j);
  }
  const auto fc = lb::pearson_fc(s);
  EXPECT_NEAR(fc.c(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(fc.c(0, 2), -1.0, 1e-12);
  EXPECT_EQ(fc.c(1, 1), 1.0);
}

TEST(Bold, ConstantSignalHasUndefinedCorrelation) {
  Eigen::MatrixXd s(2, 32);
  s.row(0).setConstant(1.0);
  for (Eigen::Index j = 0; j < 32; ++j) s(1, j) = static_cast<double>(j % 5);
  EXPECT_THROW(lb::pearson_fc(s), UndefinedCorrelationError);
}

TEST(Bold, SimulatedFcInvariants) {
  lb::BoldConfig bc;
  bc.transient_discard = 2.0;
  const auto ts = lb::lb_simulate(lb::midpoint_params(), lb::synthetic_connectivity(4), {60000.0, 0.2, 1.0}, 9);
  const auto r = lb::bold_fc(ts, bc);
  EXPECT_EQ(r.flat.size(), 6u);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_EQ(r.fc.c(i, i), 1.0);
    for (Eigen::Index j = 0; j < 4; ++j) {
      EXPECT_EQ(r.fc.c(i, j), r.fc.c(j, i));
      EXPECT_LE(std::abs(r.fc.c(i, j)), 1.0);
    }
  }
}

TEST(LBParams, MatchReferenceFile) {
  std::ifstream in(std::string(FIXFIT_SOURCE_DIR) + "/data/lb_reference_params.json");
  ASSERT_TRUE(in);
  const auto j = nlohmann::json::parse(in);
  const auto p = lb::default_params();
  ASSERT_EQ(j["values"].size(), lb::kFields.size());
  for (const auto& f : lb::kFields) EXPECT_EQ(j["values"][std::string(f.name)].get<double>(), p.*f.member) << f.name;
  for (const auto& r : lb::kFreeRanges) {
    EXPECT_EQ(j["free_ranges"][std::string(r.name)][0].get<double>(), r.lower);
    EXPECT_EQ(j["free_ranges"][std::string(r.name)][1].get<double>(), r.upper);
  }
}
