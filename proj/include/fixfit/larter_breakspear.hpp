#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fixfit/errors.hpp"
#include "fixfit/rng.hpp"

namespace fixfit::lb {

/// Larter-Breakspear neural-mass parameters, one field per model symbol.
/// Defaults are the reference values shipped in data/lb_reference_params.json.
struct LBParams {
  double V_Na = 0.53;
  double V_K = -0.7;
  double V_Ca = 1.0;
  double V_L = -0.5;
  double g_Na = 6.7;
  double g_K = 2.0;
  double g_Ca = 1.0;
  double g_L = 0.5;
  double T_Na = 0.3;
  double T_K = 0.0;
  double T_Ca = -0.01;
  double delta_Na = 0.15;
  double delta_K = 0.3;
  double delta_Ca = 0.15;
  double V_T = 0.0;
  double Z_T = 0.0;
  double delta = 0.65;
  double Q_Vmax = 1.0;
  double Q_Zmax = 1.0;
  double a_ee = 0.36;
  double a_ei = 2.0;
  double a_ie = 2.0;
  double a_ne = 1.0;
  double a_ni = 0.4;
  double I_0 = 0.3;
  double b = 0.1;
  double phi = 0.7;
  double tau_K = 1.0;
  double r_NMDA = 0.25;
  double c = 0.35;

  static constexpr std::size_t kCount = 30;
  std::array<bool, kCount> is_free{};

  double& operator[](std::string_view name);
  double operator[](std::string_view name) const { return const_cast<LBParams&>(*this)[name]; }
  std::size_t free_count() const noexcept {
    return static_cast<std::size_t>(std::count(is_free.begin(), is_free.end(), true));
  }
};

struct ParamField {
  std::string_view name;
  double LBParams::*member;
};

inline constexpr std::array<ParamField, LBParams::kCount> kFields{{
    {"V_Na", &LBParams::V_Na},     {"V_K", &LBParams::V_K},         {"V_Ca", &LBParams::V_Ca},
    {"V_L", &LBParams::V_L},       {"g_Na", &LBParams::g_Na},       {"g_K", &LBParams::g_K},
    {"g_Ca", &LBParams::g_Ca},     {"g_L", &LBParams::g_L},         {"T_Na", &LBParams::T_Na},
    {"T_K", &LBParams::T_K},       {"T_Ca", &LBParams::T_Ca},       {"delta_Na", &LBParams::delta_Na},
    {"delta_K", &LBParams::delta_K}, {"delta_Ca", &LBParams::delta_Ca}, {"V_T", &LBParams::V_T},
    {"Z_T", &LBParams::Z_T},       {"delta", &LBParams::delta},     {"Q_Vmax", &LBParams::Q_Vmax},
    {"Q_Zmax", &LBParams::Q_Zmax}, {"a_ee", &LBParams::a_ee},       {"a_ei", &LBParams::a_ei},
    {"a_ie", &LBParams::a_ie},     {"a_ne", &LBParams::a_ne},       {"a_ni", &LBParams::a_ni},
    {"I_0", &LBParams::I_0},       {"b", &LBParams::b},             {"phi", &LBParams::phi},
    {"tau_K", &LBParams::tau_K},   {"r_NMDA", &LBParams::r_NMDA},   {"c", &LBParams::c},
}};

inline std::optional<std::size_t> field_index(std::string_view name) {
  for (std::size_t i = 0; i < kFields.size(); ++i)
    if (kFields[i].name == name) return i;
  return std::nullopt;
}

inline double& LBParams::operator[](std::string_view name) {
  auto idx = field_index(name);
  if (!idx) throw ConfigError("unknown Larter-Breakspear parameter '" + std::string(name) + "'");
  return this->*kFields[*idx].member;
}

struct FreeRange {
  std::string_view name;
  double lower;
  double upper;
};

/// The eleven investigated parameters and their sampling ranges.
inline constexpr std::array<FreeRange, 11> kFreeRanges{{
    {"c", 0.2, 0.5},
    {"delta", 0.64, 0.7},
    {"g_Ca", 0.95, 1.05},
    {"V_Ca", 0.95, 1.01},
    {"g_K", 1.95, 2.05},
    {"V_K", -0.75, -0.65},
    {"g_Na", 6.6, 6.8},
    {"V_Na", 0.48, 0.58},
    {"a_ee", 0.33, 0.39},
    {"a_ei", 1.95, 2.05},
    {"r_NMDA", 0.20, 0.30},
}};

/// Reference parameter set with the eleven investigated parameters marked free.
inline LBParams default_params() {
  LBParams p;
  for (const auto& r : kFreeRanges) p.is_free[*field_index(r.name)] = true;
  return p;
}

/// Free parameters placed at the midpoints of their ranges.
inline LBParams midpoint_params() {
  LBParams p = default_params();
  for (const auto& r : kFreeRanges) p[r.name] = 0.5 * (r.lower + r.upper);
  return p;
}

/// Throws ConfigError if a free parameter lies outside its investigated range.
inline void validate_free_ranges(const LBParams& p) {
  for (const auto& r : kFreeRanges) {
    const double v = p[r.name];
    if (p.is_free[*field_index(r.name)] && (v < r.lower || v > r.upper))
      throw ConfigError("parameter '" + std::string(r.name) + "' outside its range");
  }
}

struct Connectivity {
  Eigen::MatrixXd u;

  std::size_t region_count() const noexcept { return static_cast<std::size_t>(u.rows()); }

  void validate() const {
    if (u.rows() != u.cols() || u.rows() == 0) throw ShapeError("connectivity must be a non-empty square matrix");
    const Eigen::Index n = u.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (u(i, i) != 0.0) throw DataError("connectivity diagonal must be zero");
      double row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!std::isfinite(u(i, j)) || u(i, j) < 0.0) throw DataError("connectivity weights must be finite and non-negative");
        if (u(i, j) != u(j, i)) throw DataError("connectivity must be symmetric");
        row += u(i, j);
      }
      // A single region has no neighbours; its coupling term is defined as zero.
      if (n > 1 && row <= 0.0) throw DataError("connectivity row " + std::to_string(i) + " has zero sum");
    }
  }
};

/// Symmetric distance-decay connectivity, u_ij = exp(-|i-j| / lambda).
inline Connectivity synthetic_connectivity(std::size_t n, std::optional<double> lambda = std::nullopt) {
  const double lam = lambda.value_or(static_cast<double>(n) / 4.0);
  Connectivity c{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j)
        c.u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            std::exp(-std::abs(static_cast<double>(i) - static_cast<double>(j)) / lam);
  return c;
}

inline Connectivity load_connectivity_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open connectivity file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw DataError("connectivity file '" + path + "': bad value '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Connectivity c{Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n)
      throw ShapeError("connectivity file '" + path + "' is not square");
    for (Eigen::Index j = 0; j < n; ++j) c.u(i, j) = rows[i][j];
  }
  c.validate();
  return c;
}

/// Packed state layout: [V_0..V_{N-1}, Z_0..Z_{N-1}, W_0..W_{N-1}].
using State = std::vector<double>;

/// Right-hand side of the coupled system with the row-normalized coupling
/// matrix precomputed.
class System {
 public:
  System(const LBParams& p, const Connectivity& conn) : p_(p), n_(conn.region_count()) {
    conn.validate();
    coupling_ = conn.u;
    for (Eigen::Index i = 0; i < coupling_.rows(); ++i) {
      const double s = coupling_.row(i).sum();
      if (s > 0) coupling_.row(i) /= s;
    }
    s_v_ = -2.0 / p.delta;
    s_na_ = -2.0 / p.delta_Na;
    s_k_ = -2.0 / p.delta_K;
    s_ca_ = -2.0 / p.delta_Ca;
    phi_over_tau_ = p.phi / p.tau_K;
    for (auto* a : {&qv_, &qz_, &m_na_, &m_k_, &m_ca_, &q_net_, &drive_}) a->resize(static_cast<Eigen::Index>(n_));
  }

  std::size_t regions() const noexcept { return n_; }
  std::size_t state_size() const noexcept { return 3 * n_; }

  void derivative(std::span<const double> x, std::span<double> dx) const {
    const LBParams& p = p_;
    const auto n = static_cast<Eigen::Index>(n_);
    const Eigen::Map<const Eigen::ArrayXd> V(x.data(), n), Z(x.data() + n, n), W(x.data() + 2 * n, n);
    Eigen::Map<Eigen::ArrayXd> dV(dx.data(), n), dZ(dx.data() + n, n), dW(dx.data() + 2 * n, n);
    // 0.5 (1 + tanh((x - T) / d)) written as 1 / (1 + exp(-2 (x - T) / d));
    // vectorised exp is much cheaper than scalar tanh and these gates dominate
    // run time.
    const auto gate = [](const auto& x, double T, double slope) { return (1.0 + ((x - T) * slope).exp()).inverse(); };
    qv_ = p.Q_Vmax * gate(V, p.V_T, s_v_);
    qz_ = p.Q_Zmax * gate(Z, p.Z_T, s_v_);
    m_na_ = gate(V, p.T_Na, s_na_);
    m_k_ = gate(V, p.T_K, s_k_);
    m_ca_ = gate(V, p.T_Ca, s_ca_);
    q_net_.matrix().noalias() = coupling_ * qv_.matrix();
    drive_ = (1.0 - p.c) * qv_ + p.c * q_net_;
    dV = -(p.g_Ca + p.r_NMDA * p.a_ee * drive_) * m_ca_ * (V - p.V_Ca) -
         (p.g_Na * m_na_ + p.a_ee * drive_) * (V - p.V_Na) - p.g_K * W * (V - p.V_K) - p.g_L * (V - p.V_L) -
         p.a_ie * Z * qz_ + p.a_ne * p.I_0;
    dZ = p.b * (p.a_ni * p.I_0 + p.a_ei * V * qv_);
    dW = phi_over_tau_ * (m_k_ - W);
  }

 private:
  LBParams p_;
  std::size_t n_;
  Eigen::MatrixXd coupling_;
  double s_v_, s_na_, s_k_, s_ca_, phi_over_tau_;
  mutable Eigen::ArrayXd qv_, qz_, m_na_, m_k_, m_ca_, q_net_, drive_;
};

inline State lb_derivative(const State& state, const LBParams& p, const Connectivity& conn) {
  System sys(p, conn);
  if (state.size() != sys.state_size()) throw ShapeError("lb_derivative: state size does not match region count");
  State d(state.size());
  sys.derivative(state, d);
  return d;
}

/// One classical fourth-order Runge-Kutta step, in place.
template <typename Rhs>
void rk4_step(const Rhs& rhs, std::span<double> x, double dt, std::array<std::vector<double>, 5>& scratch) {
  const std::size_t n = x.size();
  for (auto& s : scratch) s.resize(n);
  auto& [k1, k2, k3, k4, tmp] = scratch;
  rhs(std::span<const double>(x.data(), n), std::span<double>(k1));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  rhs(std::span<const double>(tmp), std::span<double>(k2));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  rhs(std::span<const double>(tmp), std::span<double>(k3));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
  rhs(std::span<const double>(tmp), std::span<double>(k4));
  for (std::size_t i = 0; i < n; ++i) x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

struct SimConfig {
  double duration_ms = 300000.0;
  double dt_ms = 0.1;
  double record_every_ms = 1.0;
};

/// Trajectories sampled every record interval; columns are time points.
struct RegionTimeSeries {
  std::vector<double> t;  // ms
  Eigen::MatrixXd V, Z, W;

  std::size_t regions() const noexcept { return static_cast<std::size_t>(V.rows()); }
  std::size_t samples() const noexcept { return t.size(); }

  /// Copy restricted to samples with t >= t_ms.
  RegionTimeSeries after(double t_ms) const {
    const auto first = static_cast<Eigen::Index>(std::lower_bound(t.begin(), t.end(), t_ms - 1e-9) - t.begin());
    const Eigen::Index count = static_cast<Eigen::Index>(t.size()) - first;
    RegionTimeSeries out;
    out.t.assign(t.begin() + first, t.end());
    out.V = V.rightCols(count);
    out.Z = Z.rightCols(count);
    out.W = W.rightCols(count);
    return out;
  }
};

/// Random initial state: V, Z uniform in [-0.2, 0.2], W uniform in [0, 0.3].
inline State random_initial_state(std::size_t regions, std::uint64_t seed) {
  Rng rng(seed);
  State s(3 * regions);
  for (std::size_t i = 0; i < regions; ++i) s[i] = uniform(rng, -0.2, 0.2);
  for (std::size_t i = 0; i < regions; ++i) s[regions + i] = uniform(rng, -0.2, 0.2);
  for (std::size_t i = 0; i < regions; ++i) s[2 * regions + i] = uniform(rng, 0.0, 0.3);
  return s;
}

inline RegionTimeSeries lb_simulate(const LBParams& p, const Connectivity& conn, const SimConfig& cfg, State init) {
  if (!(cfg.dt_ms > 0.0) || !(cfg.duration_ms > 0.0) || !(cfg.record_every_ms > 0.0))
    throw ConfigError("lb_simulate: duration, dt and record interval must be positive");
  System sys(p, conn);
  if (init.size() != sys.state_size()) throw ShapeError("lb_simulate: initial state size does not match region count");

  const auto steps = static_cast<std::size_t>(std::llround(cfg.duration_ms / cfg.dt_ms));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.record_every_ms / cfg.dt_ms)));
  const std::size_t n = sys.regions();
  const std::size_t records = steps / stride + 1;

  RegionTimeSeries ts;
  ts.t.reserve(records);
  ts.V.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(records));
  ts.Z.resizeLike(ts.V);
  ts.W.resizeLike(ts.V);

  auto record = [&](std::size_t col, double t) {
    ts.t.push_back(t);
    for (std::size_t i = 0; i < n; ++i) {
      ts.V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col)) = init[i];
      ts.Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col)) = init[n + i];
      ts.W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col)) = init[2 * n + i];
    }
  };

  const auto rhs = [&sys](std::span<const double> x, std::span<double> dx) { sys.derivative(x, dx); };
  std::array<std::vector<double>, 5> scratch;
  record(0, 0.0);
  std::size_t col = 1;
  for (std::size_t step = 1; step <= steps; ++step) {
    rk4_step(rhs, init, cfg.dt_ms, scratch);
    const double t = static_cast<double>(step) * cfg.dt_ms;
    for (double v : init)
      if (!std::isfinite(v))
        throw SimulationDivergedError(t, "lb_simulate: non-finite state at t = " + std::to_string(t) + " ms");
    if (step % stride == 0) record(col++, t);
  }
  return ts;
}

inline RegionTimeSeries lb_simulate(const LBParams& p, const Connectivity& conn, const SimConfig& cfg, std::uint64_t seed) {
  return lb_simulate(p, conn, cfg, random_initial_state(conn.region_count(), seed));
}

/// True iff the mean over regions of the excitatory voltage range (max - min)
/// strictly exceeds the threshold. Expects the transient already removed.
inline bool is_oscillatory(const RegionTimeSeries& ts, double amp_threshold = 0.05) {
  if (ts.V.rows() == 0 || ts.V.cols() == 0) return false;
  double total = 0.0;
  for (Eigen::Index i = 0; i < ts.V.rows(); ++i) total += ts.V.row(i).maxCoeff() - ts.V.row(i).minCoeff();
  return total / static_cast<double>(ts.V.rows()) > amp_threshold;
}

}  // namespace fixfit::lb
