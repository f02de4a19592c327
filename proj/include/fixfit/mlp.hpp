#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixfit/dataset.hpp"
#include "fixfit/errors.hpp"
#include "fixfit/rng.hpp"

namespace fixfit::nn {

inline constexpr int kWeightsFormatVersion = 1;

enum class Activation { tanh, relu, linear };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "linear";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Layer widths from input to output, one activation per non-input layer, and
/// the position (in layer_sizes) of the bottleneck.
struct MLPSpec {
  std::vector<std::size_t> layer_sizes;
  std::vector<Activation> activations;
  std::size_t bottleneck_index = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t latent_dim() const { return layer_sizes.at(bottleneck_index); }
  std::size_t weight_layers() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 3) throw ConfigError("mlp: need input, bottleneck and output layers");
    if (activations.size() != layer_sizes.size() - 1) throw ConfigError("mlp: one activation per non-input layer");
    for (auto w : layer_sizes)
      if (w == 0) throw ConfigError("mlp: zero-width layer");
    if (bottleneck_index == 0 || bottleneck_index + 1 >= layer_sizes.size())
      throw ConfigError("mlp: bottleneck must be an interior layer");
    for (std::size_t i = 1; i + 1 < layer_sizes.size(); ++i)
      if (layer_sizes[i] < layer_sizes[bottleneck_index])
        throw ConfigError("mlp: bottleneck must be the narrowest interior layer");
  }
};

/// Encoder widths, bottleneck width k, decoder widths; hidden layers share one
/// activation, bottleneck and output are linear.
inline MLPSpec bottleneck_spec(std::size_t inputs, const std::vector<std::size_t>& encoder, std::size_t k,
                               const std::vector<std::size_t>& decoder, std::size_t outputs, Activation hidden) {
  MLPSpec s;
  s.layer_sizes.push_back(inputs);
  for (auto w : encoder) s.layer_sizes.push_back(w), s.activations.push_back(hidden);
  s.layer_sizes.push_back(k);
  s.activations.push_back(Activation::linear);
  s.bottleneck_index = s.layer_sizes.size() - 1;
  for (auto w : decoder) s.layer_sizes.push_back(w), s.activations.push_back(hidden);
  s.layer_sizes.push_back(outputs);
  s.activations.push_back(Activation::linear);
  s.validate();
  return s;
}

inline MLPSpec kepler_spec(std::size_t k, std::size_t outputs = 100) {
  return bottleneck_spec(4, {14, 14}, k, {110, 110}, outputs, Activation::tanh);
}

inline MLPSpec lb_spec(std::size_t k, std::size_t inputs, std::size_t outputs, std::size_t encoder_width = 21,
                       std::size_t decoder_width = 3013) {
  return bottleneck_spec(inputs, {encoder_width, encoder_width}, k, {decoder_width}, outputs, Activation::relu);
}

struct MLPModel {
  MLPSpec spec;
  std::vector<Eigen::MatrixXd> W;  // out x in
  std::vector<Eigen::VectorXd> b;

  std::size_t layers() const noexcept { return W.size(); }
  std::size_t bottleneck_layer() const noexcept { return spec.bottleneck_index; }

  std::size_t parameter_count(std::size_t first, std::size_t last) const {
    std::size_t n = 0;
    for (std::size_t l = first; l < last; ++l) n += static_cast<std::size_t>(W[l].size() + b[l].size());
    return n;
  }
  std::size_t parameter_count() const { return parameter_count(0, layers()); }

  void check() const {
    spec.validate();
    if (W.size() != spec.weight_layers() || b.size() != W.size()) throw ShapeError("mlp: layer count mismatch");
    for (std::size_t l = 0; l < W.size(); ++l) {
      if (static_cast<std::size_t>(W[l].rows()) != spec.layer_sizes[l + 1] ||
          static_cast<std::size_t>(W[l].cols()) != spec.layer_sizes[l] ||
          static_cast<std::size_t>(b[l].size()) != spec.layer_sizes[l + 1])
        throw ShapeError("mlp: weight shapes disagree with spec at layer " + std::to_string(l));
      if (!W[l].allFinite() || !b[l].allFinite()) throw NumericalError("mlp: non-finite weights");
    }
  }
};

/// Glorot-uniform weights, zero biases.
inline MLPModel init_glorot(const MLPSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MLPModel m{spec, {}, {}};
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.layer_sizes[l]);
    const auto out = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = uniform(rng, -limit, limit);
    m.W.push_back(std::move(w));
    m.b.push_back(Eigen::VectorXd::Zero(out));
  }
  return m;
}

/// Activations of every layer in a range; column j is sample j.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> A;  // A[0] is the range input, A[i+1] the output of layer first+i
  std::size_t first = 0;
};

inline void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::tanh: z = z.array().tanh(); break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::linear: break;
  }
}

/// Runs layers [first, last) on column-major input (features x samples).
inline const Eigen::MatrixXd& forward_range(const MLPModel& m, std::size_t first, std::size_t last,
                                            const Eigen::MatrixXd& input, ForwardCache& cache) {
  if (static_cast<std::size_t>(input.rows()) != m.spec.layer_sizes[first])
    throw ShapeError("mlp: input width " + std::to_string(input.rows()) + " != " +
                     std::to_string(m.spec.layer_sizes[first]));
  cache.first = first;
  cache.A.resize(last - first + 1);
  cache.A[0] = input;
  for (std::size_t l = first; l < last; ++l) {
    auto& out = cache.A[l - first + 1];
    out.noalias() = m.W[l] * cache.A[l - first];
    out.colwise() += m.b[l];
    apply_activation(m.spec.activations[l], out);
  }
  return cache.A.back();
}

struct Gradients {
  std::vector<Eigen::MatrixXd> dW;  // indexed by absolute layer; empty outside the range
  std::vector<Eigen::VectorXd> db;
  Eigen::MatrixXd dX;               // gradient with respect to the range input
};

/// Reverse pass over the cached range given dLoss/dOutput (features x samples).
inline Gradients backward_range(const MLPModel& m, const ForwardCache& cache, const Eigen::MatrixXd& d_out,
                                bool weight_grads = true) {
  const std::size_t first = cache.first;
  const std::size_t last = first + cache.A.size() - 1;
  Gradients g;
  g.dW.resize(m.layers());
  g.db.resize(m.layers());
  Eigen::MatrixXd delta = d_out;
  for (std::size_t l = last; l-- > first;) {
    const auto& out = cache.A[l - first + 1];
    switch (m.spec.activations[l]) {
      case Activation::tanh: delta.array() *= 1.0 - out.array().square(); break;
      case Activation::relu: delta.array() *= (out.array() > 0.0).cast<double>(); break;
      case Activation::linear: break;
    }
    if (weight_grads) {
      g.dW[l].noalias() = delta * cache.A[l - first].transpose();
      g.db[l] = delta.rowwise().sum();
    }
    Eigen::MatrixXd prev;
    prev.noalias() = m.W[l].transpose() * delta;
    delta.swap(prev);
  }
  g.dX = std::move(delta);
  return g;
}

/// Row-sample convenience: forward over all layers, returning rows.
inline Eigen::MatrixXd forward(const MLPModel& m, const Eigen::MatrixXd& X) {
  ForwardCache cache;
  return forward_range(m, 0, m.layers(), X.transpose(), cache).transpose();
}

inline Eigen::VectorXd forward(const MLPModel& m, const Eigen::VectorXd& x) {
  ForwardCache cache;
  return forward_range(m, 0, m.layers(), x, cache).col(0);
}

/// Layers up to and including the bottleneck.
inline Eigen::MatrixXd encode(const MLPModel& m, const Eigen::MatrixXd& X) {
  ForwardCache cache;
  return forward_range(m, 0, m.bottleneck_layer(), X.transpose(), cache).transpose();
}

/// Layers after the bottleneck.
inline Eigen::MatrixXd decode(const MLPModel& m, const Eigen::MatrixXd& latent) {
  ForwardCache cache;
  return forward_range(m, m.bottleneck_layer(), m.layers(), latent.transpose(), cache).transpose();
}

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

/// Mean squared error over all entries, and its exact gradient. Rows are samples.
inline LossAndGrad mse_backward(const MLPModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& T) {
  if (X.rows() != T.rows() || static_cast<std::size_t>(T.cols()) != m.spec.output_dim())
    throw ShapeError("mse_backward: target shape mismatch");
  ForwardCache cache;
  const Eigen::MatrixXd& out = forward_range(m, 0, m.layers(), X.transpose(), cache);
  const Eigen::MatrixXd diff = out - T.transpose();
  const double denom = static_cast<double>(diff.size());
  LossAndGrad r;
  r.loss = diff.squaredNorm() / denom;
  r.grads = backward_range(m, cache, (2.0 / denom) * diff);
  r.grads.dX.transposeInPlace();
  return r;
}

// -------------------------------------------------------------------- Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> mW, vW;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;

  static AdamState zeros_like(const MLPModel& m) {
    AdamState s;
    for (std::size_t l = 0; l < m.layers(); ++l) {
      s.mW.push_back(Eigen::MatrixXd::Zero(m.W[l].rows(), m.W[l].cols()));
      s.vW.push_back(s.mW.back());
      s.mb.push_back(Eigen::VectorXd::Zero(m.b[l].size()));
      s.vb.push_back(s.mb.back());
    }
    return s;
  }
};

namespace detail {
template <typename P, typename G>
void adam_update(P& param, P& mom, P& vel, const G& grad, const AdamConfig& cfg, double c1, double c2) {
  mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * grad;
  vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  param.array() -= cfg.lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + cfg.eps);
}
}  // namespace detail

/// Bias-corrected Adam update of every layer with gradients present.
inline void adam_step(MLPModel& m, AdamState& s, const Gradients& g, const AdamConfig& cfg) {
  if (s.mW.size() != m.layers()) throw ShapeError("adam_step: state does not match model");
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t l = 0; l < m.layers(); ++l) {
    if (g.dW[l].size() == 0) continue;
    detail::adam_update(m.W[l], s.mW[l], s.vW[l], g.dW[l], cfg, c1, c2);
    detail::adam_update(m.b[l], s.mb[l], s.vb[l], g.db[l], cfg, c1, c2);
  }
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::size_t batch_size = 256;
  int max_epochs = 5000;
  int patience = 200;
  AdamConfig adam{};
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 0 || patience >= max_epochs) throw ConfigError("train: patience must be in [0, max_epochs)");
  }
};

struct TrainRecord {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  int best_epoch = 0;  // 1-based
  double best_val_mse = std::numeric_limits<double>::infinity();
  MLPModel best_model;
};

inline double mse(const MLPModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() == 0) return 0.0;
  return (forward(m, X) - Y).squaredNorm() / static_cast<double>(Y.size());
}

/// Mini-batch Adam on explicit train/validation matrices (rows = samples).
/// Stops once `patience` epochs pass without a new validation minimum and
/// returns the best-epoch weights.
inline TrainRecord train(MLPModel model, const Eigen::MatrixXd& X_train, const Eigen::MatrixXd& Y_train,
                         const Eigen::MatrixXd& X_val, const Eigen::MatrixXd& Y_val, const TrainConfig& cfg) {
  cfg.validate();
  model.check();
  if (static_cast<std::size_t>(X_train.cols()) != model.spec.input_dim() ||
      static_cast<std::size_t>(Y_train.cols()) != model.spec.output_dim() || X_train.rows() != Y_train.rows() ||
      X_val.cols() != X_train.cols() || Y_val.cols() != Y_train.cols() || X_val.rows() != Y_val.rows())
    throw ShapeError("train: dataset dimensions do not match the network");
  if (X_train.rows() == 0 || X_val.rows() == 0) throw DataError("train: need non-empty training and validation sets");

  // Column-major sample layout for the batch products.
  const Eigen::MatrixXd Xt = X_train.transpose();
  const Eigen::MatrixXd Yt = Y_train.transpose();
  const auto n = static_cast<std::size_t>(Xt.cols());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Rng rng(cfg.seed);
  AdamState adam = AdamState::zeros_like(model);
  TrainRecord rec;
  rec.best_model = model;
  ForwardCache cache;
  Eigen::MatrixXd xb, yb;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(order, rng);
    double sum_sq = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      xb.resize(Xt.rows(), static_cast<Eigen::Index>(len));
      yb.resize(Yt.rows(), static_cast<Eigen::Index>(len));
      for (std::size_t j = 0; j < len; ++j) {
        xb.col(static_cast<Eigen::Index>(j)) = Xt.col(static_cast<Eigen::Index>(order[start + j]));
        yb.col(static_cast<Eigen::Index>(j)) = Yt.col(static_cast<Eigen::Index>(order[start + j]));
      }
      const Eigen::MatrixXd& out = forward_range(model, 0, model.layers(), xb, cache);
      Eigen::MatrixXd diff = out - yb;
      const double sq = diff.squaredNorm();
      if (!std::isfinite(sq))
        throw TrainingDivergedError(epoch, "train: non-finite loss at epoch " + std::to_string(epoch));
      sum_sq += sq;
      diff *= 2.0 / static_cast<double>(diff.size());
      adam_step(model, adam, backward_range(model, cache, diff), cfg.adam);
    }
    const double train_mse = sum_sq / static_cast<double>(Yt.size());
    const double val_mse = mse(model, X_val, Y_val);
    if (!std::isfinite(val_mse))
      throw TrainingDivergedError(epoch, "train: non-finite validation loss at epoch " + std::to_string(epoch));
    rec.train_mse.push_back(train_mse);
    rec.val_mse.push_back(val_mse);
    if (val_mse < rec.best_val_mse) {
      rec.best_val_mse = val_mse;
      rec.best_epoch = epoch;
      rec.best_model = model;
    }
    if (epoch - rec.best_epoch >= cfg.patience) break;
  }
  return rec;
}

inline TrainRecord train(const MLPModel& model, const Dataset& ds, const TrainConfig& cfg) {
  return train(model, ds.X_train(), ds.Y_train(), ds.X_val(), ds.Y_val(), cfg);
}

// ---------------------------------------------------------------------- IO

inline nlohmann::json spec_to_json(const MLPSpec& s) {
  std::vector<std::string> acts;
  for (auto a : s.activations) acts.push_back(to_string(a));
  return {{"layer_sizes", s.layer_sizes}, {"activations", acts}, {"bottleneck_index", s.bottleneck_index}};
}

inline MLPSpec spec_from_json(const nlohmann::json& j) {
  MLPSpec s;
  s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(activation_from_string(a.get<std::string>()));
  s.bottleneck_index = j.at("bottleneck_index").get<std::size_t>();
  s.validate();
  return s;
}

inline nlohmann::json model_to_json(const MLPModel& m, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.layers(); ++l) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(m.W[l].size()));
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) w.push_back(m.W[l](r, c));
    std::vector<double> bias(m.b[l].data(), m.b[l].data() + m.b[l].size());
    layers.push_back({{"weights", w}, {"bias", bias}});
  }
  return {{"format_version", kWeightsFormatVersion}, {"spec", spec_to_json(m.spec)}, {"layers", layers}, {"meta", meta}};
}

inline MLPModel model_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kWeightsFormatVersion) throw DataError("unsupported weights format version");
  MLPModel m;
  m.spec = spec_from_json(j.at("spec"));
  const auto& layers = j.at("layers");
  if (layers.size() != m.spec.weight_layers()) throw ShapeError("weights file: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto rows = static_cast<Eigen::Index>(m.spec.layer_sizes[l + 1]);
    const auto cols = static_cast<Eigen::Index>(m.spec.layer_sizes[l]);
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto bias = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(rows * cols) || bias.size() != static_cast<std::size_t>(rows))
      throw ShapeError("weights file: layer " + std::to_string(l) + " has the wrong size");
    Eigen::MatrixXd W(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) W(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    m.W.push_back(std::move(W));
    m.b.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), rows));
  }
  m.check();
  return m;
}

inline void save_model(const MLPModel& m, const std::filesystem::path& path,
                       const nlohmann::json& meta = nlohmann::json::object()) {
  // Written beside the target and renamed, so an interrupted run never leaves a
  // truncated weights file behind for the resume check to trip over.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write weights file '" + path.string() + "'");
    out << model_to_json(m, meta).dump() << "\n";
    if (!out) throw DataError("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move weights into place at '" + path.string() + "'");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline MLPModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed weights file '" + path.string() + "': " + e.what());
  }
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_train_csv(const TrainRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "epoch,train_mse,val_mse\n";
  for (std::size_t i = 0; i < rec.val_mse.size(); ++i)
    out << (i + 1) << ',' << format_double(rec.train_mse[i]) << ',' << format_double(rec.val_mse[i]) << '\n';
}

}  // namespace fixfit::nn
