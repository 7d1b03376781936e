#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tsonset/core.hpp"
#include "tsonset/io.hpp"
#include "tsonset/spectral.hpp"

namespace tsonset {

struct ClassifierShape {
  int bins = 0;             // F, spectral bins per node
  int embed = 8;            // S, steps of the per-channel embedding
  int hidden = 16;          // H, recurrent width
  int diffusion_steps = 2;  // K_diff
};

/// One recurrent gate. Row 0 of `weight` multiplies the scalar input; rows
/// 1..H multiply the hidden state (or reset-gated hidden state for the
/// candidate).
struct GruGate {
  Matrix weight;  // (H + 1) x H
  RowVector bias; // H
};

struct ClassifierParams {
  ClassifierShape shape;
  Vector theta;      // diffusion mixing weights, K_diff + 1
  Matrix w_conv;     // F x S
  RowVector b_conv;  // S
  GruGate update;
  GruGate reset;
  GruGate candidate;
  Matrix w_out;      // H x 2
  RowVector b_out;   // 2

  static ClassifierParams zeros(const ClassifierShape& s) {
    if (s.bins < 1 || s.embed < 1 || s.hidden < 1 || s.diffusion_steps < 0)
      throw InputError("invalid classifier shape");
    ClassifierParams p;
    p.shape = s;
    p.theta = Vector::Zero(s.diffusion_steps + 1);
    p.w_conv = Matrix::Zero(s.bins, s.embed);
    p.b_conv = RowVector::Zero(s.embed);
    for (GruGate* g : {&p.update, &p.reset, &p.candidate}) {
      g->weight = Matrix::Zero(s.hidden + 1, s.hidden);
      g->bias = RowVector::Zero(s.hidden);
    }
    p.w_out = Matrix::Zero(s.hidden, 2);
    p.b_out = RowVector::Zero(2);
    return p;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for_each_block([&](auto& block) { n += static_cast<std::size_t>(block.size()); });
    return n;
  }

  /// Visits every parameter block in a fixed order.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(theta);
    fn(w_conv);
    fn(b_conv);
    for (GruGate* g : {&update, &reset, &candidate}) {
      fn(g->weight);
      fn(g->bias);
    }
    fn(w_out);
    fn(b_out);
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<ClassifierParams*>(this)->for_each_block(
        [&](auto& block) { fn(static_cast<const std::decay_t<decltype(block)>&>(block)); });
  }

  Vector flatten() const {
    Vector out(static_cast<Eigen::Index>(size()));
    Eigen::Index pos = 0;
    for_each_block([&](const auto& block) {
      for (Eigen::Index i = 0; i < block.size(); ++i) out(pos++) = block.data()[i];
    });
    return out;
  }

  void assign(const Vector& flat) {
    if (flat.size() != static_cast<Eigen::Index>(size()))
      throw InvariantError("parameter vector has the wrong length");
    Eigen::Index pos = 0;
    for_each_block([&](auto& block) {
      for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = flat(pos++);
    });
  }

  bool all_finite() const { return flatten().allFinite(); }
};

namespace detail {

// Uniform in [-a, a] from raw engine bits; std distributions are implementation-defined,
// this keeps initialization identical across standard libraries.
inline double uniform_symmetric(std::mt19937_64& rng, double a) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * a;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

/// Small uniform initialization scaled by fan-in, deterministic in `seed`.
inline ClassifierParams init_params(const ClassifierShape& s, std::uint64_t seed) {
  ClassifierParams p = ClassifierParams::zeros(s);
  std::mt19937_64 rng(seed);
  p.theta.setConstant(1.0 / static_cast<double>(s.diffusion_steps + 1));
  const double conv_scale = 1.0 / std::sqrt(static_cast<double>(s.bins));
  for (Eigen::Index i = 0; i < p.w_conv.size(); ++i)
    p.w_conv.data()[i] = detail::uniform_symmetric(rng, conv_scale);
  const double rec_scale = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  for (GruGate* g : {&p.update, &p.reset, &p.candidate})
    for (Eigen::Index i = 0; i < g->weight.size(); ++i)
      g->weight.data()[i] = detail::uniform_symmetric(rng, rec_scale);
  for (Eigen::Index i = 0; i < p.w_out.size(); ++i)
    p.w_out.data()[i] = detail::uniform_symmetric(rng, rec_scale);
  return p;
}

// ---------------------------------------------------------------------------
// Forward operations

/// Random-walk transition matrix D^-1 V of an adjacency with positive row sums.
inline Matrix transition_matrix(const Matrix& adjacency) {
  const Vector degree = adjacency.rowwise().sum();
  if ((degree.array() <= 0.0).any())
    throw InvariantError("adjacency has a node with zero degree");
  return degree.cwiseInverse().asDiagonal() * adjacency;
}

/// Diffusion terms (D^-1 V)^k X for k = 0..steps.
inline std::vector<Matrix> diffusion_terms(const Matrix& adjacency, const Matrix& signal,
                                           int steps) {
  const Matrix walk = transition_matrix(adjacency);
  std::vector<Matrix> terms;
  terms.reserve(static_cast<std::size_t>(steps) + 1);
  terms.push_back(signal);
  for (int k = 1; k <= steps; ++k) terms.push_back(walk * terms.back());
  return terms;
}

/// sum_k theta_k (D^-1 V)^k X.
inline Matrix diffusion_propagate(const Matrix& adjacency, const Matrix& signal,
                                  const Vector& theta) {
  if (theta.size() < 1) throw InputError("theta needs at least one entry");
  const auto terms = diffusion_terms(adjacency, signal, static_cast<int>(theta.size()) - 1);
  Matrix out = Matrix::Zero(signal.rows(), signal.cols());
  for (std::size_t k = 0; k < terms.size(); ++k) out += theta(static_cast<Eigen::Index>(k)) * terms[k];
  return out;
}

inline Matrix diffusion_propagate(const EpochGraph& g, const Vector& theta) {
  return diffusion_propagate(g.adjacency, g.nodes.features, theta);
}

/// ReLU(diffused features * W_conv + b_conv): channels x S.
inline Matrix spatial_encode(const EpochGraph& g, const ClassifierParams& p) {
  if (g.nodes.bins() != p.shape.bins) throw InputError("feature bins do not match the model");
  const Matrix pre = (diffusion_propagate(g, p.theta) * p.w_conv).rowwise() + p.b_conv;
  return pre.cwiseMax(0.0);
}

namespace detail {

struct GruStep {
  double x = 0.0;
  RowVector h_prev, z, r, n;
};

inline RowVector gru_step(const ClassifierParams& p, double x, const RowVector& h,
                          GruStep* cache) {
  const Eigen::Index hidden = p.shape.hidden;
  auto input_row = [](const GruGate& g) { return g.weight.row(0); };
  auto rec_block = [hidden](const GruGate& g) { return g.weight.bottomRows(hidden); };

  const RowVector z = (x * input_row(p.update) + h * rec_block(p.update) + p.update.bias)
                          .unaryExpr([](double v) { return sigmoid(v); });
  const RowVector r = (x * input_row(p.reset) + h * rec_block(p.reset) + p.reset.bias)
                          .unaryExpr([](double v) { return sigmoid(v); });
  const RowVector rh = r.cwiseProduct(h);
  const RowVector n = (x * input_row(p.candidate) + rh * rec_block(p.candidate) + p.candidate.bias)
                          .array()
                          .tanh();
  RowVector next = (1.0 - z.array()) * n.array() + z.array() * h.array();
  if (cache) *cache = GruStep{x, h, z, r, n};
  return next;
}

inline RowVector softmax2(const RowVector& logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp();
  return e / e.sum();
}

}  // namespace detail

/// Runs the recurrent unit over each channel's S-step embedding (h_0 = 0) and
/// maps the final state through a 2-way softmax. Column 1 is the seizure class.
inline Matrix temporal_encode(const Matrix& z_spatial, const ClassifierParams& p) {
  if (z_spatial.cols() != p.shape.embed) throw InputError("embedding length does not match");
  Matrix probs(z_spatial.rows(), 2);
  for (Eigen::Index c = 0; c < z_spatial.rows(); ++c) {
    RowVector h = RowVector::Zero(p.shape.hidden);
    for (Eigen::Index s = 0; s < z_spatial.cols(); ++s)
      h = detail::gru_step(p, z_spatial(c, s), h, nullptr);
    probs.row(c) = detail::softmax2(h * p.w_out + p.b_out);
  }
  return probs;
}

inline Matrix channel_probabilities(const EpochGraph& g, const ClassifierParams& p) {
  return temporal_encode(spatial_encode(g, p), p);
}

/// Channel with the largest seizure probability; ties go to the lowest index.
inline Eigen::Index argmax_channel(const Matrix& channel_probs) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < channel_probs.rows(); ++c)
    if (channel_probs(c, 1) > channel_probs(best, 1)) best = c;
  return best;
}

/// Binary cross-entropy on the max-pooled seizure probability.
inline double maxpool_bce_loss(const Matrix& channel_probs, int label) {
  if (label != 0 && label != 1) throw InputError("label must be 0 or 1");
  const double z = channel_probs(argmax_channel(channel_probs), 1);
  return label == 1 ? -std::log(z) : -std::log(1.0 - z);
}

// ---------------------------------------------------------------------------
// Backward pass

/// Loss of one labelled epoch; accumulates d(loss)/d(params) into `grad`.
/// Gradient flows only through the max-pooled channel.
inline double loss_and_gradient(const EpochGraph& g, int label, const ClassifierParams& p,
                                ClassifierParams& grad) {
  const Eigen::Index hidden = p.shape.hidden;
  const Eigen::Index steps = p.shape.embed;

  const auto terms = diffusion_terms(g.adjacency, g.nodes.features, p.shape.diffusion_steps);
  Matrix diffused = Matrix::Zero(g.nodes.features.rows(), g.nodes.features.cols());
  for (std::size_t k = 0; k < terms.size(); ++k) diffused += p.theta(static_cast<Eigen::Index>(k)) * terms[k];
  const Matrix pre = (diffused * p.w_conv).rowwise() + p.b_conv;
  const Matrix z_spatial = pre.cwiseMax(0.0);

  const Matrix probs = temporal_encode(z_spatial, p);
  const Eigen::Index c_max = argmax_channel(probs);
  const double z_max = probs(c_max, 1);
  const double loss = label == 1 ? -std::log(z_max) : -std::log(1.0 - z_max);

  // Re-run the winning channel with caches.
  std::vector<detail::GruStep> cache(static_cast<std::size_t>(steps));
  RowVector h = RowVector::Zero(hidden);
  for (Eigen::Index s = 0; s < steps; ++s)
    h = detail::gru_step(p, z_spatial(c_max, s), h, &cache[static_cast<std::size_t>(s)]);
  const RowVector out_probs = detail::softmax2(h * p.w_out + p.b_out);

  const double dz = label == 1 ? -1.0 / z_max : 1.0 / (1.0 - z_max);
  RowVector e1(2);
  e1 << 0.0, 1.0;
  const RowVector d_logits = dz * out_probs(1) * (e1 - out_probs);
  grad.w_out += h.transpose() * d_logits;
  grad.b_out += d_logits;
  RowVector dh = d_logits * p.w_out.transpose();

  RowVector dx_seq = RowVector::Zero(steps);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const auto& st = cache[static_cast<std::size_t>(s)];
    const RowVector dn = dh.cwiseProduct((1.0 - st.z.array()).matrix());
    const RowVector dzg = dh.cwiseProduct(st.h_prev - st.n);
    RowVector dh_prev = dh.cwiseProduct(st.z);

    const RowVector da_n = dn.cwiseProduct((1.0 - st.n.array().square()).matrix());
    const RowVector rh = st.r.cwiseProduct(st.h_prev);
    grad.candidate.weight.row(0) += st.x * da_n;
    grad.candidate.weight.bottomRows(hidden) += rh.transpose() * da_n;
    grad.candidate.bias += da_n;
    const RowVector d_rh = da_n * p.candidate.weight.bottomRows(hidden).transpose();
    const RowVector dr = d_rh.cwiseProduct(st.h_prev);
    dh_prev += d_rh.cwiseProduct(st.r);

    const RowVector da_r = dr.array() * st.r.array() * (1.0 - st.r.array());
    grad.reset.weight.row(0) += st.x * da_r;
    grad.reset.weight.bottomRows(hidden) += st.h_prev.transpose() * da_r;
    grad.reset.bias += da_r;
    dh_prev += da_r * p.reset.weight.bottomRows(hidden).transpose();

    const RowVector da_z = dzg.array() * st.z.array() * (1.0 - st.z.array());
    grad.update.weight.row(0) += st.x * da_z;
    grad.update.weight.bottomRows(hidden) += st.h_prev.transpose() * da_z;
    grad.update.bias += da_z;
    dh_prev += da_z * p.update.weight.bottomRows(hidden).transpose();

    dx_seq(s) = da_z.dot(p.update.weight.row(0)) + da_r.dot(p.reset.weight.row(0)) +
                da_n.dot(p.candidate.weight.row(0));
    dh = dh_prev;
  }

  // Only the winning channel's row of the spatial embedding receives gradient.
  RowVector d_pre = dx_seq;
  for (Eigen::Index s = 0; s < steps; ++s)
    if (pre(c_max, s) <= 0.0) d_pre(s) = 0.0;
  grad.w_conv += diffused.row(c_max).transpose() * d_pre;
  grad.b_conv += d_pre;
  const RowVector d_diffused_row = d_pre * p.w_conv.transpose();
  for (std::size_t k = 0; k < terms.size(); ++k)
    grad.theta(static_cast<Eigen::Index>(k)) += terms[k].row(c_max).dot(d_diffused_row);

  return loss;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;  // stop after this many evaluations without improvement
  std::uint64_t seed = 0;
};

struct TrainResult {
  ClassifierParams params;
  std::vector<double> loss_trace;  // mean training loss after each pass
  int epochs_run = 0;
  bool early_stopped = false;
};

inline double mean_loss(const std::vector<EpochGraph>& graphs, std::span<const int> labels,
                        const ClassifierParams& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    total += maxpool_bce_loss(channel_probabilities(graphs[i], p), labels[i]);
  return total / static_cast<double>(graphs.size());
}

/// Fraction of epochs where (max-pooled seizure probability >= 0.5) matches the label.
inline double training_accuracy(const std::vector<EpochGraph>& graphs,
                                std::span<const int> labels, const ClassifierParams& p) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const Matrix probs = channel_probabilities(graphs[i], p);
    const int pred = probs(argmax_channel(probs), 1) >= 0.5 ? 1 : 0;
    hits += pred == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(graphs.size());
}

/// Mini-batch gradient descent on the mean max-pooled BCE. Batch gradients are
/// summed in example order, so a run is a pure function of its inputs and seed.
inline TrainResult train(const std::vector<EpochGraph>& graphs, std::span<const int> labels,
                         const ClassifierShape& shape, const TrainConfig& cfg) {
  if (graphs.empty() || graphs.size() != labels.size())
    throw InputError("training needs one label per epoch graph");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives + negatives != static_cast<std::ptrdiff_t>(labels.size()))
    throw InputError("training labels must be 0 or 1");
  if (positives == 0 || negatives == 0)
    throw InputError("training set needs examples of both classes");
  if (cfg.batch_size < 1 || cfg.max_epochs < 0 || cfg.learning_rate < 0.0)
    throw InputError("invalid training hyperparameters");

  TrainResult result;
  result.params = init_params(shape, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ClassifierParams grad = ClassifierParams::zeros(shape);
      for (std::size_t b = start; b < stop; ++b)
        loss_and_gradient(graphs[order[b]], labels[order[b]], result.params, grad);
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      result.params.assign(result.params.flatten() - step * grad.flatten());
    }
    if (!result.params.all_finite()) throw NumericalError("classifier parameters diverged");
    const double loss = mean_loss(graphs, labels, result.params);
    result.loss_trace.push_back(loss);
    result.epochs_run = epoch + 1;
    if (loss < best - 1e-12) {
      best = loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

inline constexpr double kLogitClamp = 1e-6;

/// Per-channel seizure probabilities for every epoch (epochs x channels),
/// clamped to [1e-6, 1 - 1e-6].
inline Matrix emit_logits(const ClassifierParams& p, const std::vector<EpochGraph>& graphs) {
  if (graphs.empty()) throw InputError("no epochs to score");
  Matrix out(static_cast<Eigen::Index>(graphs.size()), graphs.front().nodes.channels());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const Matrix probs = channel_probabilities(graphs[i], p);
    if (probs.rows() != out.cols()) throw InputError("channel count changes across epochs");
    out.row(static_cast<Eigen::Index>(i)) =
        probs.col(1).transpose().cwiseMax(kLogitClamp).cwiseMin(1.0 - kLogitClamp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: one matrix file per block plus a manifest.

inline void save_params(const std::filesystem::path& dir, const ClassifierParams& p,
                        const nlohmann::json& hyper = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  io::write_matrix(dir / "theta", p.theta, "theta");
  io::write_matrix(dir / "w_conv", p.w_conv, "w_conv");
  io::write_matrix(dir / "b_conv", p.b_conv, "b_conv");
  io::write_matrix(dir / "gru_update_w", p.update.weight, "gru_update_w");
  io::write_matrix(dir / "gru_update_b", p.update.bias, "gru_update_b");
  io::write_matrix(dir / "gru_reset_w", p.reset.weight, "gru_reset_w");
  io::write_matrix(dir / "gru_reset_b", p.reset.bias, "gru_reset_b");
  io::write_matrix(dir / "gru_candidate_w", p.candidate.weight, "gru_candidate_w");
  io::write_matrix(dir / "gru_candidate_b", p.candidate.bias, "gru_candidate_b");
  io::write_matrix(dir / "w_out", p.w_out, "w_out");
  io::write_matrix(dir / "b_out", p.b_out, "b_out");
  nlohmann::json manifest = {{"bins", p.shape.bins},
                             {"embed", p.shape.embed},
                             {"hidden", p.shape.hidden},
                             {"diffusion_steps", p.shape.diffusion_steps},
                             {"hyperparameters", hyper}};
  io::write_json(dir / "manifest.json", manifest);
}

inline ClassifierParams load_params(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  ClassifierShape shape;
  try {
    shape.bins = manifest.at("bins").get<int>();
    shape.embed = manifest.at("embed").get<int>();
    shape.hidden = manifest.at("hidden").get<int>();
    shape.diffusion_steps = manifest.at("diffusion_steps").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError((dir / "manifest.json").string() + ": " + e.what());
  }
  ClassifierParams p = ClassifierParams::zeros(shape);
  auto load = [&](const char* name, auto& block) {
    const Matrix m = io::read_matrix(dir / name);
    if (m.rows() != block.rows() || m.cols() != block.cols())
      throw InputError((dir / name).string() + ": shape does not match manifest");
    block = m;
  };
  load("theta", p.theta);
  load("w_conv", p.w_conv);
  load("b_conv", p.b_conv);
  load("gru_update_w", p.update.weight);
  load("gru_update_b", p.update.bias);
  load("gru_reset_w", p.reset.weight);
  load("gru_reset_b", p.reset.bias);
  load("gru_candidate_w", p.candidate.weight);
  load("gru_candidate_b", p.candidate.bias);
  load("w_out", p.w_out);
  load("b_out", p.b_out);
  return p;
}

}  // namespace tsonset
