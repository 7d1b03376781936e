#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsonset/core.hpp"
#include "tsonset/ticc.hpp"

namespace tsonset {

struct Assignment {
  std::vector<int> labels;  // one cluster id per stacked window
  double switch_cost_beta = 0.0;
  int iteration = 0;
};

// ---------------------------------------------------------------------------
// E-step

/// Negative log-likelihood of every window under every model (windows x K).
inline Matrix cost_matrix(const StackedWindows& windows, const std::vector<ClusterModel>& models) {
  Matrix costs(windows.count(), static_cast<Eigen::Index>(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k)
    for (Eigen::Index t = 0; t < windows.count(); ++t)
      costs(t, static_cast<Eigen::Index>(k)) =
          -log_likelihood(windows.rows.row(t).transpose(), models[k]);
  return costs;
}

inline int count_switches(std::span<const int> labels) {
  int n = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] != labels[i - 1] ? 1 : 0;
  return n;
}

/// sum_t costs(t, labels[t]) + beta * (number of label switches).
inline double path_cost(const Matrix& costs, std::span<const int> labels, double beta) {
  double total = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t)
    total += costs(static_cast<Eigen::Index>(t), labels[t]);
  return total + beta * static_cast<double>(count_switches(labels));
}

/// Exact minimum-cost labelling with a flat switching penalty. Ties keep the
/// previous cluster, then go to the lower cluster id.
inline Assignment viterbi_assign(const Matrix& costs, double beta) {
  if (beta < 0.0) throw InputError("beta must be non-negative");
  const Eigen::Index n = costs.rows();
  const Eigen::Index k_count = costs.cols();
  if (k_count < 1) throw InputError("need at least one cluster");
  Assignment out;
  out.switch_cost_beta = beta;
  if (n == 0) return out;

  Matrix value(n, k_count);
  Eigen::MatrixXi back(n, k_count);
  value.row(0) = costs.row(0);
  back.row(0).setConstant(-1);
  for (Eigen::Index t = 1; t < n; ++t)
    for (Eigen::Index k = 0; k < k_count; ++k) {
      double best = value(t - 1, k);
      Eigen::Index from = k;
      for (Eigen::Index j = 0; j < k_count; ++j) {
        if (j == k) continue;
        const double candidate = value(t - 1, j) + beta;
        if (candidate < best) {
          best = candidate;
          from = j;
        }
      }
      value(t, k) = costs(t, k) + best;
      back(t, k) = static_cast<int>(from);
    }

  Eigen::Index last = 0;
  for (Eigen::Index k = 1; k < k_count; ++k)
    if (value(n - 1, k) < value(n - 1, last)) last = k;
  out.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    out.labels[static_cast<std::size_t>(t)] = static_cast<int>(last);
    if (t > 0) last = back(t, last);
  }
  return out;
}

inline Assignment viterbi_assign(const StackedWindows& windows,
                                 const std::vector<ClusterModel>& models, double beta) {
  return viterbi_assign(cost_matrix(windows, models), beta);
}

// ---------------------------------------------------------------------------
// Initialization: k-means++ seeding, Lloyd iterations, best of 20 restarts.

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct KMeansRun {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

inline KMeansRun kmeans_once(const Matrix& x, int k, std::mt19937_64& rng, int max_iter) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
  Vector nearest = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = unit_uniform(rng) * total;
      for (pick = 0; pick < n - 1; ++pick) {
        target -= nearest(pick);
        if (target < 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    }
    centers.row(c) = x.row(pick);
    nearest = nearest.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    Vector dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (x.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist(i) = best_d;
      if (run.labels[static_cast<std::size_t>(i)] != best) {
        run.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    // An empty cluster takes the point farthest from its center.
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int l : run.labels) ++sizes[static_cast<std::size_t>(l)];
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist(i) > dist(far) && sizes[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])] > 1) far = i;
      --sizes[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(far)])];
      run.labels[static_cast<std::size_t>(far)] = c;
      ++sizes[static_cast<std::size_t>(c)];
      dist(far) = 0.0;
      changed = true;
    }
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (int c = 0; c < k; ++c) centers.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    if (!changed) break;
  }
  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    run.inertia += (x.row(i) - centers.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
  return run;
}

}  // namespace detail

inline std::vector<int> kmeans_labels(const Matrix& points, int k, std::uint64_t seed,
                                      int restarts = 20) {
  const auto n = points.rows();
  if (k < 1) throw InputError("K must be at least 1");
  if (k > n)
    throw InputError("K=" + std::to_string(k) + " exceeds the number of windows " +
                     std::to_string(n));
  if (k == 1) return std::vector<int>(static_cast<std::size_t>(n), 0);
  std::mt19937_64 rng(seed);
  detail::KMeansRun best;
  for (int r = 0; r < restarts; ++r) {
    auto run = detail::kmeans_once(points, k, rng, 100);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return std::move(best.labels);
}

/// Euclidean k-means on the stacked windows.
inline Assignment initialize_assignment(const StackedWindows& windows, int k, std::uint64_t seed) {
  Assignment out;
  out.labels = kmeans_labels(windows.rows, k, seed);
  return out;
}

/// First and second moments of the windows averaged over a centred temporal
/// neighbourhood of `radius` windows: [mean(w), mean(vech(w w^T))].
inline Matrix local_moment_features(const StackedWindows& windows, int radius) {
  const Eigen::Index n = windows.count();
  const Eigen::Index d = windows.dim();
  Matrix raw(n, d + d * (d + 1) / 2);
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i) raw(t, k++) = windows.rows(t, i);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) raw(t, k++) = windows.rows(t, i) * windows.rows(t, j);
  }
  Matrix out(n, raw.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - radius);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, t + radius);
    out.row(t) = raw.middleRows(lo, hi - lo + 1).colwise().mean();
  }
  return out;
}

// ---------------------------------------------------------------------------
// EM

struct EmConfig {
  int k = 2;
  double beta = 10.0;
  GlassoConfig glasso;
  int max_em_iter = 100;
  std::uint64_t seed = 0;
  int moment_radius = 5;  // neighbourhood of the second initialization; < 0 disables it
};

struct EmResult {
  Assignment assignment;
  std::vector<ClusterModel> models;
  std::vector<double> objective_trace;  // clustering objective after each E-step
  bool converged = false;
  int n_iterations = 0;
  int k_final = 0;
  bool k_reduced = false;
  int reseeds = 0;
  std::string initializer;  // "kmeans" or "local_moments"
};

/// -sum log-likelihood + beta * switches + sum_k |lambda o Theta_k|_1.
inline double clustering_objective(const Matrix& costs, std::span<const int> labels, double beta,
                                   const std::vector<ClusterModel>& models,
                                   const GlassoConfig& cfg) {
  double penalty = 0.0;
  for (const auto& m : models)
    penalty += cfg.penalty(m.theta.rows()).cwiseProduct(m.theta.cwiseAbs()).sum();
  return path_cost(costs, labels, beta) + penalty;
}

namespace detail {

// The per-cluster part of the clustering objective is
//   (n_k / 2) (tr(S_k Theta) - log det Theta) + |lambda o Theta|_1 + const,
// so the graphical lasso on S_k is solved with the penalty scaled by 2 / n_k.
inline GlassoConfig cluster_config(const GlassoConfig& cfg, Eigen::Index dim, int n_assigned) {
  GlassoConfig scaled = cfg;
  scaled.mask = cfg.penalty(dim) * (2.0 / static_cast<double>(n_assigned));
  return scaled;
}

inline std::vector<std::vector<int>> members_by_cluster(std::span<const int> labels, int k) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
  for (std::size_t t = 0; t < labels.size(); ++t)
    members[static_cast<std::size_t>(labels[t])].push_back(static_cast<int>(t));
  return members;
}

}  // namespace detail

/// Alternates per-cluster block-Toeplitz graphical lasso fits with Viterbi
/// assignment, starting from `labels`, until the assignment stops changing.
inline EmResult em_run(const StackedWindows& windows, const EmConfig& cfg,
                       std::vector<int> labels) {
  cfg.glasso.validate();
  if (cfg.k < 1) throw InputError("K must be at least 1");
  if (cfg.beta < 0.0) throw InputError("beta must be non-negative");
  if (windows.count() < 1) throw InputError("no windows to cluster");
  if (cfg.max_em_iter < 1) throw InputError("max_em_iter must be positive");
  if (static_cast<Eigen::Index>(labels.size()) != windows.count())
    throw InputError("initial assignment length does not match the windows");
  for (int l : labels)
    if (l < 0 || l >= cfg.k) throw InputError("initial assignment has an out-of-range cluster");

  EmResult result;
  int k = cfg.k;
  int reseed_streak = 0;  // consecutive iterations that needed a reseed
  std::vector<ClusterModel> models;
  const Eigen::Index dim = windows.dim();

  for (int iter = 1; iter <= cfg.max_em_iter; ++iter) {
    auto members = detail::members_by_cluster(labels, k);

    // Empty clusters: reseed from the worst-explained windows. When Viterbi
    // keeps collapsing, the emptied slot alternates between clusters, so the
    // streak counts iterations with any reseed; the third drops the cluster.
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (!members[static_cast<std::size_t>(c)].empty()) continue;
      if (reseed_streak >= 2 && k > 1) {
        for (int& l : labels)
          if (l > c) --l;
        if (!models.empty()) models.erase(models.begin() + c);
        --k;
        result.k_reduced = true;
        members = detail::members_by_cluster(labels, k);
        c = -1;  // rescan with the renumbered clusters
        continue;
      }
      if (models.empty()) continue;
      const auto n = static_cast<std::size_t>(windows.count());
      std::vector<double> ll(n);
      for (std::size_t t = 0; t < n; ++t)
        ll[t] = log_likelihood(windows.rows.row(static_cast<Eigen::Index>(t)).transpose(),
                               models[static_cast<std::size_t>(labels[t])]);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return ll[a] < ll[b]; });
      const std::size_t want = (n + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
      std::vector<int> sizes(static_cast<std::size_t>(k), 0);
      for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
      std::size_t moved = 0;
      for (std::size_t t : order) {
        if (moved == want) break;
        const int from = labels[t];
        if (from == c || sizes[static_cast<std::size_t>(from)] <= 1) continue;
        --sizes[static_cast<std::size_t>(from)];
        labels[t] = c;
        ++sizes[static_cast<std::size_t>(c)];
        ++moved;
      }
      ++result.reseeds;
      reseeded = true;
      members = detail::members_by_cluster(labels, k);
    }
    reseed_streak = reseeded ? reseed_streak + 1 : 0;

    // M-step: independent problems, solved concurrently.
    std::vector<std::future<ClusterModel>> fits;
    for (int c = 0; c < k; ++c) {
      const auto& mem = members[static_cast<std::size_t>(c)];
      if (mem.empty()) throw InvariantError("empty cluster survived reseeding");
      fits.push_back(std::async(std::launch::async, [&windows, &cfg, &mem, dim] {
        const auto stats = empirical_stats(windows.rows, mem);
        return fit_cluster(*stats, detail::cluster_config(cfg.glasso, dim, stats->n),
                           windows.omega, windows.channels);
      }));
    }
    models.clear();
    for (auto& f : fits) models.push_back(f.get());

    // E-step.
    const Matrix costs = cost_matrix(windows, models);
    Assignment next = viterbi_assign(costs, cfg.beta);
    result.objective_trace.push_back(
        clustering_objective(costs, next.labels, cfg.beta, models, cfg.glasso));
    result.n_iterations = iter;
    const bool stable = next.labels == labels;
    labels = std::move(next.labels);
    if (stable) {
      result.converged = true;
      break;
    }
  }

  // Refresh assigned counts to the final labelling.
  for (auto& m : models) m.n_assigned = 0;
  for (int l : labels) ++models[static_cast<std::size_t>(l)].n_assigned;

  result.assignment.labels = std::move(labels);
  result.assignment.switch_cost_beta = cfg.beta;
  result.assignment.iteration = result.n_iterations;
  result.models = std::move(models);
  result.k_final = k;
  return result;
}

/// EM from two deterministic starts: k-means on the stacked windows, and
/// k-means on local moment features (which separates states that differ only
/// in covariance). The run with the lower final objective wins; ties keep the
/// plain k-means start.
inline EmResult em_fit(const StackedWindows& windows, const EmConfig& cfg) {
  if (windows.count() < 1) throw InputError("no windows to cluster");
  EmResult best = em_run(windows, cfg, initialize_assignment(windows, cfg.k, cfg.seed).labels);
  best.initializer = "kmeans";
  if (cfg.k > 1 && cfg.moment_radius >= 0) {
    EmResult alt = em_run(windows, cfg,
                          kmeans_labels(local_moment_features(windows, cfg.moment_radius), cfg.k,
                                        cfg.seed));
    alt.initializer = "local_moments";
    if (alt.objective_trace.back() < best.objective_trace.back()) best = std::move(alt);
  }
  return best;
}

/// Total log-likelihood of the windows under their assigned clusters.
inline double assigned_log_likelihood(const StackedWindows& windows, const EmResult& fit) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < windows.count(); ++t)
    total += log_likelihood(windows.rows.row(t).transpose(),
                            fit.models[static_cast<std::size_t>(fit.assignment.labels[static_cast<std::size_t>(t)])]);
  return total;
}

/// Free parameters: distinct nonzero precision entries plus the mean of each cluster.
inline int free_parameter_count(const std::vector<ClusterModel>& models) {
  int kappa = 0;
  for (const auto& m : models) kappa += free_precision_entries(m) + static_cast<int>(m.mean.size());
  return kappa;
}

struct BicEntry {
  int k = 0;
  double bic = 0.0;
  double log_likelihood = 0.0;
  int free_parameters = 0;
};

struct BicSelection {
  int best_k = 0;
  std::vector<BicEntry> table;
  std::vector<std::pair<int, std::string>> failures;
};

/// Fits every candidate K and picks the smallest BIC. A candidate whose fit
/// fails, or loses a cluster during EM, is excluded and reported.
inline BicSelection bic_select(const StackedWindows& windows, std::span<const int> candidates,
                               const EmConfig& base) {
  if (candidates.empty()) throw InputError("no candidate cluster counts");
  BicSelection sel;
  const double log_n = std::log(static_cast<double>(windows.count()));
  for (int k : candidates) {
    EmConfig cfg = base;
    cfg.k = k;
    try {
      const EmResult fit = em_fit(windows, cfg);
      if (fit.k_reduced) {
        sel.failures.emplace_back(k, "cluster count reduced to " + std::to_string(fit.k_final));
        continue;
      }
      BicEntry e;
      e.k = k;
      e.log_likelihood = assigned_log_likelihood(windows, fit);
      e.free_parameters = free_parameter_count(fit.models);
      e.bic = -2.0 * e.log_likelihood + static_cast<double>(e.free_parameters) * log_n;
      sel.table.push_back(e);
    } catch (const Error& err) {
      sel.failures.emplace_back(k, err.what());
    }
  }
  if (sel.table.empty()) throw NumericalError("every candidate cluster count failed");
  const auto best = std::min_element(sel.table.begin(), sel.table.end(),
                                     [](const BicEntry& a, const BicEntry& b) { return a.bic < b.bic; });
  sel.best_k = best->k;
  return sel;
}

// ---------------------------------------------------------------------------
// Segmentation and onsets

enum class State { normal, seizure, preictal, other };

inline std::string to_string(State s) {
  switch (s) {
    case State::normal: return "normal";
    case State::seizure: return "seizure";
    case State::preictal: return "preictal";
    case State::other: return "other";
  }
  return "other";
}

inline State state_from_string(const std::string& s) {
  if (s == "normal") return State::normal;
  if (s == "seizure") return State::seizure;
  if (s == "preictal") return State::preictal;
  if (s == "other") return State::other;
  throw InputError("unknown state '" + s + "'");
}

using StateMap = std::map<int, State>;

/// Orders clusters by the mean of their mean vector: lowest is normal, highest
/// is seizure, anything between is preictal (K = 3) or other (K > 3).
inline StateMap default_semantics(const std::vector<ClusterModel>& models) {
  std::vector<int> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return models[static_cast<std::size_t>(a)].mean.mean() <
           models[static_cast<std::size_t>(b)].mean.mean();
  });
  StateMap map;
  for (std::size_t r = 0; r < order.size(); ++r) {
    State s = State::other;
    if (r == 0) s = State::normal;
    else if (r + 1 == order.size()) s = State::seizure;
    else if (order.size() == 3) s = State::preictal;
    map[order[r]] = s;
  }
  return map;
}

/// Window labels attributed to epochs: window t labels epoch t + omega - 1 and
/// the first omega - 1 epochs inherit the first window's label.
inline std::vector<int> epoch_labels(std::span<const int> window_labels, int omega) {
  if (window_labels.empty()) throw InputError("empty assignment");
  if (omega < 1) throw InputError("omega must be positive");
  std::vector<int> out(static_cast<std::size_t>(omega - 1), window_labels.front());
  out.insert(out.end(), window_labels.begin(), window_labels.end());
  return out;
}

struct Subsequence {
  int cluster = 0;
  int start_epoch = 0;
  int end_epoch = 0;  // inclusive
  bool operator==(const Subsequence&) const = default;
};

struct Transition {
  int from_cluster = 0;
  int to_cluster = 0;
  int epoch = 0;
  double time_s = 0.0;
  std::string type;  // SO, SPO, seizure_start, offset, transition
};

struct Segmentation {
  std::vector<int> epoch_labels;
  std::vector<Subsequence> subsequences;
  std::vector<Transition> onsets;
  StateMap semantics;
};

inline std::vector<Subsequence> run_length_encode(std::span<const int> labels) {
  std::vector<Subsequence> runs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (runs.empty() || runs.back().cluster != labels[i])
      runs.push_back({labels[i], static_cast<int>(i), static_cast<int>(i)});
    else
      runs.back().end_epoch = static_cast<int>(i);
  }
  return runs;
}

inline std::vector<int> run_length_decode(std::span<const Subsequence> runs) {
  std::vector<int> labels;
  for (const auto& r : runs)
    labels.insert(labels.end(), static_cast<std::size_t>(r.end_epoch - r.start_epoch + 1), r.cluster);
  return labels;
}

inline std::string transition_type(State from, State to) {
  if (from == State::normal && to == State::seizure) return "SO";
  if (from == State::normal && to == State::preictal) return "SPO";
  if (from == State::preictal && to == State::seizure) return "seizure_start";
  if (from == State::seizure) return "offset";
  return "transition";
}

/// Run-length encodes the epoch-attributed labels and tags every boundary.
inline Segmentation extract_onsets(std::span<const int> window_labels, int omega, double stride_s,
                                   const StateMap& semantics) {
  Segmentation seg;
  seg.epoch_labels = epoch_labels(window_labels, omega);
  seg.semantics = semantics;
  for (int l : seg.epoch_labels)
    if (!semantics.contains(l))
      throw InputError("cluster " + std::to_string(l) + " has no state semantics");
  seg.subsequences = run_length_encode(seg.epoch_labels);
  for (std::size_t r = 1; r < seg.subsequences.size(); ++r) {
    const auto& prev = seg.subsequences[r - 1];
    const auto& cur = seg.subsequences[r];
    Transition t;
    t.from_cluster = prev.cluster;
    t.to_cluster = cur.cluster;
    t.epoch = cur.start_epoch;
    t.time_s = static_cast<double>(cur.start_epoch) * stride_s;
    t.type = transition_type(semantics.at(prev.cluster), semantics.at(cur.cluster));
    seg.onsets.push_back(std::move(t));
  }
  return seg;
}

}  // namespace tsonset
