#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tsonset/core.hpp"

namespace tsonset::eval {

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline std::vector<int> compact(std::span<const int> labels, int& n_classes) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = ids.emplace(labels[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  n_classes = static_cast<int>(ids.size());
  return out;
}

inline Eigen::MatrixXi contingency(std::span<const int> a, std::span<const int> b) {
  int ka = 0;
  int kb = 0;
  const auto ca = compact(a, ka);
  const auto cb = compact(b, kb);
  Eigen::MatrixXi table = Eigen::MatrixXi::Zero(ka, kb);
  for (std::size_t i = 0; i < ca.size(); ++i) ++table(ca[i], cb[i]);
  return table;
}

inline void check_lengths(std::span<const int> a, std::span<const int> b, std::size_t min_len) {
  if (a.size() != b.size())
    throw InputError("label sequences differ in length: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  if (a.size() < min_len)
    throw InputError("label sequences need at least " + std::to_string(min_len) + " entries");
}

inline double entropy_of(const Eigen::VectorXi& counts, double n) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i)
    if (counts(i) > 0) {
      const double p = counts(i) / n;
      h -= p * std::log(p);
    }
  return h;
}

inline double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace detail

/// Normalized mutual information with geometric-mean normalization and natural logs.
inline double nmi(std::span<const int> truth, std::span<const int> pred) {
  detail::check_lengths(truth, pred, 1);
  const Eigen::MatrixXi table = detail::contingency(truth, pred);
  const double n = static_cast<double>(truth.size());
  const Eigen::VectorXi rows = table.rowwise().sum();
  const Eigen::VectorXi cols = table.colwise().sum().transpose();
  const double hu = detail::entropy_of(rows, n);
  const double hv = detail::entropy_of(cols, n);
  if (rows.size() == 1 && cols.size() == 1) return 1.0;
  if (hu == 0.0 || hv == 0.0) return 0.0;
  double mi = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j)
      if (table(i, j) > 0) {
        const double nij = table(i, j);
        mi += nij / n * std::log(n * nij / (static_cast<double>(rows(i)) * cols(j)));
      }
  return std::clamp(mi / std::sqrt(hu * hv), 0.0, 1.0);
}

/// Adjusted Rand index from the contingency table; 1 when the expected and
/// maximum indices coincide (e.g. both labelings trivial).
inline double ari(std::span<const int> truth, std::span<const int> pred) {
  detail::check_lengths(truth, pred, 2);
  const Eigen::MatrixXi table = detail::contingency(truth, pred);
  const double n = static_cast<double>(truth.size());
  double sum_ij = 0.0;
  for (Eigen::Index i = 0; i < table.size(); ++i) sum_ij += detail::choose2(table.data()[i]);
  double sum_a = 0.0;
  double sum_b = 0.0;
  const Eigen::VectorXi rows = table.rowwise().sum();
  const Eigen::VectorXi cols = table.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < rows.size(); ++i) sum_a += detail::choose2(rows(i));
  for (Eigen::Index j = 0; j < cols.size(); ++j) sum_b += detail::choose2(cols(j));
  const double expected = sum_a * sum_b / detail::choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

/// K x K counts, rows = truth label, columns = predicted label.
inline Eigen::MatrixXi confusion(std::span<const int> truth, std::span<const int> pred, int k) {
  detail::check_lengths(truth, pred, 1);
  if (k < 1) throw InputError("K must be positive");
  Eigen::MatrixXi table = Eigen::MatrixXi::Zero(k, k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k)
      throw InputError("label outside [0, " + std::to_string(k) + ") at index " + std::to_string(i));
    ++table(truth[i], pred[i]);
  }
  return table;
}

namespace detail {

/// Maximum-weight perfect matching on a square matrix (Hungarian algorithm,
/// potentials form). Returns column assigned to each row.
inline std::vector<int> hungarian_max(const Eigen::MatrixXd& weight) {
  const int n = static_cast<int>(weight.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weight(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Best accuracy over one-to-one relabelings of the predicted clusters.
/// Exhaustive permutation search for K <= 4, Hungarian matching otherwise.
inline double acc_matched(std::span<const int> truth, std::span<const int> pred, int k) {
  const Eigen::MatrixXi table = confusion(truth, pred, k);
  const double n = static_cast<double>(truth.size());
  long best = 0;
  if (k <= 4) {
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      long hits = 0;
      for (int j = 0; j < k; ++j) hits += table(perm[static_cast<std::size_t>(j)], j);
      best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    const auto match = detail::hungarian_max(table.cast<double>());
    for (int i = 0; i < k; ++i) best += table(i, match[static_cast<std::size_t>(i)]);
  }
  return static_cast<double>(best) / n;
}

struct MetricsReport {
  double nmi = 0.0;
  double ari = 0.0;
  double acc = 0.0;
  Eigen::MatrixXi confusion;
};

/// All three metrics; K covers both label ranges.
inline MetricsReport evaluate(std::span<const int> truth, std::span<const int> pred) {
  detail::check_lengths(truth, pred, 2);
  const int k = 1 + std::max(*std::max_element(truth.begin(), truth.end()),
                             *std::max_element(pred.begin(), pred.end()));
  MetricsReport r;
  r.nmi = nmi(truth, pred);
  r.ari = ari(truth, pred);
  r.acc = acc_matched(truth, pred, k);
  r.confusion = confusion(truth, pred, k);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic ground truth

struct Segment {
  int state = 0;
  int length = 0;
};

struct SyntheticSpec {
  int k = 2;
  int omega_true = 1;
  int channels = 1;
  std::vector<Matrix> precisions;  // (omega_true * C) square, one per state
  std::vector<Segment> segments;
  std::uint64_t seed = 0;

  int total_length() const {
    int n = 0;
    for (const auto& s : segments) n += s.length;
    return n;
  }
};

struct SyntheticData {
  Matrix series;                   // total_length x C
  std::vector<int> truth;          // state per row
  std::vector<int> change_points;  // first row of every segment after the first
};

namespace detail {

/// Standard normal pair by Box-Muller over raw engine bits.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    while (u1 <= 0.0);
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace detail

inline bool is_positive_definite(const Matrix& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

/// Samples each segment from its state's Gaussian. With omega_true = 1 rows
/// are i.i.d.; otherwise each row is drawn conditionally on the preceding
/// omega_true - 1 rows so that stacked windows follow the joint precision.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.channels < 1 || spec.omega_true < 1 || spec.k < 1 ||
      static_cast<int>(spec.precisions.size()) != spec.k)
    throw InputError("synthetic spec: inconsistent dimensions");
  const Eigen::Index dim = static_cast<Eigen::Index>(spec.omega_true) * spec.channels;
  const Eigen::Index c = spec.channels;
  for (const auto& p : spec.precisions)
    if (p.rows() != dim || p.cols() != dim || !is_positive_definite(p))
      throw InputError("synthetic spec: precision matrix is not PD of size omega*C");
  for (const auto& s : spec.segments)
    if (s.length < 1 || s.state < 0 || s.state >= spec.k)
      throw InputError("synthetic spec: bad segment");

  // Per state and history length h (0..omega-1): conditional mean map and
  // Cholesky factor of the conditional covariance of the newest row.
  struct Conditional {
    Matrix gain;      // C x (h C)
    Matrix chol;      // C x C lower
  };
  std::vector<std::vector<Conditional>> cond(static_cast<std::size_t>(spec.k));
  for (int s = 0; s < spec.k; ++s) {
    const Matrix cov = spec.precisions[static_cast<std::size_t>(s)].inverse();
    for (int h = 0; h < spec.omega_true; ++h) {
      // Window of h+1 rows: the last h+1 blocks of the stationary covariance.
      const Eigen::Index start = (spec.omega_true - 1 - h) * c;
      const Matrix block = cov.block(start, start, (h + 1) * c, (h + 1) * c);
      Conditional cd;
      if (h == 0) {
        cd.gain = Matrix::Zero(c, 0);
        cd.chol = Eigen::LLT<Matrix>(block).matrixL();
      } else {
        const Matrix past = block.topLeftCorner(h * c, h * c);
        const Matrix cross = block.bottomLeftCorner(c, h * c);
        const Matrix now = block.bottomRightCorner(c, c);
        cd.gain = past.ldlt().solve(cross.transpose()).transpose();
        const Matrix cond_cov = now - cd.gain * cross.transpose();
        cd.chol = Eigen::LLT<Matrix>(0.5 * (cond_cov + cond_cov.transpose())).matrixL();
      }
      cond[static_cast<std::size_t>(s)].push_back(std::move(cd));
    }
  }

  SyntheticData out;
  out.series.resize(spec.total_length(), c);
  out.truth.reserve(static_cast<std::size_t>(spec.total_length()));
  detail::NormalSource normal(spec.seed);
  Eigen::Index row = 0;
  for (std::size_t si = 0; si < spec.segments.size(); ++si) {
    const auto& seg = spec.segments[si];
    if (si > 0) out.change_points.push_back(static_cast<int>(row));
    for (int i = 0; i < seg.length; ++i, ++row) {
      const int h = static_cast<int>(std::min<Eigen::Index>(row, spec.omega_true - 1));
      const auto& cd = cond[static_cast<std::size_t>(seg.state)][static_cast<std::size_t>(h)];
      Vector noise(c);
      for (Eigen::Index j = 0; j < c; ++j) noise(j) = normal();
      Vector x = cd.chol * noise;
      if (h > 0) {
        Vector past(h * c);
        for (int b = 0; b < h; ++b) past.segment(b * c, c) = out.series.row(row - h + b).transpose();
        x += cd.gain * past;
      }
      out.series.row(row) = x.transpose();
      out.truth.push_back(seg.state);
    }
  }
  return out;
}

/// Two 4-channel states: identity precision and a tridiagonal precision
/// (diagonal 2, off-diagonal 0.9), laid out as normal/seizure blocks over 1000 rows.
inline SyntheticSpec make_scenario_a(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.k = 2;
  spec.omega_true = 1;
  spec.channels = 4;
  Matrix seizure = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    seizure(i, i) = 2.0;
    if (i + 1 < 4) seizure(i, i + 1) = seizure(i + 1, i) = 0.9;
  }
  spec.precisions = {Matrix::Identity(4, 4), seizure};
  spec.segments = {{0, 300}, {1, 150}, {0, 300}, {1, 150}, {0, 100}};
  spec.seed = seed;
  return spec;
}

/// Single identity-precision state over `length` rows.
inline SyntheticSpec make_single_state(std::uint64_t seed, int length = 1000, int channels = 4) {
  SyntheticSpec spec;
  spec.k = 1;
  spec.omega_true = 1;
  spec.channels = channels;
  spec.precisions = {Matrix::Identity(channels, channels)};
  spec.segments = {{0, length}};
  spec.seed = seed;
  return spec;
}

struct SyntheticRecording {
  Recording recording;
  std::vector<int> epoch_labels;  // one per non-overlapping epoch
};

/// Fake multichannel recording laid out in epochs like scenario A (60/30/60/30/20
/// epochs). Normal epochs are white noise; seizure epochs add a shared
/// `rhythm_hz` oscillation with a per-channel phase lag.
inline SyntheticRecording make_synthetic_recording(std::uint64_t seed, int channels = 4,
                                                   double sample_rate_hz = 32.0,
                                                   double epoch_len_s = 2.0,
                                                   double rhythm_hz = 6.0) {
  if (channels < 2) throw InputError("synthetic recording needs at least two channels");
  const std::vector<Segment> layout = {{0, 60}, {1, 30}, {0, 60}, {1, 30}, {0, 20}};
  const Eigen::Index per_epoch = samples_for(epoch_len_s, sample_rate_hz);
  if (per_epoch < 2) throw InputError("synthetic recording epochs are too short");
  std::vector<int> labels;
  for (const auto& s : layout) labels.insert(labels.end(), static_cast<std::size_t>(s.length), s.state);
  const Eigen::Index total = per_epoch * static_cast<Eigen::Index>(labels.size());
  Matrix samples(channels, total);
  detail::NormalSource normal(seed);
  for (Eigen::Index t = 0; t < total; ++t) {
    const bool seizure = labels[static_cast<std::size_t>(t / per_epoch)] == 1;
    const double time = static_cast<double>(t) / sample_rate_hz;
    for (int c = 0; c < channels; ++c) {
      double v = normal();
      if (seizure)
        v += 3.0 * std::sin(2.0 * std::numbers::pi * rhythm_hz * time + 0.4 * c);
      samples(c, t) = v;
    }
  }
  std::vector<std::string> names;
  for (int c = 0; c < channels; ++c) names.push_back("ch" + std::to_string(c));
  return {Recording(std::move(samples), sample_rate_hz, std::move(names)), std::move(labels)};
}

/// KL(N(0, P^-1) || N(0, Q^-1)) for precisions P and Q.
inline double gaussian_kl(const Matrix& precision_p, const Matrix& precision_q) {
  const Matrix cov_p = precision_p.inverse();
  const double d = static_cast<double>(precision_p.rows());
  const double logdet_q = 2.0 * Eigen::LLT<Matrix>(precision_q).matrixLLT().diagonal().array().log().sum();
  const double logdet_p = 2.0 * Eigen::LLT<Matrix>(precision_p).matrixLLT().diagonal().array().log().sum();
  // log det Sigma_q - log det Sigma_p = log det P - log det Q
  return 0.5 * ((precision_q * cov_p).trace() - d + logdet_p - logdet_q);
}

}  // namespace tsonset::eval
