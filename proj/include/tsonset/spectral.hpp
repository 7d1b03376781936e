#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "tsonset/core.hpp"

namespace tsonset {

/// One-sided magnitude spectrum |DFT(x)| for bins 0..floor(L/2), unnormalized
/// forward transform, no taper.
inline Vector fft_magnitude(const Eigen::Ref<const RowVector>& row) {
  const Eigen::Index len = row.size();
  if (len < 2) throw InputError("fft_magnitude needs at least 2 samples");
  std::vector<double> in(row.data(), row.data() + len);
  std::vector<std::complex<double>> out;
  Eigen::FFT<double> fft;
  fft.fwd(out, in);
  Vector mag(len / 2 + 1);
  for (Eigen::Index k = 0; k < mag.size(); ++k) mag(k) = std::abs(out[static_cast<std::size_t>(k)]);
  return mag;
}

/// |<a - mean(a), b - mean(b)>| / (|a - mean(a)| |b - mean(b)|); 0 when either is flat.
inline double normalized_cross_correlation(const Eigen::Ref<const RowVector>& a,
                                           const Eigen::Ref<const RowVector>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw InputError("normalized_cross_correlation needs equal lengths >= 2");
  const RowVector ca = a.array() - a.mean();
  const RowVector cb = b.array() - b.mean();
  const double na = ca.norm();
  const double nb = cb.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double r = std::abs(ca.dot(cb)) / (na * nb);
  return std::min(r, 1.0);
}

/// Per-channel spectral magnitudes (channels x frequency bins).
struct NodeFeatures {
  Matrix features;

  Eigen::Index channels() const noexcept { return features.rows(); }
  Eigen::Index bins() const noexcept { return features.cols(); }
};

/// Node features of one epoch: normalize each channel, take the one-sided
/// magnitude spectrum and divide by the window length so magnitudes stay
/// O(1) for the classifier. The graph is unaffected by the scale since NCC is
/// scale invariant.
inline NodeFeatures node_features(const Matrix& window) {
  const Matrix normalized = normalize_rows(window);
  const Eigen::Index len = window.cols();
  NodeFeatures nf;
  nf.features.resize(window.rows(), len / 2 + 1);
  for (Eigen::Index c = 0; c < window.rows(); ++c)
    nf.features.row(c) = fft_magnitude(normalized.row(c)).transpose() / static_cast<double>(len);
  return nf;
}

struct EpochGraph {
  NodeFeatures nodes;
  Matrix adjacency;  // symmetric, unit diagonal, entries in [0, 1]
  int top_k = 0;
};

/// Sparse correlation graph: every node keeps its `top_k` strongest off-diagonal
/// NCC neighbours (ties to the lower index), the pattern is symmetrized by
/// elementwise max and the diagonal is a unit self-loop.
inline EpochGraph build_graph(NodeFeatures nf, int top_k) {
  const Eigen::Index c = nf.channels();
  if (top_k < 1 || top_k >= c)
    throw InputError("top_k must be in [1, channels): top_k=" + std::to_string(top_k) +
                     ", channels=" + std::to_string(c));
  Matrix score = Matrix::Zero(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = i + 1; j < c; ++j)
      score(i, j) = score(j, i) =
          normalized_cross_correlation(nf.features.row(i), nf.features.row(j));

  Matrix directed = Matrix::Zero(c, c);
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < c; ++i) {
    order.clear();
    for (Eigen::Index j = 0; j < c; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return score(i, x) > score(i, y); });
    for (int n = 0; n < top_k; ++n) directed(i, order[static_cast<std::size_t>(n)]) = score(i, order[static_cast<std::size_t>(n)]);
  }

  EpochGraph g;
  g.adjacency = directed.cwiseMax(directed.transpose());
  g.adjacency.diagonal().setOnes();
  g.nodes = std::move(nf);
  g.top_k = top_k;
  return g;
}

inline std::vector<EpochGraph> build_graphs(const std::vector<Epoch>& epochs, int top_k) {
  std::vector<EpochGraph> graphs;
  graphs.reserve(epochs.size());
  for (const auto& e : epochs) graphs.push_back(build_graph(node_features(e.window), top_k));
  return graphs;
}

}  // namespace tsonset
