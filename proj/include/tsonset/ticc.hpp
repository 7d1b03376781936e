#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tsonset/core.hpp"
#include "tsonset/io.hpp"

namespace tsonset {

/// Sliding stack of `omega` consecutive rows of a (epochs x channels) series.
/// Row t of `rows` is concat(series[t], ..., series[t + omega - 1]); its
/// assignment is attributed to epoch t + omega - 1.
struct StackedWindows {
  Matrix rows;
  int omega = 1;
  int channels = 0;

  Eigen::Index count() const noexcept { return rows.rows(); }
  Eigen::Index dim() const noexcept { return rows.cols(); }
  int index_p(Eigen::Index t) const noexcept { return static_cast<int>(t) + omega - 1; }
};

inline StackedWindows stack_windows(const Matrix& series, int omega) {
  const Eigen::Index p = series.rows();
  const Eigen::Index c = series.cols();
  if (omega < 1 || omega > p)
    throw InputError("window size omega=" + std::to_string(omega) + " must be in [1, " +
                     std::to_string(p) + "]");
  if (!series.allFinite()) throw InputError("series has non-finite entries");
  StackedWindows w;
  w.omega = omega;
  w.channels = static_cast<int>(c);
  w.rows.resize(p - omega + 1, omega * c);
  for (Eigen::Index t = 0; t < w.rows.rows(); ++t)
    for (int k = 0; k < omega; ++k) w.rows.block(t, k * c, 1, c) = series.row(t + k);
  return w;
}

inline constexpr double kCovarianceRidge = 1e-6;

struct EmpiricalStats {
  Vector mean;
  Matrix cov;  // population scatter / n + ridge * I
  int n = 0;
};

/// Mean and ridge-regularized covariance of the selected rows; nullopt when
/// `members` is empty.
inline std::optional<EmpiricalStats> empirical_stats(const Matrix& rows,
                                                     std::span<const int> members,
                                                     double ridge = kCovarianceRidge) {
  if (members.empty()) return std::nullopt;
  const Eigen::Index d = rows.cols();
  EmpiricalStats st;
  st.n = static_cast<int>(members.size());
  st.mean = Vector::Zero(d);
  for (int m : members) st.mean += rows.row(m).transpose();
  st.mean /= static_cast<double>(st.n);
  Matrix centered(st.n, d);
  for (int i = 0; i < st.n; ++i)
    centered.row(i) = rows.row(members[static_cast<std::size_t>(i)]) - st.mean.transpose();
  st.cov = centered.transpose() * centered / static_cast<double>(st.n);
  st.cov.diagonal().array() += ridge;
  return st;
}

inline double soft_threshold(double a, double t) {
  if (a > t) return a - t;
  if (a < -t) return a + t;
  return 0.0;
}

/// Closed-form minimizer of -log det T + tr(S T) + (rho/2)|T - Z + U|_F^2.
inline Matrix theta_update(const Matrix& s, const Matrix& z, const Matrix& u, double rho) {
  if (!(rho > 0.0)) throw InputError("rho must be positive");
  const Matrix target = rho * (z - u) - s;
  const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
  if ((target - target.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw NumericalError("theta_update: input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (target + target.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("theta_update: eigendecomposition failed");
  const Vector d = eig.eigenvalues();
  const Vector shrunk =
      (d.array() + (d.array().square() + 4.0 * rho).sqrt()) / (2.0 * rho);
  Matrix theta = eig.eigenvectors() * shrunk.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (theta + theta.transpose());
}

/// Scalar penalty broadcast to a mask; the diagonal is left unpenalized.
inline Matrix penalty_mask(double lambda, Eigen::Index dim) {
  if (lambda < 0.0) throw InputError("lambda must be non-negative");
  Matrix mask = Matrix::Constant(dim, dim, lambda);
  mask.diagonal().setZero();
  return mask;
}

namespace detail {

/// Calls fn(members) for every block-Toeplitz equivalence class: fixed block
/// offset d and channel pair (i, j), together with the mirrored entries.
template <typename Fn>
void for_each_toeplitz_class(int omega, int channels, Fn&& fn) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> members;
  const Eigen::Index c = channels;
  for (int d = 0; d < omega; ++d)
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = (d == 0 ? i : 0); j < c; ++j) {
        members.clear();
        for (int r = 0; r + d < omega; ++r) {
          const Eigen::Index row = r * c + i;
          const Eigen::Index col = (r + d) * c + j;
          members.emplace_back(row, col);
          if (row != col) members.emplace_back(col, row);
        }
        fn(members);
      }
}

}  // namespace detail

/// ADMM Z-step under the block-Toeplitz constraint: each equivalence class is
/// replaced by the soft-thresholded class mean (threshold = mean penalty / rho).
inline Matrix toeplitz_prox(const Matrix& a, const Matrix& lambda, double rho, int omega,
                            int channels) {
  const Eigen::Index n = static_cast<Eigen::Index>(omega) * channels;
  if (a.rows() != n || a.cols() != n || lambda.rows() != n || lambda.cols() != n)
    throw InputError("toeplitz_prox: dimension mismatch");
  if (!(rho > 0.0)) throw InputError("rho must be positive");
  Matrix out(n, n);
  detail::for_each_toeplitz_class(omega, channels, [&](const auto& members) {
    double sum = 0.0;
    double pen = 0.0;
    for (const auto& [r, c] : members) {
      sum += a(r, c);
      pen += lambda(r, c);
    }
    const double m = static_cast<double>(members.size());
    const double value = soft_threshold(sum / m, pen / m / rho);
    for (const auto& [r, c] : members) out(r, c) = value;
  });
  return out;
}

inline Matrix toeplitz_prox(const Matrix& a, double lambda, double rho, int omega, int channels) {
  return toeplitz_prox(a, penalty_mask(lambda, a.rows()), rho, omega, channels);
}

/// Largest deviation from block-Toeplitz structure (0 for an exact match).
inline double toeplitz_deviation(const Matrix& theta, int omega, int channels) {
  const Eigen::Index c = channels;
  double worst = 0.0;
  for (int r = 0; r + 1 < omega; ++r)
    for (int s = 0; s + 1 < omega; ++s)
      worst = std::max(worst, (theta.block(r * c, s * c, c, c) -
                               theta.block((r + 1) * c, (s + 1) * c, c, c))
                                  .cwiseAbs()
                                  .maxCoeff());
  return worst;
}

struct GlassoConfig {
  double lambda = 0.05;
  std::optional<Matrix> mask;  // per-entry penalties; overrides `lambda` when set
  double rho = 1.0;
  int max_iter = 1000;
  double eps_abs = 1e-5;
  double eps_rel = 1e-4;

  Matrix penalty(Eigen::Index dim) const {
    if (mask) {
      if (mask->rows() != dim || mask->cols() != dim)
        throw InputError("penalty mask has the wrong shape");
      return *mask;
    }
    return penalty_mask(lambda, dim);
  }

  void validate() const {
    if (!(rho > 0.0) || !(eps_abs > 0.0) || !(eps_rel > 0.0) || max_iter < 1 || lambda < 0.0)
      throw InputError("invalid graphical lasso configuration");
  }
};

struct ClusterModel {
  Matrix theta;  // (omega C) x (omega C) block-Toeplitz precision
  Vector mean;
  double logdet = 0.0;
  int n_assigned = 0;
  int omega = 1;
  int channels = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_trace;  // penalized objective at each Z iterate
};

/// log det of a symmetric PD matrix via Cholesky, adding 1e-8 I jitter up to 3
/// times. `m` receives the jitter that was needed.
inline double cholesky_logdet(Matrix& m) {
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() == Eigen::Success) {
      const Matrix& l = llt.matrixLLT();
      return 2.0 * l.diagonal().array().log().sum();
    }
    if (attempt < 3) m.diagonal().array() += 1e-8;
  }
  throw NumericalError("precision matrix is not positive definite");
}

inline std::optional<double> try_logdet(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Matrix& l = llt.matrixLLT();
  return 2.0 * l.diagonal().array().log().sum();
}

/// -log det T + tr(S T) + sum |lambda o T|; +inf when T is not PD.
inline double glasso_objective(const Matrix& theta, const Matrix& s, const Matrix& lambda) {
  const auto ld = try_logdet(theta);
  if (!ld) return std::numeric_limits<double>::infinity();
  return -*ld + (s.cwiseProduct(theta)).sum() + lambda.cwiseProduct(theta.cwiseAbs()).sum();
}

/// Block-Toeplitz graphical lasso by ADMM. Returns the constrained iterate Z.
inline ClusterModel fit_cluster(const EmpiricalStats& stats, const GlassoConfig& cfg, int omega,
                                int channels) {
  cfg.validate();
  const Eigen::Index n = static_cast<Eigen::Index>(omega) * channels;
  if (stats.cov.rows() != n || stats.mean.size() != n)
    throw InputError("statistics dimension does not match omega * channels");
  const Matrix lambda = cfg.penalty(n);

  Matrix z = Matrix::Identity(n, n);
  Matrix u = Matrix::Zero(n, n);
  Matrix theta = z;
  ClusterModel model;
  model.omega = omega;
  model.channels = channels;
  model.mean = stats.mean;
  model.n_assigned = stats.n;

  const double dim = static_cast<double>(n);
  Matrix best = z;
  double best_objective = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iter; ++it) {
    theta = theta_update(stats.cov, z, u, cfg.rho);
    const Matrix z_prev = z;
    z = toeplitz_prox(theta + u, lambda, cfg.rho, omega, channels);
    u += theta - z;
    model.iterations = it + 1;

    const double objective = glasso_objective(z, stats.cov, lambda);
    model.objective_trace.push_back(objective);
    if (objective <= best_objective) {
      best_objective = objective;
      best = z;
    }

    const double primal = (theta - z).norm();
    const double dual = cfg.rho * (z - z_prev).norm();
    const double eps_primal = dim * cfg.eps_abs + cfg.eps_rel * std::max(theta.norm(), z.norm());
    const double eps_dual = dim * cfg.eps_abs + cfg.eps_rel * cfg.rho * u.norm();
    if (primal <= eps_primal && dual <= eps_dual && std::isfinite(objective)) {
      model.converged = true;
      break;
    }
  }
  model.theta = model.converged ? z : best;
  model.logdet = cholesky_logdet(model.theta);
  return model;
}

inline ClusterModel fit_cluster(const StackedWindows& windows, std::span<const int> members,
                                const GlassoConfig& cfg) {
  const auto stats = empirical_stats(windows.rows, members);
  if (!stats) throw InputError("fit_cluster needs at least one window");
  return fit_cluster(*stats, cfg, windows.omega, windows.channels);
}

inline double log_likelihood(const Eigen::Ref<const Vector>& w, const ClusterModel& m) {
  if (w.size() != m.mean.size()) throw InputError("window dimension does not match model");
  const Vector d = w - m.mean;
  const double quad = d.dot(m.theta * d);
  return -0.5 * quad + 0.5 * m.logdet -
         0.5 * static_cast<double>(w.size()) * std::log(2.0 * std::numbers::pi);
}

/// Binarized off-diagonal support (|theta_ij| > threshold) of the lag-0 block A(0).
inline Eigen::MatrixXi lag0_support(const ClusterModel& m, double threshold = 1e-4) {
  const Eigen::Index c = m.channels;
  Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      if (i != j && std::abs(m.theta(i, j)) > threshold) adj(i, j) = 1;
  return adj;
}

/// Distinct free precision entries: nonzeros in the upper triangle of A(0)
/// plus every nonzero of A(1..omega-1).
inline int free_precision_entries(const ClusterModel& m, double threshold = 1e-4) {
  const Eigen::Index c = m.channels;
  int count = 0;
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = i; j < c; ++j)
      if (std::abs(m.theta(i, j)) > threshold) ++count;
  for (int d = 1; d < m.omega; ++d)
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = 0; j < c; ++j)
        if (std::abs(m.theta(i, d * c + j)) > threshold) ++count;
  return count;
}

inline void save_cluster_model(const std::filesystem::path& base, const ClusterModel& m,
                               double lambda) {
  io::write_matrix(std::filesystem::path(base.string() + "_theta"), m.theta, "theta");
  io::write_matrix(std::filesystem::path(base.string() + "_mean"), m.mean, "mean");
  nlohmann::json manifest = {{"omega", m.omega},
                             {"C", m.channels},
                             {"lambda", lambda},
                             {"converged", m.converged},
                             {"iterations", m.iterations},
                             {"n_assigned", m.n_assigned},
                             {"logdet", m.logdet}};
  io::write_json(std::filesystem::path(base.string() + ".json"), manifest);
  const Eigen::MatrixXi support = lag0_support(m);
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < support.rows(); ++i) {
    std::vector<int> row(static_cast<std::size_t>(support.cols()));
    for (Eigen::Index j = 0; j < support.cols(); ++j) row[static_cast<std::size_t>(j)] = support(i, j);
    rows.push_back(row);
  }
  io::write_json(std::filesystem::path(base.string() + "_a0.json"),
                 {{"threshold", 1e-4}, {"support", rows}});
}

inline ClusterModel load_cluster_model(const std::filesystem::path& base) {
  const auto manifest = io::read_json(std::filesystem::path(base.string() + ".json"));
  ClusterModel m;
  try {
    m.omega = manifest.at("omega").get<int>();
    m.channels = manifest.at("C").get<int>();
    m.converged = manifest.at("converged").get<bool>();
    m.iterations = manifest.at("iterations").get<int>();
    m.n_assigned = manifest.at("n_assigned").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(base.string() + ".json: " + e.what());
  }
  m.theta = io::read_matrix(std::filesystem::path(base.string() + "_theta"));
  const Matrix mean = io::read_matrix(std::filesystem::path(base.string() + "_mean"));
  m.mean = Eigen::Map<const Vector>(mean.data(), mean.size());
  m.logdet = cholesky_logdet(m.theta);
  return m;
}

}  // namespace tsonset
