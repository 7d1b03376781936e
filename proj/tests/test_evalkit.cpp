#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tsonset/evalkit.hpp"

using namespace tsonset;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int k) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(rng() % static_cast<unsigned>(k));
  return out;
}

double gaussian_kl(const Matrix& cov_p, const Matrix& cov_q) {
  const Eigen::Index d = cov_p.rows();
  const Matrix q_inv = cov_q.inverse();
  return 0.5 * ((q_inv * cov_p).trace() - static_cast<double>(d) +
                std::log(cov_q.determinant() / cov_p.determinant()));
}

}  // namespace

TEST(Metrics, SmallWorkedExample) {
  const std::vector<int> truth = {0, 0, 1, 1};
  const std::vector<int> pred = {0, 1, 1, 1};
  const auto r = eval::evaluate(truth, pred);
  EXPECT_DOUBLE_EQ(r.acc, 0.75);
  Eigen::MatrixXi expected(2, 2);
  expected << 1, 1, 0, 2;
  EXPECT_EQ(r.confusion, expected);
  EXPECT_NEAR(r.nmi, oracle::nmi(truth, pred), 1e-12);
  EXPECT_NEAR(r.ari, oracle::ari(truth, pred), 1e-12);
}

TEST(Metrics, PermutedLabelsArePerfect) {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> pred = {2, 2, 0, 0, 1, 1};
  EXPECT_NEAR(eval::nmi(truth, pred), 1.0, 1e-12);
  EXPECT_NEAR(eval::ari(truth, pred), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(eval::acc_matched(truth, pred, 3), 1.0);
}

TEST(Metrics, MatchOraclesOnRandomPairs) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    const int k = 1 + static_cast<int>(rng() % 4);
    const auto a = random_labels(rng, n, k);
    const auto b = random_labels(rng, n, k);
    EXPECT_NEAR(eval::nmi(a, b), oracle::nmi(a, b), 1e-12) << "trial " << trial;
    EXPECT_NEAR(eval::ari(a, b), oracle::ari(a, b), 1e-12) << "trial " << trial;
    EXPECT_NEAR(eval::acc_matched(a, b, k), oracle::acc(a, b), 1e-12) << "trial " << trial;
  }
}

TEST(Metrics, SymmetricAndRelabelInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_labels(rng, 40, 3);
    const auto b = random_labels(rng, 40, 3);
    EXPECT_NEAR(eval::nmi(a, b), eval::nmi(b, a), 1e-12);
    EXPECT_NEAR(eval::ari(a, b), eval::ari(b, a), 1e-12);
    std::vector<int> perm = {2, 0, 1};
    std::vector<int> b2(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) b2[i] = perm[static_cast<std::size_t>(b[i])];
    EXPECT_NEAR(eval::nmi(a, b2), eval::nmi(a, b), 1e-12);
    EXPECT_NEAR(eval::ari(a, b2), eval::ari(a, b), 1e-12);
    EXPECT_NEAR(eval::acc_matched(a, b2, 3), eval::acc_matched(a, b, 3), 1e-12);
    const double nmi = eval::nmi(a, b);
    EXPECT_GE(nmi, 0.0);
    EXPECT_LE(nmi, 1.0);
    EXPECT_GE(eval::acc_matched(a, b, 3), 1.0 / 3.0 - 1e-12);
  }
}

TEST(Metrics, HungarianMatchesExhaustiveSearch) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_labels(rng, 80, 6);
    const auto b = random_labels(rng, 80, 6);
    EXPECT_NEAR(eval::acc_matched(a, b, 6), oracle::acc(a, b), 1e-12) << "trial " << trial;
  }
}

TEST(Metrics, InputErrors) {
  EXPECT_THROW(eval::nmi(std::vector<int>{0, 1}, std::vector<int>{0}), InputError);
  EXPECT_THROW(eval::acc_matched(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 2), InputError);
  EXPECT_THROW(eval::ari(std::vector<int>{0}, std::vector<int>{0}), InputError);
}

TEST(Synthetic, IdentityPrecisionCovariance) {
  const auto data = eval::generate_synthetic(eval::make_single_state(5, 10000));
  const auto [mean, cov] = oracle::two_pass_stats(data.series);
  EXPECT_LT((cov - Matrix::Identity(4, 4)).norm(), 0.05 * 4);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
}

TEST(Synthetic, SegmentLayoutAndDeterminism) {
  eval::SyntheticSpec spec = eval::make_single_state(1, 10, 2);
  spec.k = 2;
  spec.precisions.push_back(2.0 * Matrix::Identity(2, 2));
  spec.segments = {{0, 50}, {1, 50}};
  spec.seed = 9;
  const auto a = eval::generate_synthetic(spec);
  const auto b = eval::generate_synthetic(spec);
  ASSERT_EQ(a.series.rows(), 100);
  EXPECT_EQ(std::count(a.truth.begin(), a.truth.begin() + 50, 0), 50);
  EXPECT_EQ(std::count(a.truth.begin() + 50, a.truth.end(), 1), 50);
  EXPECT_EQ(a.change_points, std::vector<int>{50});
  EXPECT_EQ(a.series, b.series);
}

TEST(Synthetic, ScenarioAStatesAreDistinct) {
  const auto spec = eval::make_scenario_a(0);
  EXPECT_EQ(spec.total_length(), 1000);
  for (const auto& p : spec.precisions) EXPECT_TRUE(eval::is_positive_definite(p));
  const double kl = gaussian_kl(spec.precisions[1].inverse(), spec.precisions[0].inverse());
  EXPECT_GT(kl / 4.0, 0.1);
  const auto data = eval::generate_synthetic(spec);
  EXPECT_EQ(data.change_points, (std::vector<int>{300, 450, 750, 900}));
}

TEST(Synthetic, LaggedStatesReproduceJointCovariance) {
  std::mt19937_64 rng(4);
  eval::SyntheticSpec spec;
  spec.k = 1;
  spec.omega_true = 2;
  spec.channels = 2;
  Matrix theta = Matrix::Identity(4, 4) * 2.0;
  theta(0, 2) = theta(2, 0) = theta(1, 3) = theta(3, 1) = 0.6;
  theta(0, 1) = theta(1, 0) = theta(2, 3) = theta(3, 2) = 0.3;
  spec.precisions = {theta};
  spec.segments = {{0, 40000}};
  spec.seed = 3;
  const auto data = eval::generate_synthetic(spec);
  Matrix stacked(data.series.rows() - 1, 4);
  for (Eigen::Index t = 0; t + 1 < data.series.rows(); ++t) {
    stacked.row(t).head(2) = data.series.row(t);
    stacked.row(t).tail(2) = data.series.row(t + 1);
  }
  const auto stats = oracle::two_pass_stats(stacked);
  EXPECT_LT((stats.second - theta.inverse()).cwiseAbs().maxCoeff(), 0.03);
}

TEST(Synthetic, RejectsNonPositiveDefinitePrecision) {
  auto spec = eval::make_single_state(0, 10, 2);
  spec.precisions[0] << 1, 2, 2, 1;
  EXPECT_THROW(eval::generate_synthetic(spec), InputError);
}

TEST(Synthetic, RecordingLayout) {
  const auto rec = eval::make_synthetic_recording(3);
  EXPECT_EQ(rec.epoch_labels.size(), 200u);
  EXPECT_EQ(rec.recording.channels(), 4);
  EXPECT_EQ(rec.recording.samples().cols(), 200 * 64);
  EXPECT_EQ(std::count(rec.epoch_labels.begin(), rec.epoch_labels.end(), 1), 60);
  EXPECT_EQ(eval::make_synthetic_recording(3).recording.samples(), rec.recording.samples());
}
