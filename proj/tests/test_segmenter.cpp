#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tsonset/evalkit.hpp"
#include "tsonset/segmenter.hpp"

using namespace tsonset;

namespace {

Matrix random_costs(std::mt19937_64& rng, Eigen::Index n, Eigen::Index k) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  Matrix c(n, k);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  return c;
}

}  // namespace

TEST(Viterbi, ZeroBetaIsPerWindowArgmin) {
  std::mt19937_64 rng(1);
  const Matrix costs = random_costs(rng, 30, 3);
  const auto a = viterbi_assign(costs, 0.0);
  for (Eigen::Index t = 0; t < costs.rows(); ++t) {
    Eigen::Index best;
    costs.row(t).minCoeff(&best);
    EXPECT_EQ(a.labels[static_cast<std::size_t>(t)], best);
  }
}

TEST(Viterbi, HugeBetaIsConstantBestColumn) {
  std::mt19937_64 rng(2);
  const Matrix costs = random_costs(rng, 25, 3);
  const double beta = 25 * 10.0 + 1.0;
  const auto a = viterbi_assign(costs, beta);
  Eigen::Index best;
  costs.colwise().sum().minCoeff(&best);
  for (int l : a.labels) EXPECT_EQ(l, best);
}

TEST(Viterbi, SingleClusterIsConstant) {
  std::mt19937_64 rng(3);
  const Matrix costs = random_costs(rng, 10, 1);
  const auto a = viterbi_assign(costs, 5.0);
  EXPECT_EQ(a.labels, std::vector<int>(10, 0));
  EXPECT_DOUBLE_EQ(path_cost(costs, a.labels, 5.0), costs.sum());
}

TEST(Viterbi, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 10);
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(rng() % 3);
    const Matrix costs = random_costs(rng, n, k);
    const double beta = std::uniform_real_distribution<double>(0.0, 8.0)(rng);
    const auto a = viterbi_assign(costs, beta);
    const auto [best_cost, best_labels] = oracle::brute_force_path(costs, beta);
    EXPECT_NEAR(path_cost(costs, a.labels, beta), best_cost, 1e-9) << "trial " << trial;
  }
}

TEST(Viterbi, TiesKeepPreviousThenLowerId) {
  // every path costs the same with beta = 0: stay at cluster 0 throughout
  const Matrix flat = Matrix::Ones(5, 3);
  EXPECT_EQ(viterbi_assign(flat, 0.0).labels, std::vector<int>(5, 0));
  // switching to 1 or 2 is equally good; the lower id wins
  Matrix costs(2, 3);
  costs << 0, 5, 5, 5, 0, 0;
  EXPECT_EQ(viterbi_assign(costs, 1.0).labels, (std::vector<int>{0, 1}));
  // staying ties with switching; staying wins
  Matrix stay(2, 2);
  stay << 0, 3, 2, 1;
  EXPECT_EQ(viterbi_assign(stay, 1.0).labels, (std::vector<int>{0, 0}));
}

TEST(Viterbi, SwitchesNonIncreasingInBeta) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix costs = random_costs(rng, 40, 1 + static_cast<Eigen::Index>(rng() % 3));
    int previous = std::numeric_limits<int>::max();
    for (double beta : {0.0, 1.0, 5.0, 10.0, 50.0, 1000.0}) {
      const int s = count_switches(viterbi_assign(costs, beta).labels);
      EXPECT_LE(s, previous) << "trial " << trial << " beta " << beta;
      previous = s;
    }
  }
}

TEST(KMeans, SplitsSeparatedClouds) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 0.1);
  Matrix pts(60, 2);
  for (int i = 0; i < 60; ++i) {
    const double off = i < 25 ? 0.0 : 50.0;
    pts(i, 0) = off + nd(rng);
    pts(i, 1) = -off + nd(rng);
  }
  const auto labels = kmeans_labels(pts, 2, 3);
  for (int i = 1; i < 60; ++i) EXPECT_EQ(labels[i] == labels[0], i < 25);
  EXPECT_EQ(kmeans_labels(pts, 2, 3), labels);
  EXPECT_EQ(kmeans_labels(pts, 1, 3), std::vector<int>(60, 0));
  EXPECT_THROW(kmeans_labels(pts.topRows(2), 3, 0), InputError);
}

TEST(Em, SingleStateConvergesFast) {
  const auto data = eval::generate_synthetic(eval::make_single_state(3, 300));
  const auto windows = stack_windows(data.series, 1);
  EmConfig cfg;
  cfg.k = 1;
  const auto fit = em_fit(windows, cfg);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.n_iterations, 2);
  EXPECT_EQ(fit.assignment.labels, std::vector<int>(300, 0));
  const auto seg = extract_onsets(fit.assignment.labels, 1, 2.0, default_semantics(fit.models));
  EXPECT_EQ(seg.subsequences.size(), 1u);
}

TEST(Em, DeterministicAndObjectiveNonIncreasing) {
  const auto data = eval::generate_synthetic(eval::make_scenario_a(1));
  const auto windows = stack_windows(data.series, 1);
  EmConfig cfg;
  cfg.k = 2;
  cfg.beta = 10.0;
  const auto a = em_fit(windows, cfg);
  const auto b = em_fit(windows, cfg);
  EXPECT_EQ(a.assignment.labels, b.assignment.labels);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
  for (std::size_t i = 1; i < a.objective_trace.size(); ++i)
    EXPECT_LE(a.objective_trace[i], a.objective_trace[i - 1] + 1e-6) << "iteration " << i;
}

TEST(Em, SeparatesMeanShiftedStates) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix x(200, 2);
  std::vector<int> truth;
  for (int t = 0; t < 200; ++t) {
    const int s = (t / 50) % 2;
    truth.push_back(s);
    x(t, 0) = nd(rng) + 6.0 * s;
    x(t, 1) = nd(rng) - 6.0 * s;
  }
  EmConfig cfg;
  const auto fit = em_fit(stack_windows(x, 2), cfg);
  const auto labels = epoch_labels(fit.assignment.labels, 2);
  EXPECT_GE(eval::nmi(truth, labels), 0.9);
}

TEST(Em, PersistentCollapseReducesK) {
  // a switch penalty this large merges the two states; the emptied slot
  // alternates between reseeds, which must still end in a K reduction
  const auto data = eval::generate_synthetic(eval::make_scenario_a(0));
  EmConfig cfg;
  cfg.beta = 50.0;
  const auto fit = em_run(stack_windows(data.series, 1), cfg,
                          initialize_assignment(stack_windows(data.series, 1), 2, 0).labels);
  EXPECT_TRUE(fit.k_reduced);
  EXPECT_EQ(fit.k_final, 1);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.reseeds, 2);
  EXPECT_EQ(fit.models.size(), 1u);
}

TEST(Em, RejectsBadInitialAssignment) {
  const auto windows = stack_windows(Matrix::Random(10, 2), 1);
  EmConfig cfg;
  EXPECT_THROW(em_run(windows, cfg, std::vector<int>(9, 0)), InputError);
  EXPECT_THROW(em_run(windows, cfg, std::vector<int>(10, 5)), InputError);
}

TEST(Bic, PrefersTrueClusterCount) {
  EmConfig base;
  const std::vector<int> candidates = {1, 2};
  const auto single = eval::generate_synthetic(eval::make_single_state(2));
  const auto one = bic_select(stack_windows(single.series, 1), candidates, base);
  EXPECT_EQ(one.best_k, 1);
  EXPECT_EQ(one.table.size() + one.failures.size(), candidates.size());
  const auto two_state = eval::generate_synthetic(eval::make_scenario_a(2));
  const auto two = bic_select(stack_windows(two_state.series, 1), candidates, base);
  EXPECT_EQ(two.best_k, 2);
}

TEST(Onsets, TwoStateExample) {
  const StateMap sem = {{0, State::normal}, {1, State::seizure}};
  const auto seg = extract_onsets(std::vector<int>{0, 0, 1, 1, 0}, 1, 2.0, sem);
  ASSERT_EQ(seg.subsequences.size(), 3u);
  EXPECT_EQ(seg.subsequences[0], (Subsequence{0, 0, 1}));
  EXPECT_EQ(seg.subsequences[1], (Subsequence{1, 2, 3}));
  EXPECT_EQ(seg.subsequences[2], (Subsequence{0, 4, 4}));
  ASSERT_EQ(seg.onsets.size(), 2u);
  EXPECT_EQ(seg.onsets[0].type, "SO");
  EXPECT_EQ(seg.onsets[0].epoch, 2);
  EXPECT_DOUBLE_EQ(seg.onsets[0].time_s, 4.0);
  EXPECT_EQ(seg.onsets[1].type, "offset");
  EXPECT_EQ(seg.onsets[1].epoch, 4);
}

TEST(Onsets, ConstantLabels) {
  const auto seg = extract_onsets(std::vector<int>(6, 1), 1, 2.0, {{1, State::seizure}});
  EXPECT_EQ(seg.subsequences.size(), 1u);
  EXPECT_TRUE(seg.onsets.empty());
}

TEST(Onsets, ThreeStateExample) {
  const StateMap sem = {{0, State::normal}, {1, State::seizure}, {2, State::preictal}};
  const auto seg = extract_onsets(std::vector<int>{0, 2, 2, 1, 0}, 1, 1.0, sem);
  ASSERT_EQ(seg.onsets.size(), 3u);
  EXPECT_EQ(seg.onsets[0].type, "SPO");
  EXPECT_EQ(seg.onsets[0].epoch, 1);
  EXPECT_EQ(seg.onsets[1].type, "seizure_start");
  EXPECT_EQ(seg.onsets[1].epoch, 3);
}

TEST(Onsets, UnknownClusterIsAnError) {
  EXPECT_THROW(extract_onsets(std::vector<int>{0, 3}, 1, 1.0, {{0, State::normal}}), InputError);
}

TEST(Onsets, WindowAttributionPadsFirstEpochs) {
  EXPECT_EQ(epoch_labels(std::vector<int>{1, 0, 0}, 3), (std::vector<int>{1, 1, 1, 0, 0}));
}

TEST(Onsets, RunLengthRoundTrip) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> labels(1 + rng() % 40);
    for (auto& l : labels) l = static_cast<int>(rng() % 3);
    const auto runs = run_length_encode(labels);
    EXPECT_EQ(run_length_decode(runs), labels);
    for (std::size_t r = 1; r < runs.size(); ++r) {
      EXPECT_NE(runs[r].cluster, runs[r - 1].cluster);
      EXPECT_EQ(runs[r].start_epoch, runs[r - 1].end_epoch + 1);
    }
  }
}

TEST(Semantics, OrderedByMeanLogit) {
  std::vector<ClusterModel> models(3);
  models[0].mean = Vector::Constant(2, 0.9);
  models[1].mean = Vector::Constant(2, 0.1);
  models[2].mean = Vector::Constant(2, 0.5);
  const auto sem = default_semantics(models);
  EXPECT_EQ(sem.at(0), State::seizure);
  EXPECT_EQ(sem.at(1), State::normal);
  EXPECT_EQ(sem.at(2), State::preictal);
}
