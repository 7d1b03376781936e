#include <gtest/gtest.h>

#include <random>
#include <set>

#include "tsonset/core.hpp"

using namespace tsonset;

namespace {

Recording ramp(int channels, int samples, double rate = 1.0) {
  Matrix m(channels, samples);
  for (int c = 0; c < channels; ++c)
    for (int t = 0; t < samples; ++t) m(c, t) = 100.0 * c + t;
  std::vector<std::string> names;
  for (int c = 0; c < channels; ++c) names.push_back("c" + std::to_string(c));
  return Recording(m, rate, names);
}

}  // namespace

TEST(Recording, RejectsBadConstruction) {
  EXPECT_THROW(Recording(Matrix(0, 5), 1.0, {}), InputError);
  EXPECT_THROW(Recording(Matrix::Zero(1, 5), 0.0, {"a"}), InputError);
  EXPECT_THROW(Recording(Matrix::Zero(2, 5), 1.0, {"a"}), InputError);
  EXPECT_THROW(Recording(Matrix::Zero(2, 5), 1.0, {"a", "a"}), InputError);
  EXPECT_NO_THROW(Recording(Matrix::Zero(2, 5), 1.0, {"a", "b"}));
}

TEST(SegmentRecording, StrideEqualToLength) {
  const auto epochs = segment_recording(ramp(1, 10), 2.0, 2.0);
  ASSERT_EQ(epochs.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(epochs[i].index, i);
    EXPECT_DOUBLE_EQ(epochs[i].start_time_s, 2.0 * i);
    EXPECT_DOUBLE_EQ(epochs[i].window(0, 0), 2.0 * i);
  }
}

TEST(SegmentRecording, TrailingSamplesDropped) {
  const auto epochs = segment_recording(ramp(1, 10), 4.0, 3.0);
  ASSERT_EQ(epochs.size(), 3u);
  EXPECT_DOUBLE_EQ(epochs[0].start_time_s, 0.0);
  EXPECT_DOUBLE_EQ(epochs[1].start_time_s, 3.0);
  EXPECT_DOUBLE_EQ(epochs[2].start_time_s, 6.0);
  EXPECT_DOUBLE_EQ(epochs[2].window(0, 3), 9.0);
}

TEST(SegmentRecording, TooShortIsAnError) {
  try {
    segment_recording(ramp(1, 3), 4.0, 4.0);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("too short"), std::string::npos);
  }
}

TEST(SegmentRecording, EpochShorterThanTwoSamplesRejected) {
  EXPECT_THROW(segment_recording(ramp(1, 10), 1.0, 1.0), InputError);
}

TEST(SegmentRecording, CountFormulaOverGrid) {
  for (int t = 4; t < 40; ++t)
    for (int len = 2; len <= 6; ++len)
      for (int stride = 1; stride <= 7; ++stride) {
        if (t < len) continue;
        const auto epochs = segment_recording(ramp(2, t), len, stride);
        EXPECT_EQ(static_cast<int>(epochs.size()), (t - len) / stride + 1);
      }
}

TEST(SegmentRecording, NonOverlappingReassemblyIsAPrefix) {
  const Recording rec = ramp(3, 23, 4.0);
  const auto epochs = segment_recording(rec, 1.25, 1.25);  // L = 5
  Matrix joined(3, 5 * static_cast<Eigen::Index>(epochs.size()));
  for (std::size_t i = 0; i < epochs.size(); ++i)
    joined.middleCols(5 * static_cast<Eigen::Index>(i), 5) = epochs[i].window;
  EXPECT_EQ(joined, rec.samples().leftCols(joined.cols()));
}

TEST(Normalize, ConstantRowBecomesZeros) {
  Matrix m(1, 4);
  m << 1, 1, 1, 1;
  EXPECT_EQ(normalize_rows(m), Matrix::Zero(1, 4));
}

TEST(Normalize, TwoPointRow) {
  Matrix m(1, 2);
  m << 0, 2;
  const Matrix n = normalize_rows(m);
  EXPECT_DOUBLE_EQ(n(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(n(0, 1), 1.0);
}

TEST(Normalize, RandomRowsHaveUnitMoments) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(3.0, 5.0);
  Matrix m(6, 37);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  Epoch e;
  e.window = m;
  const Matrix n = normalize_epoch(e).window;
  for (Eigen::Index c = 0; c < n.rows(); ++c) {
    const double mean = n.row(c).mean();
    const double var = (n.row(c).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
  EXPECT_LT((normalize_rows(n) - n).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Preictal, SingleOnset) {
  const auto out = assign_preictal_labels(LabelSequence({0, 0, 0, 1, 1}, 2), std::vector<int>{3}, 2);
  EXPECT_EQ(out.labels(), (std::vector<int>{0, 2, 2, 1, 1}));
  EXPECT_EQ(out.n_states(), 3);
}

TEST(Preictal, HorizonClampsAtStart) {
  const auto out = assign_preictal_labels(LabelSequence({0, 1}, 2), std::vector<int>{1}, 5);
  EXPECT_EQ(out.labels(), (std::vector<int>{2, 1}));
}

TEST(Preictal, OnsetOutOfRange) {
  EXPECT_THROW(assign_preictal_labels(LabelSequence({0, 1}, 2), std::vector<int>{2}, 1), InputError);
}

TEST(Preictal, MatchesPerIndexScan) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 5 + static_cast<int>(rng() % 30);
    std::vector<int> labels(static_cast<std::size_t>(p));
    for (auto& l : labels) l = (rng() % 3 == 0) ? 1 : 0;
    const LabelSequence seq(labels, 2);
    const auto onsets = onset_positions(seq);
    const int horizon = 1 + static_cast<int>(rng() % 6);
    const auto out = assign_preictal_labels(seq, onsets, horizon).labels();
    for (int i = 0; i < p; ++i) {
      bool inside = false;
      for (int s : onsets) inside = inside || (i >= s - horizon && i < s);
      const int expected = labels[i] == 1 ? 1 : (inside ? 2 : 0);
      EXPECT_EQ(out[i], expected) << "trial " << trial << " index " << i;
    }
  }
}

TEST(Labels, RejectOutOfRange) {
  EXPECT_THROW(LabelSequence({0, 2}, 2), InputError);
  EXPECT_THROW(LabelSequence({0, 1}, 4), InputError);
  EXPECT_NO_THROW(LabelSequence({0, 2, 1}, 3));
}

TEST(Labels, MajorityVoteTiesGoToSeizure) {
  EXPECT_EQ(majority_label(std::vector<int>{0, 1}), 1);
  EXPECT_EQ(majority_label(std::vector<int>{0, 0, 1}), 0);
  EXPECT_EQ(majority_label(std::vector<int>{1, 1, 0}), 1);
}

TEST(Labels, EpochLabelsFromSamples) {
  const std::vector<int> samples = {0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  const auto labels = epoch_labels_from_samples(samples, 1.0, 2.0, 2.0);
  EXPECT_EQ(labels.labels(), (std::vector<int>{0, 1, 1, 1, 0}));
}
