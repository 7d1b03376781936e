#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tsonset/error.hpp"

namespace tsonset {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// A multichannel recording: `samples` is channels x time points.
class Recording {
 public:
  Recording(Matrix samples, double sample_rate_hz, std::vector<std::string> channel_names)
      : samples_(std::move(samples)),
        sample_rate_hz_(sample_rate_hz),
        channel_names_(std::move(channel_names)) {
    if (samples_.rows() < 1 || samples_.cols() < 1)
      throw InputError("recording needs at least one channel and one time point");
    if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_))
      throw InputError("sample rate must be positive");
    if (static_cast<Eigen::Index>(channel_names_.size()) != samples_.rows())
      throw InputError("channel name count does not match channel count");
    std::set<std::string> unique(channel_names_.begin(), channel_names_.end());
    if (unique.size() != channel_names_.size())
      throw InputError("channel names must be unique");
  }

  const Matrix& samples() const noexcept { return samples_; }
  double sample_rate_hz() const noexcept { return sample_rate_hz_; }
  const std::vector<std::string>& channel_names() const noexcept { return channel_names_; }
  Eigen::Index channels() const noexcept { return samples_.rows(); }
  Eigen::Index time_points() const noexcept { return samples_.cols(); }

 private:
  Matrix samples_;
  double sample_rate_hz_;
  std::vector<std::string> channel_names_;
};

/// One sliding-window slice of a recording (channels x L).
struct Epoch {
  Matrix window;
  int index = 0;
  double start_time_s = 0.0;
  std::optional<int> label;
};

/// Per-epoch state labels; `n_states` is 2 (normal/seizure) or 3 (adds preictal = 2).
class LabelSequence {
 public:
  LabelSequence(std::vector<int> labels, int n_states)
      : labels_(std::move(labels)), n_states_(n_states) {
    if (n_states_ != 2 && n_states_ != 3) throw InputError("n_states must be 2 or 3");
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] < 0 || labels_[i] >= n_states_)
        throw InputError("label " + std::to_string(labels_[i]) + " at index " +
                         std::to_string(i) + " outside [0, n_states)");
  }

  const std::vector<int>& labels() const noexcept { return labels_; }
  int n_states() const noexcept { return n_states_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int operator[](std::size_t i) const { return labels_[i]; }

 private:
  std::vector<int> labels_;
  int n_states_;
};

inline Eigen::Index samples_for(double seconds, double sample_rate_hz) {
  return static_cast<Eigen::Index>(std::llround(seconds * sample_rate_hz));
}

/// Slices `rec` into fixed-length epochs. Trailing samples that do not fill
/// a whole window are dropped.
inline std::vector<Epoch> segment_recording(const Recording& rec, double epoch_len_s,
                                            double stride_s) {
  if (!(epoch_len_s > 0.0) || !(stride_s > 0.0))
    throw InputError("epoch length and stride must be positive");
  const Eigen::Index len = samples_for(epoch_len_s, rec.sample_rate_hz());
  const Eigen::Index stride = samples_for(stride_s, rec.sample_rate_hz());
  if (len < 2) throw InputError("epoch must span at least 2 samples");
  if (stride < 1) throw InputError("stride must span at least 1 sample");
  const Eigen::Index total = rec.time_points();
  if (total < len)
    throw InputError("recording too short: " + std::to_string(total) +
                     " samples < epoch length " + std::to_string(len));

  const Eigen::Index count = (total - len) / stride + 1;
  std::vector<Epoch> epochs;
  epochs.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    Epoch e;
    e.window = rec.samples().middleCols(i * stride, len);
    e.index = static_cast<int>(i);
    e.start_time_s = static_cast<double>(i) * stride_s;
    epochs.push_back(std::move(e));
  }
  return epochs;
}

/// Zero mean, unit population variance per channel row. Flat rows become zeros.
inline Matrix normalize_rows(const Matrix& window) {
  Matrix out(window.rows(), window.cols());
  const double n = static_cast<double>(window.cols());
  for (Eigen::Index c = 0; c < window.rows(); ++c) {
    const double mean = window.row(c).sum() / n;
    RowVector centered = window.row(c).array() - mean;
    const double var = centered.squaredNorm() / n;
    if (var > 0.0 && std::isfinite(var))
      out.row(c) = centered / std::sqrt(var);
    else
      out.row(c).setZero();
  }
  return out;
}

inline Epoch normalize_epoch(const Epoch& e) {
  Epoch out = e;
  out.window = normalize_rows(e.window);
  return out;
}

/// Marks the `horizon_epochs` normal epochs before each onset as preictal (2).
inline LabelSequence assign_preictal_labels(const LabelSequence& labels,
                                            std::span<const int> onset_indices,
                                            int horizon_epochs) {
  if (labels.n_states() != 2) throw InputError("preictal labelling expects binary labels");
  if (horizon_epochs < 1) throw InputError("horizon must be positive");
  std::vector<int> out = labels.labels();
  const int p = static_cast<int>(out.size());
  for (int onset : onset_indices) {
    if (onset < 0 || onset >= p)
      throw InputError("onset index " + std::to_string(onset) + " out of range");
    for (int i = std::max(0, onset - horizon_epochs); i < onset; ++i)
      if (out[static_cast<std::size_t>(i)] == 0) out[static_cast<std::size_t>(i)] = 2;
  }
  return LabelSequence(std::move(out), 3);
}

/// Positions where a binary label sequence steps 0 -> 1.
inline std::vector<int> onset_positions(const LabelSequence& labels) {
  std::vector<int> onsets;
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i - 1] == 0 && labels[i] == 1) onsets.push_back(static_cast<int>(i));
  return onsets;
}

/// Epoch label from per-sample annotations: majority vote, ties go to seizure (1).
inline int majority_label(std::span<const int> sample_labels) {
  if (sample_labels.empty()) throw InputError("no annotations inside window");
  const auto seizure = std::count(sample_labels.begin(), sample_labels.end(), 1);
  const auto total = static_cast<std::ptrdiff_t>(sample_labels.size());
  return 2 * seizure >= total ? 1 : 0;
}

/// Epoch labels for the windows produced by `segment_recording` with the same
/// geometry, from one annotation per time point.
inline LabelSequence epoch_labels_from_samples(std::span<const int> sample_labels,
                                               double sample_rate_hz, double epoch_len_s,
                                               double stride_s) {
  const auto len = static_cast<std::size_t>(samples_for(epoch_len_s, sample_rate_hz));
  const auto stride = static_cast<std::size_t>(samples_for(stride_s, sample_rate_hz));
  if (len < 2 || stride < 1 || sample_labels.size() < len)
    throw InputError("annotation track too short for one epoch");
  const std::size_t count = (sample_labels.size() - len) / stride + 1;
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = majority_label(sample_labels.subspan(i * stride, len));
  return LabelSequence(std::move(out), 2);
}

}  // namespace tsonset
