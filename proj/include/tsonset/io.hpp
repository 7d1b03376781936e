#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsonset/core.hpp"

namespace tsonset::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Text helpers

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_double(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": cannot parse number '" + text + "'");
  }
}

inline long long parse_int(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": cannot parse integer '" + text + "'");
  }
}

inline std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

inline json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Recordings

/// CSV recording: header row of channel names, one row per time point. A
/// leading column named "time" is skipped. When the time column is present and
/// `sample_rate_hz` is not given, the rate is inferred from its spacing.
inline Recording read_recording_csv(const fs::path& path,
                                    std::optional<double> sample_rate_hz = std::nullopt) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  auto header = split_csv_line(line);
  const bool has_time = !header.empty() && header.front() == "time";
  std::vector<std::string> names(header.begin() + (has_time ? 1 : 0), header.end());
  if (names.empty()) throw InputError(path.string() + ": no channel columns");

  std::vector<std::vector<double>> columns(names.size());
  std::vector<double> times;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::size_t col = 0;
    if (has_time) times.push_back(parse_double(fields[col++], where));
    for (std::size_t c = 0; c < names.size(); ++c)
      columns[c].push_back(parse_double(fields[col++], where));
  }
  if (columns.front().empty()) throw InputError(path.string() + ": no samples");

  double rate = 0.0;
  if (sample_rate_hz) {
    rate = *sample_rate_hz;
  } else if (times.size() >= 2) {
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(dt > 0.0)) throw InputError(path.string() + ": time column is not increasing");
    rate = 1.0 / dt;
  } else {
    throw InputError(path.string() + ": sample rate unknown (no time column, none configured)");
  }

  Matrix samples(static_cast<Eigen::Index>(names.size()),
                 static_cast<Eigen::Index>(columns.front().size()));
  for (std::size_t c = 0; c < names.size(); ++c)
    samples.row(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const RowVector>(columns[c].data(), static_cast<Eigen::Index>(columns[c].size()));
  return Recording(std::move(samples), rate, std::move(names));
}

/// Raw little-endian float32, row-major time x channels, with a JSON sidecar
/// `{channels: [...], sample_rate_hz: ...}`.
inline Recording read_recording_binary(const fs::path& path, const fs::path& meta_path) {
  const json meta = read_json(meta_path);
  if (!meta.contains("channels") || !meta["channels"].is_array() ||
      !meta.contains("sample_rate_hz") || !meta["sample_rate_hz"].is_number())
    throw InputError(meta_path.string() + ": needs 'channels' array and 'sample_rate_hz'");
  auto names = meta["channels"].get<std::vector<std::string>>();
  const double rate = meta["sample_rate_hz"].get<double>();
  if (names.empty()) throw InputError(meta_path.string() + ": no channels");

  auto in = open_in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::size_t frame = 4 * names.size();
  if (bytes.empty()) throw InputError(path.string() + ": empty file");
  if (bytes.size() % frame != 0)
    throw InputError(path.string() + ": truncated at byte " +
                     std::to_string(bytes.size() - bytes.size() % frame) + " (size " +
                     std::to_string(bytes.size()) + " is not a multiple of " +
                     std::to_string(frame) + ")");
  const auto t = static_cast<Eigen::Index>(bytes.size() / frame);
  const auto c = static_cast<Eigen::Index>(names.size());
  Matrix samples(c, t);
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * b);
      samples(ch, i) = static_cast<double>(std::bit_cast<float>(u));
    }
  return Recording(std::move(samples), rate, std::move(names));
}

inline void write_recording_csv(const fs::path& path, const Recording& rec) {
  auto out = open_out(path);
  out << "time";
  for (const auto& n : rec.channel_names()) out << ',' << n;
  out << '\n';
  out.precision(17);
  for (Eigen::Index t = 0; t < rec.time_points(); ++t) {
    out << static_cast<double>(t) / rec.sample_rate_hz();
    for (Eigen::Index c = 0; c < rec.channels(); ++c) out << ',' << rec.samples()(c, t);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Labels: CSV with columns epoch_index,label

inline std::vector<int> read_labels_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  auto header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "epoch_index" || header[1] != "label")
    throw InputError(path.string() + ": header must be 'epoch_index,label'");
  std::vector<std::pair<long long, int>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 2) throw InputError(where + ": expected 2 fields");
    rows.emplace_back(parse_int(f[0], where), static_cast<int>(parse_int(f[1], where)));
  }
  std::vector<int> labels(rows.size(), -1);
  for (const auto& [idx, lab] : rows) {
    if (idx < 0 || idx >= static_cast<long long>(rows.size()) || labels[static_cast<std::size_t>(idx)] != -1)
      throw InputError(path.string() + ": epoch indices must be a permutation of 0..P-1");
    labels[static_cast<std::size_t>(idx)] = lab;
  }
  return labels;
}

inline void write_labels_csv(const fs::path& path, std::span<const int> labels) {
  auto out = open_out(path);
  out << "epoch_index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
}

// ---------------------------------------------------------------------------
// Matrices and tensors: little-endian float64, row-major, with a JSON sidecar
// {name, shape, dtype, byte_order, layout}. `base` gets ".f64" and ".json".

inline fs::path data_path(const fs::path& base) { return fs::path(base.string() + ".f64"); }
inline fs::path meta_path(const fs::path& base) { return fs::path(base.string() + ".json"); }

namespace detail {

inline void put_f64(std::ostream& out, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::vector<double> read_f64_file(const fs::path& path, std::size_t expected) {
  auto in = open_in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() != expected * 8)
    throw InputError(path.string() + ": expected " + std::to_string(expected * 8) +
                     " bytes, found " + std::to_string(bytes.size()));
  std::vector<double> values(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[8 * k + b]) << (8 * b);
    values[k] = std::bit_cast<double>(u);
  }
  return values;
}

inline json sidecar(const std::string& name, std::vector<std::int64_t> shape, json extra) {
  json j = {{"name", name},
            {"shape", shape},
            {"dtype", "float64"},
            {"byte_order", "little"},
            {"layout", "row-major"}};
  if (extra.is_object())
    for (auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

inline std::vector<std::int64_t> read_shape(const fs::path& base, std::size_t rank) {
  const json meta = read_json(meta_path(base));
  if (!meta.contains("shape") || !meta["shape"].is_array() || meta["shape"].size() != rank)
    throw InputError(meta_path(base).string() + ": expected a rank-" + std::to_string(rank) +
                     " shape");
  auto shape = meta["shape"].get<std::vector<std::int64_t>>();
  for (auto s : shape)
    if (s < 0) throw InputError(meta_path(base).string() + ": negative extent");
  return shape;
}

}  // namespace detail

inline void write_matrix(const fs::path& base, const Matrix& m, const std::string& name,
                         const json& extra = json::object()) {
  auto out = open_out(data_path(base), std::ios::binary);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_f64(out, m(r, c));
  write_json(meta_path(base), detail::sidecar(name, {m.rows(), m.cols()}, extra));
}

inline Matrix read_matrix(const fs::path& base) {
  const auto shape = detail::read_shape(base, 2);
  const auto values =
      detail::read_f64_file(data_path(base), static_cast<std::size_t>(shape[0] * shape[1]));
  Matrix m(shape[0], shape[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
  return m;
}

/// Rank-3 tensor stored as a stack of equally shaped matrices.
inline void write_tensor(const fs::path& base, const std::vector<Matrix>& slices,
                         const std::string& name, const json& extra = json::object()) {
  const Eigen::Index rows = slices.empty() ? 0 : slices.front().rows();
  const Eigen::Index cols = slices.empty() ? 0 : slices.front().cols();
  auto out = open_out(data_path(base), std::ios::binary);
  for (const auto& m : slices) {
    if (m.rows() != rows || m.cols() != cols)
      throw InvariantError("tensor slices must share a shape");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) detail::put_f64(out, m(r, c));
  }
  write_json(meta_path(base),
             detail::sidecar(name, {static_cast<std::int64_t>(slices.size()), rows, cols}, extra));
}

inline std::vector<Matrix> read_tensor(const fs::path& base) {
  const auto shape = detail::read_shape(base, 3);
  const auto values = detail::read_f64_file(
      data_path(base), static_cast<std::size_t>(shape[0] * shape[1] * shape[2]));
  std::vector<Matrix> slices(static_cast<std::size_t>(shape[0]), Matrix(shape[1], shape[2]));
  std::size_t k = 0;
  for (auto& m : slices)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
  return slices;
}

inline json read_sidecar(const fs::path& base) { return read_json(meta_path(base)); }

}  // namespace tsonset::io
