#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsonset/classifier.hpp"
#include "tsonset/config.hpp"
#include "tsonset/core.hpp"
#include "tsonset/error.hpp"
#include "tsonset/evalkit.hpp"
#include "tsonset/io.hpp"
#include "tsonset/segmenter.hpp"
#include "tsonset/spectral.hpp"
#include "tsonset/ticc.hpp"

namespace tsonset::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Artifact names inside the output directory.
inline constexpr const char* kEpochs = "epochs";
inline constexpr const char* kFeatures = "features";
inline constexpr const char* kAdjacency = "adjacency";
inline constexpr const char* kClassifier = "classifier";
inline constexpr const char* kTraining = "training.json";
inline constexpr const char* kLogits = "logits";
inline constexpr const char* kClusters = "clusters";
inline constexpr const char* kAssignment = "assignment.json";
inline constexpr const char* kSegmentation = "segmentation.json";
inline constexpr const char* kTimeline = "timeline.csv";
inline constexpr const char* kAdjacencySummary = "adjacency_summary.json";
inline constexpr const char* kMetrics = "metrics.json";

struct Context {
  PipelineConfig config;
  fs::path out_dir = ".";
  bool verbose = false;
  std::ostream* log = &std::cerr;

  fs::path out(const std::string& name) const { return out_dir / name; }
  void info(const std::string& msg) const {
    if (verbose && log) *log << msg << '\n';
  }
};

/// Runs one stage, prefixing any failure with the stage name while keeping its exit code.
template <typename Fn>
decltype(auto) run_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "[" + stage + "] " + e.what());
  } catch (const json::exception& e) {
    throw Error(ExitCode::input_error, "[" + stage + "] malformed JSON: " + e.what());
  }
}

namespace detail {

inline std::vector<std::string> channel_names(const json& meta, Eigen::Index channels) {
  if (meta.contains("channels")) return meta.at("channels").get<std::vector<std::string>>();
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < channels; ++c) names.push_back("ch" + std::to_string(c));
  return names;
}

inline std::vector<EpochGraph> load_graphs(const fs::path& features_base,
                                           const fs::path& adjacency_base) {
  const auto features = io::read_tensor(features_base);
  const auto adjacency = io::read_tensor(adjacency_base);
  if (features.size() != adjacency.size())
    throw InputError("feature and adjacency files hold different epoch counts");
  const int top_k = io::read_sidecar(adjacency_base).value("top_k", 0);
  std::vector<EpochGraph> graphs(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (adjacency[i].rows() != features[i].rows() || adjacency[i].cols() != features[i].rows())
      throw InputError("adjacency shape does not match the feature channel count");
    graphs[i].nodes.features = features[i];
    graphs[i].adjacency = adjacency[i];
    graphs[i].top_k = top_k;
  }
  return graphs;
}

inline json rows_of(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline std::string number(double v) { return json(v).dump(); }

inline std::vector<int> truth_labels(const Context& ctx, const fs::path& labels_path) {
  std::vector<int> truth = io::read_labels_csv(labels_path);
  const int horizon = ctx.config.preictal_horizon_epochs;
  if (horizon <= 0) return truth;
  const LabelSequence binary(truth, 2);
  const auto onsets = onset_positions(binary);
  return assign_preictal_labels(binary, onsets, horizon).labels();
}

inline StateMap semantics_for(const Context& ctx, const std::vector<ClusterModel>& models) {
  StateMap map = ctx.config.semantics_override();
  if (map.empty()) return default_semantics(models);
  for (std::size_t k = 0; k < models.size(); ++k)
    if (!map.contains(static_cast<int>(k)))
      throw InputError("label_semantics does not cover cluster " + std::to_string(k));
  return map;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage commands

/// Reads a recording (CSV, or little-endian float32 with a JSON sidecar) and
/// writes its epochs as a P x C x L tensor.
inline fs::path cmd_segment(const Context& ctx, const fs::path& recording_path,
                            const std::optional<fs::path>& meta = std::nullopt) {
  return run_stage("segment", [&] {
    const auto& cfg = ctx.config;
    const Recording rec = [&] {
      if (recording_path.extension() == ".csv") {
        std::optional<double> rate;
        if (cfg.sample_rate_hz > 0.0) rate = cfg.sample_rate_hz;
        return io::read_recording_csv(recording_path, rate);
      }
      return io::read_recording_binary(recording_path,
                                       meta.value_or(fs::path(recording_path.string() + ".json")));
    }();
    const auto epochs = segment_recording(rec, cfg.epoch_len_s, cfg.stride_s);
    std::vector<Matrix> windows;
    std::vector<double> starts;
    for (const auto& e : epochs) {
      windows.push_back(e.window);
      starts.push_back(e.start_time_s);
    }
    fs::create_directories(ctx.out_dir);
    const fs::path base = ctx.out(kEpochs);
    io::write_tensor(base, windows, "epochs",
                     {{"channels", rec.channel_names()},
                      {"sample_rate_hz", rec.sample_rate_hz()},
                      {"epoch_len_s", cfg.epoch_len_s},
                      {"stride_s", cfg.stride_s},
                      {"start_time_s", starts}});
    ctx.info("segment: " + std::to_string(epochs.size()) + " epochs of " +
             std::to_string(rec.channels()) + " channels");
    return base;
  });
}

/// Spectral node features and top-k NCC adjacency for every epoch.
inline void cmd_features(const Context& ctx, const fs::path& epochs_base) {
  run_stage("features", [&] {
    const auto windows = io::read_tensor(epochs_base);
    if (windows.empty()) throw InputError("no epochs in " + epochs_base.string());
    const json meta = io::read_sidecar(epochs_base);
    std::vector<Epoch> epochs(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
      epochs[i].window = windows[i];
      epochs[i].index = static_cast<int>(i);
    }
    const auto graphs = build_graphs(epochs, ctx.config.top_k);
    std::vector<Matrix> features, adjacency;
    for (const auto& g : graphs) {
      features.push_back(g.nodes.features);
      adjacency.push_back(g.adjacency);
    }
    const json extra = {{"channels", detail::channel_names(meta, windows.front().rows())},
                        {"top_k", ctx.config.top_k}};
    fs::create_directories(ctx.out_dir);
    io::write_tensor(ctx.out(kFeatures), features, "features", extra);
    io::write_tensor(ctx.out(kAdjacency), adjacency, "adjacency", extra);
    ctx.info("features: " + std::to_string(graphs.size()) + " graphs, top_k=" +
             std::to_string(ctx.config.top_k));
  });
}

inline void cmd_train(const Context& ctx, const fs::path& features_base,
                      const fs::path& adjacency_base, const fs::path& labels_path) {
  run_stage("train-classifier", [&] {
    const auto labels = io::read_labels_csv(labels_path);
    const auto graphs = detail::load_graphs(features_base, adjacency_base);
    if (labels.size() != graphs.size())
      throw InputError("labels file has " + std::to_string(labels.size()) + " epochs, features have " +
                       std::to_string(graphs.size()));
    const auto& cfg = ctx.config;
    const ClassifierShape shape = cfg.classifier_shape(static_cast<int>(graphs.front().nodes.bins()));
    const TrainResult result = train(graphs, labels, shape, cfg.train_config());
    const json hyper = {{"learning_rate", cfg.learning_rate},
                        {"batch_size", cfg.batch_size},
                        {"max_epochs", cfg.max_epochs},
                        {"patience", cfg.patience},
                        {"seed", cfg.seed},
                        {"top_k", cfg.top_k}};
    save_params(ctx.out(kClassifier), result.params, hyper);
    const double accuracy = training_accuracy(graphs, labels, result.params);
    io::write_json(ctx.out(kTraining), {{"loss_trace", result.loss_trace},
                                        {"epochs_run", result.epochs_run},
                                        {"early_stopped", result.early_stopped},
                                        {"training_accuracy", accuracy}});
    ctx.info("train-classifier: " + std::to_string(result.epochs_run) +
             " passes, training accuracy " + detail::number(accuracy));
  });
}

inline void cmd_logits(const Context& ctx, const fs::path& classifier_dir,
                       const fs::path& features_base, const fs::path& adjacency_base) {
  run_stage("logits", [&] {
    const ClassifierParams params = load_params(classifier_dir);
    const auto graphs = detail::load_graphs(features_base, adjacency_base);
    if (graphs.front().nodes.bins() != params.shape.bins)
      throw InputError("classifier expects " + std::to_string(params.shape.bins) +
                       " frequency bins, features have " +
                       std::to_string(graphs.front().nodes.bins()));
    const Matrix logits = emit_logits(params, graphs);
    const json meta = io::read_sidecar(features_base);
    io::write_matrix(ctx.out(kLogits), logits, "logits",
                     {{"channels", detail::channel_names(meta, logits.cols())}});
    ctx.info("logits: " + std::to_string(logits.rows()) + " x " + std::to_string(logits.cols()));
  });
}

/// EM clustering of a (time x channels) series, usually the channel logits.
inline void cmd_cluster(const Context& ctx, const fs::path& series_base) {
  run_stage("cluster", [&] {
    const auto& cfg = ctx.config;
    const Matrix series = io::read_matrix(series_base);
    const StackedWindows windows = stack_windows(series, cfg.omega);
    const EmResult fit = em_fit(windows, cfg.em_config());
    if (cfg.strict_convergence) {
      if (!fit.converged)
        throw NumericalError("EM did not converge within " + std::to_string(cfg.max_em_iter) +
                             " iterations");
      for (std::size_t k = 0; k < fit.models.size(); ++k)
        if (!fit.models[k].converged)
          throw NumericalError("ADMM for cluster " + std::to_string(k) + " did not converge");
    }
    const fs::path dir = ctx.out(kClusters);
    fs::create_directories(dir);
    json clusters = json::array();
    for (std::size_t k = 0; k < fit.models.size(); ++k) {
      const std::string stem = "cluster_" + std::to_string(k);
      save_cluster_model(dir / stem, fit.models[k], cfg.lambda);
      clusters.push_back({{"id", k},
                          {"n_assigned", fit.models[k].n_assigned},
                          {"model", std::string(kClusters) + "/" + stem},
                          {"theta_file", std::string(kClusters) + "/" + stem + "_theta.f64"},
                          {"admm_converged", fit.models[k].converged},
                          {"admm_iterations", fit.models[k].iterations}});
    }
    io::write_json(ctx.out(kAssignment),
                   {{"omega", cfg.omega},
                    {"beta", cfg.beta},
                    {"lambda", cfg.lambda},
                    {"k", fit.k_final},
                    {"window_labels", fit.assignment.labels},
                    {"clusters", clusters},
                    {"em",
                     {{"iterations", fit.n_iterations},
                      {"objective_trace", fit.objective_trace},
                      {"converged", fit.converged},
                      {"initializer", fit.initializer},
                      {"k_reduced", fit.k_reduced},
                      {"reseeds", fit.reseeds}}}});
    ctx.info("cluster: K=" + std::to_string(fit.k_final) + " after " +
             std::to_string(fit.n_iterations) + " EM iterations (" + fit.initializer + " start)");
  });
}

/// Turns a cluster assignment into subsequences and onsets, plus the
/// per-epoch timeline and a per-cluster connectivity summary: the lag-0
/// precision block A(0) and, when the epoch graphs are given, their mean.
inline void cmd_detect(const Context& ctx, const fs::path& assignment_path,
                       const std::optional<fs::path>& labels_path = std::nullopt,
                       const std::optional<fs::path>& adjacency_base = std::nullopt) {
  run_stage("detect", [&] {
    const json assignment = io::read_json(assignment_path);
    const fs::path root = assignment_path.parent_path();
    const int omega = assignment.at("omega").get<int>();
    const auto window_labels = assignment.at("window_labels").get<std::vector<int>>();
    std::vector<ClusterModel> models;
    for (const auto& c : assignment.at("clusters"))
      models.push_back(load_cluster_model(root / c.at("model").get<std::string>()));
    const StateMap semantics = detail::semantics_for(ctx, models);
    const Segmentation seg = extract_onsets(window_labels, omega, ctx.config.stride_s, semantics);

    json clusters = json::array();
    for (const auto& c : assignment.at("clusters")) {
      const int id = c.at("id").get<int>();
      clusters.push_back({{"id", id},
                          {"semantics", to_string(semantics.at(id))},
                          {"n_assigned", c.at("n_assigned")},
                          {"theta_file", c.at("theta_file")}});
    }
    json subsequences = json::array();
    for (const auto& s : seg.subsequences)
      subsequences.push_back({{"cluster", s.cluster},
                              {"semantics", to_string(semantics.at(s.cluster))},
                              {"start_epoch", s.start_epoch},
                              {"end_epoch", s.end_epoch}});
    json onsets = json::array();
    for (const auto& t : seg.onsets)
      onsets.push_back({{"type", t.type},
                        {"epoch", t.epoch},
                        {"time_s", t.time_s},
                        {"from_cluster", t.from_cluster},
                        {"to_cluster", t.to_cluster}});
    const json& em = assignment.at("em");
    io::write_json(ctx.out(kSegmentation),
                   {{"omega", omega},
                    {"stride_s", ctx.config.stride_s},
                    {"n_epochs", seg.epoch_labels.size()},
                    {"clusters", clusters},
                    {"subsequences", subsequences},
                    {"onsets", onsets},
                    {"em",
                     {{"iterations", em.at("iterations")},
                      {"objective_trace", em.at("objective_trace")},
                      {"converged", em.at("converged")}}}});

    std::vector<int> truth;
    if (labels_path) {
      truth = detail::truth_labels(ctx, *labels_path);
      if (truth.size() != seg.epoch_labels.size())
        throw InputError("labels file has " + std::to_string(truth.size()) +
                         " epochs, segmentation has " + std::to_string(seg.epoch_labels.size()));
    }
    auto timeline = io::open_out(ctx.out(kTimeline));
    timeline << "epoch,time_s,true_label,pred_cluster,semantics\n";
    for (std::size_t i = 0; i < seg.epoch_labels.size(); ++i) {
      const int cluster = seg.epoch_labels[i];
      timeline << i << ',' << detail::number(static_cast<double>(i) * ctx.config.stride_s) << ','
               << (truth.empty() ? std::string() : std::to_string(truth[i])) << ',' << cluster << ','
               << to_string(semantics.at(cluster)) << '\n';
    }

    std::vector<Matrix> adjacency;
    json channels;
    if (adjacency_base) {
      adjacency = io::read_tensor(*adjacency_base);
      if (adjacency.size() != seg.epoch_labels.size())
        throw InputError("adjacency file has " + std::to_string(adjacency.size()) +
                         " epochs, segmentation has " + std::to_string(seg.epoch_labels.size()));
      channels = detail::channel_names(io::read_sidecar(*adjacency_base), adjacency.front().rows());
    } else {
      channels = detail::channel_names(json::object(), models.front().channels);
    }
    json states = json::array();
    for (const auto& [cluster, state] : semantics) {
      const ClusterModel& m = models[static_cast<std::size_t>(cluster)];
      json entry = {{"cluster", cluster},
                    {"semantics", to_string(state)},
                    {"lag0_precision", detail::rows_of(m.theta.topLeftCorner(m.channels, m.channels))},
                    {"lag0_support", detail::rows_of(lag0_support(m).cast<double>())}};
      if (!adjacency.empty()) {
        Matrix sum = Matrix::Zero(adjacency.front().rows(), adjacency.front().cols());
        int n = 0;
        for (std::size_t i = 0; i < adjacency.size(); ++i)
          if (seg.epoch_labels[i] == cluster) {
            sum += adjacency[i];
            ++n;
          }
        if (n > 0) sum /= static_cast<double>(n);
        entry["n_epochs"] = n;
        entry["mean_graph_adjacency"] = detail::rows_of(sum);
      }
      states.push_back(std::move(entry));
    }
    io::write_json(ctx.out(kAdjacencySummary), {{"channels", channels}, {"states", states}});
    ctx.info("detect: " + std::to_string(seg.subsequences.size()) + " subsequences, " +
             std::to_string(seg.onsets.size()) + " transitions");
  });
}

inline eval::MetricsReport cmd_eval(const Context& ctx, const fs::path& segmentation_path,
                                    const fs::path& truth_path) {
  return run_stage("eval", [&] {
    const json seg = io::read_json(segmentation_path);
    std::vector<Subsequence> runs;
    for (const auto& s : seg.at("subsequences"))
      runs.push_back({s.at("cluster").get<int>(), s.at("start_epoch").get<int>(),
                      s.at("end_epoch").get<int>()});
    const auto pred = run_length_decode(runs);
    const auto truth = detail::truth_labels(ctx, truth_path);
    if (truth.size() != pred.size())
      throw InputError("truth has " + std::to_string(truth.size()) + " epochs, prediction has " +
                       std::to_string(pred.size()));
    const auto report = eval::evaluate(truth, pred);
    json confusion = json::array();
    for (Eigen::Index r = 0; r < report.confusion.rows(); ++r) {
      std::vector<int> row(static_cast<std::size_t>(report.confusion.cols()));
      for (Eigen::Index c = 0; c < report.confusion.cols(); ++c)
        row[static_cast<std::size_t>(c)] = report.confusion(r, c);
      confusion.push_back(row);
    }
    fs::create_directories(ctx.out_dir);
    io::write_json(ctx.out(kMetrics), {{"n_epochs", pred.size()},
                                       {"nmi", report.nmi},
                                       {"ari", report.ari},
                                       {"acc", report.acc},
                                       {"confusion", confusion}});
    ctx.info("eval: nmi=" + detail::number(report.nmi) + " ari=" + detail::number(report.ari) +
             " acc=" + detail::number(report.acc));
    return report;
  });
}

/// Synthetic inputs. "series": the two-state Gaussian benchmark as a matrix
/// plus per-row truth. "recording": a fake recording CSV with per-epoch labels.
inline void cmd_synth(const Context& ctx, const std::string& kind) {
  run_stage("synth", [&] {
    fs::create_directories(ctx.out_dir);
    if (kind == "series") {
      const auto data = eval::generate_synthetic(eval::make_scenario_a(ctx.config.seed));
      io::write_matrix(ctx.out("series"), data.series, "series",
                       {{"change_points", data.change_points}});
      io::write_labels_csv(ctx.out("series_labels.csv"), data.truth);
    } else if (kind == "recording") {
      const auto data = eval::make_synthetic_recording(ctx.config.seed, 4, 32.0, ctx.config.epoch_len_s);
      io::write_recording_csv(ctx.out("recording.csv"), data.recording);
      io::write_labels_csv(ctx.out("labels.csv"), data.epoch_labels);
    } else {
      throw InputError("unknown synth kind '" + kind + "' (expected series or recording)");
    }
    ctx.info("synth: wrote " + kind);
  });
}

/// segment -> features -> train-classifier -> logits -> cluster -> detect -> eval.
/// With `logits_base` the classifier stages are skipped and clustering starts
/// from the supplied logits.
inline eval::MetricsReport cmd_pipeline(const Context& ctx, const std::optional<fs::path>& recording,
                                        const fs::path& labels_path,
                                        const std::optional<fs::path>& logits_base = std::nullopt,
                                        const std::optional<fs::path>& meta = std::nullopt) {
  ctx.config.validate();
  if (!fs::exists(labels_path)) throw InputError("[pipeline] labels file not found: " + labels_path.string());
  fs::create_directories(ctx.out_dir);
  std::optional<fs::path> adjacency;
  fs::path series;
  if (logits_base) {
    series = *logits_base;
  } else {
    if (!recording) throw InputError("[pipeline] a recording is required unless logits are supplied");
    const fs::path epochs = cmd_segment(ctx, *recording, meta);
    cmd_features(ctx, epochs);
    cmd_train(ctx, ctx.out(kFeatures), ctx.out(kAdjacency), labels_path);
    cmd_logits(ctx, ctx.out(kClassifier), ctx.out(kFeatures), ctx.out(kAdjacency));
    adjacency = ctx.out(kAdjacency);
    series = ctx.out(kLogits);
  }
  cmd_cluster(ctx, series);
  cmd_detect(ctx, ctx.out(kAssignment), labels_path, adjacency);
  return cmd_eval(ctx, ctx.out(kSegmentation), labels_path);
}

}  // namespace tsonset::cli
