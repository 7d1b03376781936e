#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsonset/commands.hpp"

namespace fs = std::filesystem;
using tsonset::cli::Context;

namespace {

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

fs::path or_default(const std::string& s, const fs::path& fallback) {
  return s.empty() ? fallback : fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State-transition detection in multichannel time series"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = ".";
  bool verbose = false;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--out-dir", out_dir, "directory for all artifacts");
  app.add_flag("-v,--verbose", verbose, "progress messages on stderr");

  // One flag per config key; flags win over the config file.
  std::map<std::string, std::string> overrides;
  for (const auto& [key, setter] : tsonset::PipelineConfig::setters())
    app.add_option("--" + key, overrides[key])->group("Config overrides");

  std::string recording, meta, labels, epochs, features, adjacency, classifier, series,
      assignment, pred, truth, kind, logits;
  bool skip_classifier = false;

  auto* segment = app.add_subcommand("segment", "cut a recording into epochs");
  segment->add_option("--recording", recording, "CSV or float32 binary recording")->required();
  segment->add_option("--meta", meta, "JSON sidecar for binary input (default: <recording>.json)");

  auto* feat = app.add_subcommand("features", "spectral node features and adjacency per epoch");
  feat->add_option("--epochs", epochs, "epoch tensor base path (default: <out-dir>/epochs)");

  auto* train = app.add_subcommand("train-classifier", "fit the channel classifier");
  train->add_option("--features", features, "default: <out-dir>/features");
  train->add_option("--adjacency", adjacency, "default: <out-dir>/adjacency");
  train->add_option("--labels", labels, "epoch labels CSV")->required();

  auto* logit = app.add_subcommand("logits", "emit per-channel seizure probabilities");
  logit->add_option("--classifier", classifier, "default: <out-dir>/classifier");
  logit->add_option("--features", features, "default: <out-dir>/features");
  logit->add_option("--adjacency", adjacency, "default: <out-dir>/adjacency");

  auto* cluster = app.add_subcommand("cluster", "Toeplitz graphical-lasso clustering of a series");
  cluster->add_option("--series,--logits", series, "time x channel matrix (default: <out-dir>/logits)");

  auto* detect = app.add_subcommand("detect", "subsequences, onsets and report files");
  detect->add_option("--assignment", assignment, "default: <out-dir>/assignment.json");
  detect->add_option("--labels", labels, "epoch labels CSV for the timeline");
  detect->add_option("--adjacency", adjacency, "adjacency tensor for the connectivity summary");

  auto* ev = app.add_subcommand("eval", "NMI, ARI and matched accuracy");
  ev->add_option("--pred", pred, "segmentation JSON (default: <out-dir>/segmentation.json)");
  ev->add_option("--truth", truth, "epoch labels CSV")->required();

  auto* synth = app.add_subcommand("synth", "write synthetic inputs");
  synth->add_option("--kind", kind, "series or recording")->required();

  auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
  pipeline->add_option("--recording", recording, "CSV or float32 binary recording");
  pipeline->add_option("--meta", meta, "JSON sidecar for binary input");
  pipeline->add_option("--labels", labels, "epoch labels CSV")->required();
  pipeline->add_option("--logits", logits, "precomputed logits matrix base path");
  pipeline->add_flag("--skip-classifier", skip_classifier, "cluster the supplied --logits directly");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(tsonset::ExitCode::input_error);
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.config.load_file(config_path);
    for (const auto& [key, value] : overrides)
      if (!value.empty()) ctx.config.set(key, value);
    ctx.config.validate();
    ctx.out_dir = out_dir;
    ctx.verbose = verbose;

    if (*segment) {
      tsonset::cli::cmd_segment(ctx, recording, optional_path(meta));
    } else if (*feat) {
      tsonset::cli::cmd_features(ctx, or_default(epochs, ctx.out(tsonset::cli::kEpochs)));
    } else if (*train) {
      tsonset::cli::cmd_train(ctx, or_default(features, ctx.out(tsonset::cli::kFeatures)),
                              or_default(adjacency, ctx.out(tsonset::cli::kAdjacency)), labels);
    } else if (*logit) {
      tsonset::cli::cmd_logits(ctx, or_default(classifier, ctx.out(tsonset::cli::kClassifier)),
                               or_default(features, ctx.out(tsonset::cli::kFeatures)),
                               or_default(adjacency, ctx.out(tsonset::cli::kAdjacency)));
    } else if (*cluster) {
      tsonset::cli::cmd_cluster(ctx, or_default(series, ctx.out(tsonset::cli::kLogits)));
    } else if (*detect) {
      tsonset::cli::cmd_detect(ctx, or_default(assignment, ctx.out(tsonset::cli::kAssignment)),
                               optional_path(labels), optional_path(adjacency));
    } else if (*ev) {
      const auto report = tsonset::cli::cmd_eval(
          ctx, or_default(pred, ctx.out(tsonset::cli::kSegmentation)), truth);
      std::cout << "nmi " << report.nmi << "\nari " << report.ari << "\nacc " << report.acc << '\n';
    } else if (*synth) {
      tsonset::cli::cmd_synth(ctx, kind);
    } else if (*pipeline) {
      if (skip_classifier && logits.empty())
        throw tsonset::InputError("--skip-classifier needs --logits");
      if (!logits.empty() && !skip_classifier)
        throw tsonset::InputError("--logits is only used together with --skip-classifier");
      const auto report = tsonset::cli::cmd_pipeline(ctx, optional_path(recording), labels,
                                                     optional_path(logits), optional_path(meta));
      std::cout << "nmi " << report.nmi << "\nari " << report.ari << "\nacc " << report.acc << '\n';
    }
  } catch (const tsonset::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(tsonset::ExitCode::invariant_violation);
  }
  return 0;
}
