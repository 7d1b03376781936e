#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsonset/classifier.hpp"
#include "tsonset/error.hpp"
#include "tsonset/io.hpp"
#include "tsonset/segmenter.hpp"

namespace tsonset {

/// Every tunable of the pipeline. Loaded from a flat `key = value` file and
/// overridden by command-line flags of the same name.
struct PipelineConfig {
  // epochs
  double epoch_len_s = 2.0;
  double stride_s = 2.0;
  double sample_rate_hz = 0.0;  // only needed for CSV input without a time column
  // graph + classifier
  int top_k = 3;
  int k_diff = 2;
  int embed = 8;
  int hidden = 16;
  double learning_rate = 0.1;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 0;
  // clustering
  int omega = 1;
  double beta = 10.0;
  double lambda = 0.05;
  int k = 2;
  int max_em_iter = 100;
  double rho = 1.0;
  int admm_max_iter = 1000;
  double eps_abs = 1e-5;
  double eps_rel = 1e-4;
  int moment_radius = 5;
  int strict_convergence = 0;  // 1 turns any ADMM or EM non-convergence into a numerical failure
  // evaluation / semantics
  int preictal_horizon_epochs = 0;  // > 0 relabels truth into 3 states for evaluation
  std::string label_semantics;      // e.g. "0:normal,1:seizure"; empty = order by mean logit

  using Setter = std::function<void(PipelineConfig&, const std::string&)>;

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
      std::map<std::string, Setter> t;
      auto real = [](double PipelineConfig::*field) {
        return [field](PipelineConfig& c, const std::string& v) {
          c.*field = io::parse_double(v, "config");
        };
      };
      auto integer = [](int PipelineConfig::*field) {
        return [field](PipelineConfig& c, const std::string& v) {
          c.*field = static_cast<int>(io::parse_int(v, "config"));
        };
      };
      t["epoch_len_s"] = real(&PipelineConfig::epoch_len_s);
      t["stride_s"] = real(&PipelineConfig::stride_s);
      t["sample_rate_hz"] = real(&PipelineConfig::sample_rate_hz);
      t["top_k"] = integer(&PipelineConfig::top_k);
      t["k_diff"] = integer(&PipelineConfig::k_diff);
      t["embed"] = integer(&PipelineConfig::embed);
      t["hidden"] = integer(&PipelineConfig::hidden);
      t["learning_rate"] = real(&PipelineConfig::learning_rate);
      t["batch_size"] = integer(&PipelineConfig::batch_size);
      t["max_epochs"] = integer(&PipelineConfig::max_epochs);
      t["patience"] = integer(&PipelineConfig::patience);
      t["seed"] = [](PipelineConfig& c, const std::string& v) {
        const long long s = io::parse_int(v, "config");
        if (s < 0) throw InputError("seed must be non-negative");
        c.seed = static_cast<std::uint64_t>(s);
      };
      t["omega"] = integer(&PipelineConfig::omega);
      t["beta"] = real(&PipelineConfig::beta);
      t["lambda"] = real(&PipelineConfig::lambda);
      t["k"] = integer(&PipelineConfig::k);
      t["max_em_iter"] = integer(&PipelineConfig::max_em_iter);
      t["rho"] = real(&PipelineConfig::rho);
      t["admm_max_iter"] = integer(&PipelineConfig::admm_max_iter);
      t["eps_abs"] = real(&PipelineConfig::eps_abs);
      t["eps_rel"] = real(&PipelineConfig::eps_rel);
      t["moment_radius"] = integer(&PipelineConfig::moment_radius);
      t["strict_convergence"] = integer(&PipelineConfig::strict_convergence);
      t["preictal_horizon_epochs"] = integer(&PipelineConfig::preictal_horizon_epochs);
      t["label_semantics"] = [](PipelineConfig& c, const std::string& v) { c.label_semantics = v; };
      return t;
    }();
    return table;
  }

  void set(const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw InputError("unknown config key '" + key + "'");
    it->second(*this, value);
  }

  /// Reads `key = value` lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    auto in = io::open_in(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = io::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
      try {
        set(io::trim(line.substr(0, eq)), io::trim(line.substr(eq + 1)));
      } catch (const InputError& e) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw InputError(std::string("invalid config: ") + what);
    };
    require(epoch_len_s > 0.0, "epoch_len_s must be positive");
    require(stride_s > 0.0, "stride_s must be positive");
    require(sample_rate_hz >= 0.0, "sample_rate_hz must be non-negative");
    require(top_k >= 1, "top_k must be >= 1");
    require(k_diff >= 0, "k_diff must be >= 0");
    require(embed >= 1 && hidden >= 1, "embed and hidden must be >= 1");
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(max_epochs >= 0 && patience >= 1, "max_epochs >= 0 and patience >= 1");
    require(omega >= 1, "omega must be >= 1");
    require(beta >= 0.0, "beta must be >= 0");
    require(lambda >= 0.0, "lambda must be >= 0");
    require(k >= 1, "k must be >= 1");
    require(max_em_iter >= 1, "max_em_iter must be >= 1");
    require(rho > 0.0 && eps_abs > 0.0 && eps_rel > 0.0 && admm_max_iter >= 1,
            "ADMM settings must be positive");
    require(strict_convergence == 0 || strict_convergence == 1, "strict_convergence must be 0 or 1");
    require(preictal_horizon_epochs >= 0, "preictal_horizon_epochs must be >= 0");
  }

  ClassifierShape classifier_shape(int bins) const {
    return ClassifierShape{bins, embed, hidden, k_diff};
  }

  TrainConfig train_config() const {
    return TrainConfig{learning_rate, batch_size, max_epochs, patience, seed};
  }

  EmConfig em_config() const {
    EmConfig cfg;
    cfg.k = k;
    cfg.beta = beta;
    cfg.glasso.lambda = lambda;
    cfg.glasso.rho = rho;
    cfg.glasso.max_iter = admm_max_iter;
    cfg.glasso.eps_abs = eps_abs;
    cfg.glasso.eps_rel = eps_rel;
    cfg.max_em_iter = max_em_iter;
    cfg.seed = seed;
    cfg.moment_radius = moment_radius;
    return cfg;
  }

  /// Parses "id:state,id:state"; empty string yields an empty map.
  StateMap semantics_override() const {
    StateMap map;
    if (label_semantics.empty()) return map;
    std::istringstream in(label_semantics);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos)
        throw InputError("label_semantics entries must look like id:state");
      const int id = static_cast<int>(io::parse_int(io::trim(item.substr(0, colon)), "label_semantics"));
      map[id] = state_from_string(io::trim(item.substr(colon + 1)));
    }
    return map;
  }
};

}  // namespace tsonset
