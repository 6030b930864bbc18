#pragma once

// Pipeline configuration read from JSON. Missing keys take the defaults
// below; unknown keys are rejected so a typo never passes silently.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dataset.hpp"
#include "hough.hpp"
#include "nn/adam.hpp"
#include "nn/model.hpp"

namespace coinforge {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathsConfig {
  std::string raw_dir = "raw";
  std::string cleaned_dir = "cleaned";
  std::string augmented_dir = "augmented";
  std::string manifest_path = "manifest.tsv";
  std::string split_manifest_path = "split.tsv";
  std::string model_dir = "model";
  std::string eval_dir = "eval";
  std::string report_dir = "report";
};

struct CleanConfig {
  DetectParams detect;
  double margin = 1.10;
  double max_skip_fraction = 0.01;
};

struct SplitConfig {
  double fraction = 0.33;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::grouped;
};

struct TrainConfig {
  std::string model = "coinnet-s";
  int num_classes = 6;
  int epochs = 30;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  // Unset means "the last epoch".
  std::optional<int> snapshot_epoch;
};

struct PipelineConfig {
  PathsConfig paths;
  CleanConfig clean;
  SplitConfig split;
  TrainConfig train;
  EvalConfig eval;

  int snapshot_epoch() const { return eval.snapshot_epoch.value_or(train.epochs); }

  void validate() const {
    try {
      clean.detect.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(clean.margin > 0.0)) throw ConfigError("clean.margin must be positive");
    if (!(clean.max_skip_fraction >= 0.0 && clean.max_skip_fraction <= 1.0)) {
      throw ConfigError("clean.max_skip_fraction must lie in [0, 1]");
    }
    if (!(split.fraction > 0.0 && split.fraction < 1.0)) throw ConfigError("split.fraction must lie in (0, 1)");
    if (train.num_classes != 6 && train.num_classes != 3) throw ConfigError("train.num_classes must be 6 or 3");
    if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(train.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0 && train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) {
      throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (!(train.adam.epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
    try {
      nn::model_by_name(train.model, static_cast<std::size_t>(train.num_classes));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train.model: ") + e.what());
    }
    const int snap = snapshot_epoch();
    if (snap < 0 || snap > train.epochs) {
      throw ConfigError("eval.snapshot_epoch " + std::to_string(snap) + " outside 0.." + std::to_string(train.epochs));
    }
  }
};

namespace detail {

// Reads the keys of one object, rejecting anything not consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(path(key) + " must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path(key) + " must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path(key) + " must be a number");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + " has the wrong type");
    }
  }

  const nlohmann::json* object(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + (where_.empty() ? k : where_ + "." + k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  detail::ObjectReader top(j, "");
  if (const auto* p = top.object("paths")) {
    detail::ObjectReader r(*p, "paths");
    r.get("raw_dir", c.paths.raw_dir);
    r.get("cleaned_dir", c.paths.cleaned_dir);
    r.get("augmented_dir", c.paths.augmented_dir);
    r.get("manifest_path", c.paths.manifest_path);
    r.get("split_manifest_path", c.paths.split_manifest_path);
    r.get("model_dir", c.paths.model_dir);
    r.get("eval_dir", c.paths.eval_dir);
    r.get("report_dir", c.paths.report_dir);
    r.finish();
  }
  if (const auto* p = top.object("clean")) {
    detail::ObjectReader r(*p, "clean");
    r.get("margin", c.clean.margin);
    r.get("max_skip_fraction", c.clean.max_skip_fraction);
    if (const auto* d = r.object("detect")) {
      detail::ObjectReader dr(*d, "clean.detect");
      auto& dp = c.clean.detect;
      dr.get("blur_radius", dp.blur_radius);
      dr.get("edge_threshold_rel", dp.edge_threshold_rel);
      dr.get("edge_min_magnitude", dp.edge_min_magnitude);
      dr.get("r_min_frac", dp.r_min_frac);
      dr.get("r_max_frac", dp.r_max_frac);
      dr.get("radius_step", dp.radius_step);
      dr.get("vote_threshold", dp.vote_threshold);
      dr.finish();
    }
    r.finish();
  }
  if (const auto* p = top.object("split")) {
    detail::ObjectReader r(*p, "split");
    r.get("fraction", c.split.fraction);
    r.get("seed", c.split.seed);
    std::string mode(split_mode_name(c.split.mode));
    r.get("mode", mode);
    const auto parsed = parse_split_mode(mode);
    if (!parsed) throw ConfigError("split.mode must be 'grouped' or 'record-random', got '" + mode + "'");
    c.split.mode = *parsed;
    r.finish();
  }
  if (const auto* p = top.object("train")) {
    detail::ObjectReader r(*p, "train");
    r.get("model", c.train.model);
    r.get("num_classes", c.train.num_classes);
    r.get("epochs", c.train.epochs);
    r.get("batch_size", c.train.batch_size);
    r.get("learning_rate", c.train.adam.learning_rate);
    r.get("beta1", c.train.adam.beta1);
    r.get("beta2", c.train.adam.beta2);
    r.get("epsilon", c.train.adam.epsilon);
    r.get("seed", c.train.seed);
    r.finish();
  }
  if (const auto* p = top.object("eval")) {
    detail::ObjectReader r(*p, "eval");
    if (const auto* s = r.object("snapshot_epoch"); s && !s->is_null()) {
      if (!s->is_number_integer()) throw ConfigError("eval.snapshot_epoch has the wrong type");
      c.eval.snapshot_epoch = s->get<int>();
    }
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

// Every field with its effective value; parsing the echo gives back an
// equal configuration.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  const auto& d = c.clean.detect;
  return {
      {"paths",
       {{"raw_dir", c.paths.raw_dir},
        {"cleaned_dir", c.paths.cleaned_dir},
        {"augmented_dir", c.paths.augmented_dir},
        {"manifest_path", c.paths.manifest_path},
        {"split_manifest_path", c.paths.split_manifest_path},
        {"model_dir", c.paths.model_dir},
        {"eval_dir", c.paths.eval_dir},
        {"report_dir", c.paths.report_dir}}},
      {"clean",
       {{"margin", c.clean.margin},
        {"max_skip_fraction", c.clean.max_skip_fraction},
        {"detect",
         {{"blur_radius", d.blur_radius},
          {"edge_threshold_rel", d.edge_threshold_rel},
          {"edge_min_magnitude", d.edge_min_magnitude},
          {"r_min_frac", d.r_min_frac},
          {"r_max_frac", d.r_max_frac},
          {"radius_step", d.radius_step},
          {"vote_threshold", d.vote_threshold}}}}},
      {"split", {{"fraction", c.split.fraction}, {"seed", c.split.seed}, {"mode", split_mode_name(c.split.mode)}}},
      {"train",
       {{"model", c.train.model},
        {"num_classes", c.train.num_classes},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.adam.learning_rate},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"epsilon", c.train.adam.epsilon},
        {"seed", c.train.seed}}},
      {"eval", {{"snapshot_epoch", c.eval.snapshot_epoch ? nlohmann::json(*c.eval.snapshot_epoch) : nlohmann::json()}}},
  };
}

// Parse errors carry the line and column of the offending byte.
inline PipelineConfig parse_config(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ConfigError("config is empty");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(column));
  }
  return config_from_json(j);
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace coinforge
