#pragma once

// Evaluation report: one JSON document plus a CSV per confusion matrix.
// Output is a pure function of the inputs (no timestamps, sorted keys).

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval.hpp"

namespace coinforge {

using json = nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Test accuracy after one epoch; epoch 0 is the untrained network.
struct EpochMetrics {
  int epoch = 0;
  std::optional<double> train_loss;
  std::optional<Ratio> accuracy6;  // absent for a 3-class model
  Ratio accuracy3;

  bool operator==(const EpochMetrics&) const = default;
};

struct ReportInput {
  json config = json::object();  // echo of the run configuration
  json run = json::object();     // run metadata (hashes, seeds, version)
  std::string split_mode;
  std::uint64_t seed = 0;
  std::optional<int> snapshot_epoch;
  // 6-class (side-aware) or 3-class test matrix; absent when nothing was
  // evaluated.
  std::optional<ConfusionMatrix> matrix;
  std::vector<EpochMetrics> curve;
};

inline json ratio_json(const Ratio& r) {
  return {{"correct", r.numerator},
          {"total", r.denominator},
          {"fraction", r.value()},
          {"percent", r.percent_string()},
          {"floor_percent", floored_percent(r)}};
}

inline Ratio ratio_from_json(const json& j) {
  Ratio r{j.at("correct").get<std::uint64_t>(), j.at("total").get<std::uint64_t>()};
  if (r.denominator == 0) throw ReportError("ratio with zero total");
  return r;
}

inline json matrix_json(const ConfusionMatrix& m) {
  json rows = json::array();
  for (std::size_t a = 0; a < m.size(); ++a) {
    json row = json::array();
    for (std::size_t p = 0; p < m.size(); ++p) row.push_back(m.at(a, p));
    rows.push_back(std::move(row));
  }
  return {{"classes", m.names()}, {"counts", std::move(rows)}};
}

inline ConfusionMatrix matrix_from_json(const json& j) {
  ConfusionMatrix m(j.at("classes").get<std::vector<std::string>>());
  const auto& rows = j.at("counts");
  if (rows.size() != m.size()) throw ReportError("matrix row count does not match its classes");
  for (std::size_t a = 0; a < m.size(); ++a) {
    if (rows[a].size() != m.size()) throw ReportError("matrix row width does not match its classes");
    for (std::size_t p = 0; p < m.size(); ++p) m.at(a, p) = rows[a][p].get<std::uint64_t>();
  }
  return m;
}

inline json report_json(const ReportInput& in) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = in.config;
  j["run"] = in.run;
  j["split_mode"] = in.split_mode;
  j["seed"] = in.seed;
  j["snapshot_epoch"] = in.snapshot_epoch ? json(*in.snapshot_epoch) : json(nullptr);

  json metrics = json::object();
  if (in.matrix) {
    const ConfusionMatrix& m = *in.matrix;
    if (m.size() != kNumClasses6 && m.size() != kNumClasses3) throw ReportError("report needs a 6- or 3-class matrix");
    const bool six = m.size() == kNumClasses6;
    const ConfusionMatrix m3 = six ? merge_denominations(m) : m;
    json three = matrix_json(m3);
    if (m3.total() > 0) three["accuracy"] = ratio_json(accuracy(m3));
    if (six) {
      json j6 = matrix_json(m);
      if (m.total() > 0) {
        j6["accuracy"] = ratio_json(accuracy(m));
        json sides = {{"definition", kPerSideDefinition}};
        // A side with no test rows has no defined accuracy.
        try {
          const auto s = per_side_accuracy(m);
          sides["obverse"] = ratio_json(s.obverse);
          sides["reverse"] = ratio_json(s.reverse);
        } catch (const EvalError&) {
          sides["obverse"] = nullptr;
          sides["reverse"] = nullptr;
        }
        j6["per_side"] = std::move(sides);
      }
      metrics["classes_6"] = std::move(j6);
    }
    metrics["classes_3"] = std::move(three);
  }
  j["metrics"] = std::move(metrics);

  json curve = json::array();
  for (const auto& e : in.curve) {
    curve.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss ? json(*e.train_loss) : json(nullptr)},
                     {"accuracy_6", e.accuracy6 ? ratio_json(*e.accuracy6) : json(nullptr)},
                     {"accuracy_3", ratio_json(e.accuracy3)}});
  }
  j["epochs"] = std::move(curve);
  return j;
}

inline std::string matrix_csv(const ConfusionMatrix& m) {
  std::ostringstream os;
  write_matrix_csv(os, m);
  return os.str();
}

struct ReportFiles {
  std::filesystem::path json;
  std::vector<std::filesystem::path> csv;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ReportError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw ReportError("failed writing " + path.string());
}

// Writes report.json plus confusion_6class.csv (side-aware input only) and
// confusion_3class.csv.
inline ReportFiles emit_report(const std::filesystem::path& dir, const ReportInput& in) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ReportError("cannot create report directory " + dir.string() + ": " + ec.message());
  ReportFiles files{dir / "report.json", {}};
  write_text_file(files.json, report_json(in).dump(2) + "\n");
  if (in.matrix) {
    const ConfusionMatrix& m = *in.matrix;
    if (m.size() == kNumClasses6) {
      files.csv.push_back(dir / "confusion_6class.csv");
      write_text_file(files.csv.back(), matrix_csv(m));
    }
    files.csv.push_back(dir / "confusion_3class.csv");
    write_text_file(files.csv.back(), matrix_csv(m.size() == kNumClasses6 ? merge_denominations(m) : m));
  }
  return files;
}

}  // namespace coinforge
