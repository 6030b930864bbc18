#pragma once

// Pipeline stages. Each stage reads only the artifacts of earlier stages
// and writes only its own outputs, plus a run-metadata record beside them.
// Outputs depend on the configuration and inputs only, never on the worker
// count or on wall-clock time.

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "augment.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "hough.hpp"
#include "nn/checkpoint.hpp"
#include "nn/train.hpp"
#include "pnm.hpp"
#include "report.hpp"

namespace coinforge {

inline constexpr std::string_view kVersion = "1.0.0";

// Bad input or configuration; the CLI exits with status 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The stage ran but could not produce a valid result; exit status 2.
class StageFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Worker threads for per-file stages: hardware concurrency, capped by
// COINFORGE_THREADS when set to a positive integer.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COINFORGE_THREADS")) {
    unsigned cap = 0;
    const auto [ptr, ec] = std::from_chars(env, env + std::char_traits<char>::length(env), cap);
    if (ec == std::errc() && *ptr == '\0' && cap > 0) n = std::min(n, cap);
  }
  return n;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
// exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned extra = static_cast<unsigned>(std::min<std::size_t>(threads, n)) - (n > 0 ? 1 : 0);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < extra; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct StageContext {
  PipelineConfig config;
  std::filesystem::path base = ".";  // relative config paths resolve here
  std::ostream* log = &std::cerr;
  unsigned threads = 1;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  }
  void note(const std::string& msg) const {
    if (log) *log << msg << '\n';
  }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const PipelineConfig& c) {
  const std::string text = config_to_json(c).dump();
  return hex64(detail::fnv1a(text.data(), text.size()));
}

inline json run_metadata(const StageContext& ctx, std::string_view stage) {
  return {{"stage", stage},
          {"version", kVersion},
          {"config_hash", config_hash(ctx.config)},
          {"seeds", {{"split", ctx.config.split.seed}, {"train", ctx.config.train.seed}}}};
}

inline void write_run_record(const std::filesystem::path& path, const StageContext& ctx, std::string_view stage) {
  write_text_file(path, run_metadata(ctx, stage).dump(2) + "\n");
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UserError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

// Image files below root with one of the extensions, as sorted relative
// paths.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& root,
                                                      std::initializer_list<std::string_view> extensions) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw UserError("input directory does not exist: " + root.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    for (auto e : extensions) {
      if (ext == e) {
        out.push_back(fs::relative(entry.path(), root));
        break;
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.generic_string() < b.generic_string();
  });
  return out;
}

// ---- clean ----------------------------------------------------------------

struct SkippedImage {
  std::string path;
  int best_score = 0;
};

struct CleanSummary {
  std::size_t inputs = 0;
  std::size_t cleaned = 0;
  std::vector<SkippedImage> skipped;
};

// raw_dir/<d>/<side>/<style>/<name>.{ppm,pgm} -> cleaned_dir/.../<name>.pgm;
// images without a detectable coin go to skipped.tsv.
inline CleanSummary run_clean(const StageContext& ctx, const std::filesystem::path& in,
                              const std::filesystem::path& out) {
  const auto files = list_images(in, {".ppm", ".pgm"});
  if (files.empty()) throw UserError("no input images in " + in.string());
  ensure_dir(out);
  const auto& cc = ctx.config.clean;
  std::vector<std::optional<int>> skipped(files.size());
  parallel_for(files.size(), ctx.threads, [&](std::size_t i) {
    Raster img;
    try {
      img = load_pnm(in / files[i]);
    } catch (const std::exception& e) {
      throw UserError(files[i].generic_string() + ": " + e.what());
    }
    try {
      const Raster cleaned = clean_image(img, cc.detect, cc.margin);
      auto target = out / files[i];
      target.replace_extension(".pgm");
      ensure_parent(target);
      save_pnm(target, cleaned);
    } catch (const NoCoinFound& e) {
      skipped[i] = e.best_score();
    }
  });

  CleanSummary s;
  s.inputs = files.size();
  std::ostringstream report;
  report << "path\tbest_score\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (skipped[i]) {
      s.skipped.push_back({files[i].generic_string(), *skipped[i]});
      report << files[i].generic_string() << '\t' << *skipped[i] << '\n';
    }
  }
  s.cleaned = s.inputs - s.skipped.size();
  write_text_file(out / "skipped.tsv", report.str());
  write_run_record(out / "run.json", ctx, "clean");
  ctx.note("clean: " + std::to_string(s.cleaned) + " of " + std::to_string(s.inputs) + " images cleaned, " +
           std::to_string(s.skipped.size()) + " skipped");
  const double rate = static_cast<double>(s.skipped.size()) / static_cast<double>(s.inputs);
  if (rate > cc.max_skip_fraction) {
    throw StageFailure("no coin found in " + std::to_string(s.skipped.size()) + " of " + std::to_string(s.inputs) +
                       " images, above the allowed skip fraction (see skipped.tsv)");
  }
  return s;
}

// ---- augment --------------------------------------------------------------

inline std::size_t run_augment(const StageContext& ctx, const std::filesystem::path& in,
                               const std::filesystem::path& out) {
  const auto files = list_images(in, {".pgm"});
  if (files.empty()) throw UserError("no input images in " + in.string());
  ensure_dir(out);
  std::vector<std::vector<ProvenanceRow>> rows(files.size());
  parallel_for(files.size(), ctx.threads, [&](std::size_t i) {
    Raster img;
    try {
      img = load_pnm(in / files[i]);
      const auto source_id = files[i].stem().string();
      if (source_id.empty() || source_id.find('\t') != std::string::npos) throw UserError("unusable file name");
      for (auto& a : expand(img, source_id)) {
        const auto rel = files[i].parent_path() / augmented_file_name(a.provenance);
        ensure_parent(out / rel);
        save_pnm(out / rel, a.image);
        rows[i].push_back({rel.generic_string(), source_id, a.provenance.tag});
      }
    } catch (const AugmentError& e) {
      throw UserError(files[i].generic_string() + ": " + e.what());
    } catch (const PnmError& e) {
      throw UserError(files[i].generic_string() + ": " + e.what());
    }
  });
  std::vector<ProvenanceRow> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  std::sort(all.begin(), all.end(), [](const ProvenanceRow& a, const ProvenanceRow& b) { return a.path < b.path; });
  std::ostringstream os;
  write_provenance(os, all);
  write_text_file(out / "provenance.tsv", os.str());
  write_run_record(out / "run.json", ctx, "augment");
  ctx.note("augment: " + std::to_string(files.size()) + " images expanded to " + std::to_string(all.size()));
  return all.size();
}

// ---- manifest -------------------------------------------------------------

inline Manifest run_manifest(const StageContext& ctx, const std::filesystem::path& in,
                             const std::filesystem::path& out) {
  if (!std::filesystem::is_directory(in)) throw UserError("input directory does not exist: " + in.string());
  auto build = build_manifest(in);
  if (!build.errors.empty()) {
    std::string msg = std::to_string(build.errors.size()) + " unparseable path(s):";
    for (const auto& e : build.errors) msg += "\n  " + e.path + ": " + e.message;
    throw UserError(msg);
  }
  if (build.records.empty()) throw UserError("no images in " + in.string());
  const auto sidecar = in / "provenance.tsv";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream is(sidecar, std::ios::binary);
    try {
      check_provenance(build.records, read_provenance(is));
    } catch (const DatasetError& e) {
      throw UserError(std::string("provenance check failed: ") + e.what());
    }
  }
  ensure_parent(out);
  save_manifest(out, build.records);
  write_run_record(out.string() + ".run.json", ctx, "manifest");
  ctx.note("manifest: " + std::to_string(build.records.size()) + " records");
  return build.records;
}

// ---- split ----------------------------------------------------------------

inline Manifest run_split(const StageContext& ctx, const std::filesystem::path& in, const std::filesystem::path& out) {
  Manifest m;
  try {
    m = split(load_manifest(in), ctx.config.split.fraction, ctx.config.split.seed, ctx.config.split.mode);
  } catch (const DatasetError& e) {
    throw UserError(e.what());
  }
  ensure_parent(out);
  save_manifest(out, m);
  write_run_record(out.string() + ".run.json", ctx, "split");
  std::size_t test = 0;
  for (const auto& r : m) test += r.split == SplitSide::test;
  ctx.note("split (" + std::string(split_mode_name(ctx.config.split.mode)) + "): " +
           std::to_string(m.size() - test) + " train, " + std::to_string(test) + " test");
  return m;
}

// ---- train ----------------------------------------------------------------

inline int model_label(const CoinLabel& label, int num_classes) {
  return num_classes == kNumClasses6 ? label.class6() : merge_label(label.class6());
}

struct LoadedSplit {
  nn::ImageSet train;
  nn::ImageSet test;
  std::vector<const ManifestRecord*> test_records;
};

inline LoadedSplit load_split(const StageContext& ctx, const Manifest& m, const std::filesystem::path& images,
                              int num_classes) {
  std::vector<Raster> rasters(m.size());
  parallel_for(m.size(), ctx.threads, [&](std::size_t i) {
    if (m[i].split == SplitSide::unassigned) return;
    try {
      rasters[i] = load_pnm(images / m[i].path);
    } catch (const PnmError& e) {
      throw UserError(m[i].path + ": " + e.what());
    }
  });
  LoadedSplit out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].split == SplitSide::unassigned) continue;
    const int label = model_label(m[i].label, num_classes);
    try {
      if (m[i].split == SplitSide::train) {
        out.train.add(rasters[i], label);
      } else {
        out.test.add(rasters[i], label);
        out.test_records.push_back(&m[i]);
      }
    } catch (const nn::ShapeError& e) {
      throw UserError(m[i].path + ": " + e.what());
    }
    rasters[i] = Raster();
  }
  return out;
}

inline Manifest load_split_manifest(const std::filesystem::path& path) {
  try {
    return load_manifest(path);
  } catch (const DatasetError& e) {
    throw UserError(e.what());
  }
}

// Accuracy counts at one epoch, both at the model's granularity and
// merged to denominations.
struct EpochRow {
  int epoch = 0;
  std::optional<double> train_loss;
  std::uint64_t correct = 0;
  std::uint64_t correct3 = 0;
  std::uint64_t total = 0;
};

inline constexpr std::string_view kEpochsHeader = "epoch,train_loss,test_acc,test_acc_3class,test_correct,test_correct_3class,test_total";

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string epochs_csv(const std::vector<EpochRow>& rows) {
  std::string s(kEpochsHeader);
  s += '\n';
  for (const auto& r : rows) {
    const Ratio a{r.correct, r.total}, a3{r.correct3, r.total};
    s += std::to_string(r.epoch) + ',' + (r.train_loss ? format_double(*r.train_loss) : "") + ',' +
         format_double(a.value()) + ',' + format_double(a3.value()) + ',' + std::to_string(r.correct) + ',' +
         std::to_string(r.correct3) + ',' + std::to_string(r.total) + '\n';
  }
  return s;
}

inline std::vector<EpochRow> read_epochs_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UserError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kEpochsHeader) throw UserError(path.string() + ": missing or wrong header");
  std::vector<EpochRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto f = detail::split_commas(line);
    auto bad = [&] { return UserError(path.string() + " line " + std::to_string(line_no) + ": malformed"); };
    if (f.size() != 7) throw bad();
    EpochRow r;
    auto parse_u = [&](const std::string& s, auto& v) {
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw bad();
    };
    parse_u(f[0], r.epoch);
    if (!f[1].empty()) {
      double loss = 0;
      parse_u(f[1], loss);
      r.train_loss = loss;
    }
    parse_u(f[4], r.correct);
    parse_u(f[5], r.correct3);
    parse_u(f[6], r.total);
    if (r.total == 0 || r.correct > r.total || r.correct3 > r.total) throw bad();
    rows.push_back(r);
  }
  return rows;
}

inline EpochRow epoch_row(int epoch, std::optional<double> loss, const std::vector<int>& preds,
                          const std::vector<int>& labels, int num_classes) {
  EpochRow r{epoch, loss, 0, 0, labels.size()};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.correct += preds[i] == labels[i];
    r.correct3 += num_classes == kNumClasses6 ? merge_label(preds[i]) == merge_label(labels[i]) : preds[i] == labels[i];
  }
  return r;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& model_dir) {
  return model_dir / "model.cfnn";
}

// Trains on the train records, saves the weights after the snapshot epoch
// as model.cfnn and the per-epoch test accuracy as epochs.csv.
inline std::vector<EpochRow> run_train(const StageContext& ctx, const std::filesystem::path& split_manifest,
                                       const std::filesystem::path& images, const std::filesystem::path& out) {
  const auto& tc = ctx.config.train;
  const Manifest m = load_split_manifest(split_manifest);
  const LoadedSplit data = load_split(ctx, m, images, tc.num_classes);
  if (data.train.size() == 0 || data.test.size() == 0) throw UserError("split manifest needs train and test records");
  ensure_dir(out);

  const auto model = nn::model_by_name(tc.model, static_cast<std::size_t>(tc.num_classes),
                                       {1, data.train.height, data.train.width});
  const int snapshot = ctx.config.snapshot_epoch();
  std::vector<EpochRow> rows;
  nn::TrainOptions opts;
  opts.epochs = tc.epochs;
  opts.batch_size = tc.batch_size;
  opts.seed = tc.seed;
  opts.adam = tc.adam;
  opts.on_epoch = [&](const nn::EpochRecord& rec, const nn::Network<float>& net) {
    rows.push_back(epoch_row(rec.epoch, rec.train_loss, rec.test_predictions, data.test.labels, tc.num_classes));
    ctx.note("train: epoch " + std::to_string(rec.epoch) + " loss " + format_double(rec.train_loss) + " test acc " +
             Ratio{rows.back().correct, rows.back().total}.percent_string() + "%");
    if (rec.epoch == snapshot) nn::save_checkpoint(checkpoint_path(out), net);
    return true;
  };
  const nn::TrainResult result = [&] {
    try {
      return nn::train(model, data.train, data.test, opts);
    } catch (const nn::TrainingDiverged& e) {
      throw StageFailure(e.what());
    } catch (const nn::NonFiniteGradient& e) {
      throw StageFailure(e.what());
    }
  }();
  rows.insert(rows.begin(),
              epoch_row(0, std::nullopt, result.initial_predictions, data.test.labels, tc.num_classes));
  if (snapshot == 0) {
    nn::Network<float> initial(model);
    initial.initialize(tc.seed);
    nn::save_checkpoint(checkpoint_path(out), initial);
  }
  write_text_file(out / "epochs.csv", epochs_csv(rows));
  write_run_record(out / "run.json", ctx, "train");
  return rows;
}

// ---- eval -----------------------------------------------------------------

inline constexpr std::string_view kPredictionsHeader = "path\tactual\tpredicted";

// Predicts every test record with the snapshot checkpoint; writes
// predictions.tsv with class indices of the model's granularity.
inline ConfusionMatrix run_eval(const StageContext& ctx, const std::filesystem::path& model_dir,
                                const std::filesystem::path& split_manifest, const std::filesystem::path& images,
                                const std::filesystem::path& out) {
  nn::Network<float> net = [&] {
    try {
      return nn::load_checkpoint(checkpoint_path(model_dir));
    } catch (const nn::CheckpointError& e) {
      throw UserError(e.what());
    } catch (const nn::ShapeError& e) {
      throw UserError(std::string("checkpoint: ") + e.what());
    }
  }();
  const int nc = static_cast<int>(net.config().num_classes);
  if (nc != kNumClasses6 && nc != kNumClasses3) throw UserError("checkpoint is neither a 6- nor a 3-class model");
  Manifest m = load_split_manifest(split_manifest);
  for (auto& r : m) {
    if (r.split == SplitSide::train) r.split = SplitSide::unassigned;
  }
  const LoadedSplit data = load_split(ctx, m, images, nc);
  if (data.test.size() == 0) throw UserError("split manifest has no test records");
  if (net.config().input != nn::Shape{1, data.test.height, data.test.width}) {
    throw UserError("checkpoint input size does not match the test images");
  }
  const auto preds = nn::predict(net, data.test);
  ensure_dir(out);
  std::string s(kPredictionsHeader);
  s += '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s += data.test_records[i]->path + '\t' + std::to_string(data.test.labels[i]) + '\t' + std::to_string(preds[i]) + '\n';
  }
  write_text_file(out / "predictions.tsv", s);
  write_run_record(out / "run.json", ctx, "eval");
  ConfusionMatrix cm = confusion(data.test.labels, preds, nc == kNumClasses6 ? class6_names() : class3_names());
  ctx.note("eval: " + std::to_string(preds.size()) + " test images, accuracy " + accuracy(cm).percent_string() + "%");
  return cm;
}

inline ConfusionMatrix read_predictions(const std::filesystem::path& path, int num_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UserError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kPredictionsHeader) throw UserError(path.string() + ": missing or wrong header");
  std::vector<int> actual, predicted;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto f = detail::split_tabs(line);
    int a = -1, p = -1;
    auto num = [](const std::string& s, int& v) {
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      return r.ec == std::errc() && r.ptr == s.data() + s.size();
    };
    if (f.size() != 3 || !num(f[1], a) || !num(f[2], p)) {
      throw UserError(path.string() + " line " + std::to_string(line_no) + ": malformed");
    }
    actual.push_back(a);
    predicted.push_back(p);
  }
  try {
    return confusion(actual, predicted, num_classes == kNumClasses6 ? class6_names() : class3_names());
  } catch (const EvalError& e) {
    throw UserError(path.string() + ": " + e.what());
  }
}

// ---- report ---------------------------------------------------------------

inline ReportFiles run_report(const StageContext& ctx, const std::filesystem::path& model_dir,
                              const std::filesystem::path& eval_dir, const std::filesystem::path& out) {
  const auto& c = ctx.config;
  ReportInput in;
  in.config = config_to_json(c);
  in.run = run_metadata(ctx, "report");
  in.split_mode = split_mode_name(c.split.mode);
  in.seed = c.split.seed;
  in.snapshot_epoch = c.snapshot_epoch();
  const bool six = c.train.num_classes == kNumClasses6;
  in.matrix = read_predictions(eval_dir / "predictions.tsv", c.train.num_classes);
  for (const auto& r : read_epochs_csv(model_dir / "epochs.csv")) {
    EpochMetrics e;
    e.epoch = r.epoch;
    e.train_loss = r.train_loss;
    if (six) e.accuracy6 = Ratio{r.correct, r.total};
    e.accuracy3 = Ratio{six ? r.correct3 : r.correct, r.total};
    in.curve.push_back(e);
  }
  const auto files = emit_report(out, in);
  ctx.note("report: " + files.json.string());
  return files;
}

// ---- pipeline -------------------------------------------------------------

inline ReportFiles run_pipeline(const StageContext& ctx) {
  const auto& p = ctx.config.paths;
  run_clean(ctx, ctx.resolve(p.raw_dir), ctx.resolve(p.cleaned_dir));
  run_augment(ctx, ctx.resolve(p.cleaned_dir), ctx.resolve(p.augmented_dir));
  run_manifest(ctx, ctx.resolve(p.augmented_dir), ctx.resolve(p.manifest_path));
  run_split(ctx, ctx.resolve(p.manifest_path), ctx.resolve(p.split_manifest_path));
  run_train(ctx, ctx.resolve(p.split_manifest_path), ctx.resolve(p.augmented_dir), ctx.resolve(p.model_dir));
  run_eval(ctx, ctx.resolve(p.model_dir), ctx.resolve(p.split_manifest_path), ctx.resolve(p.augmented_dir),
           ctx.resolve(p.eval_dir));
  return run_report(ctx, ctx.resolve(p.model_dir), ctx.resolve(p.eval_dir), ctx.resolve(p.report_dir));
}

}  // namespace coinforge
