#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sys/wait.h>

#include "coinforge/pipeline.hpp"
#include "coinforge/synth.hpp"
#include "support.hpp"

using namespace coinforge;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string err;
};

CliResult cli(const TempDir& dir, const std::string& args) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && '" COINFORGE_CLI "' " + args + " 2> '" +
                          err_file.string() + "' > /dev/null";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

void write_raw_tree(const fs::path& root, int per_class, std::uint64_t seed) {
  for (int c = 0; c < kNumClasses6; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const auto raw = synth::render_raw_photo(c, i, seed);
      fs::create_directories((root / raw.relative_path).parent_path());
      save_pnm(root / raw.relative_path, raw.photo.image);
    }
  }
}

std::size_t count_files(const fs::path& root, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.is_regular_file() && e.path().extension() == ext;
  return n;
}

StageContext quiet_context(const fs::path& base) {
  StageContext ctx;
  ctx.base = base;
  ctx.log = nullptr;
  ctx.threads = worker_count();
  return ctx;
}

}  // namespace

TEST(Config, EmptyTextRejected) {
  EXPECT_THROW(parse_config(""), ConfigError);
  EXPECT_THROW(parse_config("  \n"), ConfigError);
}

TEST(Config, Defaults) {
  const auto c = parse_config("{}");
  EXPECT_DOUBLE_EQ(c.split.fraction, 0.33);
  EXPECT_EQ(c.split.mode, SplitMode::grouped);
  EXPECT_EQ(c.train.epochs, 30);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.train.adam.learning_rate, 1e-3);
  EXPECT_EQ(c.train.model, "coinnet-s");
  EXPECT_EQ(c.snapshot_epoch(), 30);
  EXPECT_DOUBLE_EQ(c.clean.margin, 1.10);
}

TEST(Config, EchoRoundTrip) {
  const auto c = parse_config(R"({"split": {"mode": "record-random", "seed": 9}, "train": {"epochs": 4},
                                  "eval": {"snapshot_epoch": 2}, "paths": {"raw_dir": "photos"}})");
  EXPECT_EQ(c.split.mode, SplitMode::record_random);
  EXPECT_EQ(c.snapshot_epoch(), 2);
  const auto echo = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(echo)), echo);
  EXPECT_EQ(echo["paths"]["raw_dir"], "photos");
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config(R"({"trian": {}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"epoch": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"epochs": "3"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"split": {"fraction": 1.0}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"split": {"mode": "random"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"model": "vgg16"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"epochs": 3}, "eval": {"snapshot_epoch": 4}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"clean": {"detect": {"r_min_frac": 0.5}}})"), ConfigError);
}

TEST(Config, MalformedJsonHasPosition) {
  try {
    parse_config("{\n  \"train\": {\n    \"epochs\": 3,,\n  }\n}");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("column"), std::string::npos);
  }
}

TEST(Cli, Version) {
  TempDir dir("cli");
  EXPECT_EQ(cli(dir, "--version").code, 0);
}

TEST(Cli, UnknownSubcommand) {
  TempDir dir("cli");
  EXPECT_EQ(cli(dir, "frobnicate").code, 1);
  EXPECT_EQ(cli(dir, "").code, 1);
}

TEST(Cli, EmptyRawDir) {
  TempDir dir("cli");
  fs::create_directories(dir / "raw");
  const auto r = cli(dir, "clean -q");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no input images"), std::string::npos) << r.err;
}

TEST(Cli, MalformedConfig) {
  TempDir dir("cli");
  spit(dir / "bad.json", "{\"train\": ");
  const auto r = cli(dir, "pipeline --config bad.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line"), std::string::npos) << r.err;
  spit(dir / "unknown.json", R"({"train": {"learningrate": 0.1}})");
  EXPECT_EQ(cli(dir, "pipeline --config unknown.json").code, 1);
  EXPECT_EQ(cli(dir, "pipeline --config missing.json").code, 1);
}

TEST(Cli, AugmentFanOut) {
  TempDir dir("cli");
  detail::Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    fs::create_directories(dir / "cleaned/5/obverse/1");
    save_pnm(dir / ("cleaned/5/obverse/1/s" + std::to_string(i) + ".pgm"), testing_support::random_raster(150, 150, 1, rng));
  }
  const auto r = cli(dir, "augment -q");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(dir / "augmented", ".pgm"), 3u * 39u);
  EXPECT_EQ(cli(dir, "manifest -q").code, 0);
  EXPECT_EQ(load_manifest(dir / "manifest.tsv").size(), 117u);
}

TEST(Cli, AugmentRejectsWrongSize) {
  TempDir dir("cli");
  fs::create_directories(dir / "cleaned/1/reverse/1");
  save_pnm(dir / "cleaned/1/reverse/1/a.pgm", Raster(100, 150, 1, 7));
  const auto r = cli(dir, "augment -q");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("a.pgm"), std::string::npos) << r.err;
}

TEST(Cli, CleanSkipsBlankAndFails) {
  TempDir dir("cli");
  fs::create_directories(dir / "raw/2/obverse/1");
  save_pnm(dir / "raw/2/obverse/1/blank.pgm", Raster(200, 200, 1, 90));
  const auto r = cli(dir, "clean -q");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(slurp(dir / "cleaned/skipped.tsv").find("blank.pgm\t0"), std::string::npos);
}

TEST(Cli, SynthAndSmallPipeline) {
  TempDir dir("cli");
  ASSERT_EQ(cli(dir, "synth --out raw --per-class 2 --seed 4").code, 0);
  EXPECT_EQ(count_files(dir / "raw", ".ppm"), 12u);
  spit(dir / "config.json", R"({"train": {"epochs": 1, "batch_size": 16}, "split": {"seed": 3}})");
  const auto r = cli(dir, "pipeline -q --config config.json");
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = json::parse(slurp(dir / "report/report.json"));
  EXPECT_EQ(report["split_mode"], "grouped");
  EXPECT_EQ(report["epochs"].size(), 2u);
  EXPECT_EQ(report["metrics"]["classes_6"]["counts"].size(), 6u);
  EXPECT_EQ(report["metrics"]["classes_3"]["accuracy"]["total"], report["metrics"]["classes_6"]["accuracy"]["total"]);
  EXPECT_TRUE(fs::exists(dir / "report/confusion_6class.csv"));
  EXPECT_TRUE(fs::exists(dir / "report/confusion_3class.csv"));
  EXPECT_EQ(load_manifest(dir / "manifest.tsv").size(), 12u * 39u);
}

TEST(Stages, SplitAndEpochFiles) {
  TempDir dir("stage");
  auto ctx = quiet_context(dir.path());
  write_raw_tree(dir / "raw", 2, 11);
  const auto cs = run_clean(ctx, dir / "raw", dir / "cleaned");
  EXPECT_EQ(cs.cleaned, 12u);
  EXPECT_EQ(run_augment(ctx, dir / "cleaned", dir / "augmented"), 12u * 39u);
  const auto m = run_manifest(ctx, dir / "augmented", dir / "manifest.tsv");
  EXPECT_EQ(m.size(), 468u);
  const auto s = run_split(ctx, dir / "manifest.tsv", dir / "split.tsv");
  std::set<std::string> test_sources, train_sources;
  for (const auto& r : s) (r.split == SplitSide::test ? test_sources : train_sources).insert(r.source_image_id);
  for (const auto& t : test_sources) EXPECT_EQ(train_sources.count(t), 0u) << t;
  EXPECT_EQ(test_sources.size(), 6u);  // round(2 * 0.33) = 1 source per class

  ctx.config.train.epochs = 2;
  ctx.config.eval.snapshot_epoch = 1;
  const auto rows = run_train(ctx, dir / "split.tsv", dir / "augmented", dir / "model");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[0].train_loss.has_value());
  EXPECT_EQ(rows[0].total, 6u * 39u);
  for (const auto& r : rows) EXPECT_GE(r.correct3, r.correct);
  const auto back = read_epochs_csv(dir / "model/epochs.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].correct, rows[1].correct);
  EXPECT_EQ(back[1].train_loss, rows[1].train_loss);

  const auto cm = run_eval(ctx, dir / "model", dir / "split.tsv", dir / "augmented", dir / "eval");
  EXPECT_EQ(cm.trace(), rows[1].correct);  // snapshot epoch 1
  EXPECT_EQ(read_predictions(dir / "eval/predictions.tsv", 6), cm);
  const auto files = run_report(ctx, dir / "model", dir / "eval", dir / "report");
  const json report = json::parse(slurp(files.json));
  EXPECT_EQ(report["snapshot_epoch"], 1);
  EXPECT_EQ(matrix_from_json(report["metrics"]["classes_6"]), cm);
}

TEST(Stages, ProvenanceMismatchRejected) {
  TempDir dir("stage");
  auto ctx = quiet_context(dir.path());
  fs::create_directories(dir / "cleaned/1/reverse/1");
  save_pnm(dir / "cleaned/1/reverse/1/a.pgm", Raster(150, 150, 1, 60));
  run_augment(ctx, dir / "cleaned", dir / "augmented");
  fs::remove(dir / "augmented/1/reverse/1/a_rot010.pgm");
  EXPECT_THROW(run_manifest(ctx, dir / "augmented", dir / "manifest.tsv"), UserError);
}

TEST(Stages, MissingInputs) {
  TempDir dir("stage");
  auto ctx = quiet_context(dir.path());
  EXPECT_THROW(run_manifest(ctx, dir / "nowhere", dir / "m.tsv"), UserError);
  EXPECT_THROW(run_split(ctx, dir / "nowhere.tsv", dir / "s.tsv"), UserError);
  EXPECT_THROW(run_eval(ctx, dir / "model", dir / "s.tsv", dir / "aug", dir / "eval"), UserError);
}
