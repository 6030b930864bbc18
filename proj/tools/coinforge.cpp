// coinforge: command-line front end for the cleaning, augmentation,
// dataset, training and evaluation stages.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "coinforge/pipeline.hpp"
#include "coinforge/pnm.hpp"
#include "coinforge/synth.hpp"

namespace fs = std::filesystem;
using namespace coinforge;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split_mode;
  std::optional<int> epochs;
  std::optional<int> snapshot_epoch;
  std::string in;
  std::string out;
  bool quiet = false;
};

struct StageIo {
  std::string PathsConfig::*in;
  std::string PathsConfig::*out;
};

void add_common(CLI::App* cmd, Overrides& o, bool with_io) {
  cmd->add_option("--config", o.config, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--seed", o.seed, "seed for both the split and training");
  cmd->add_option("--split-mode", o.split_mode, "grouped or record-random")
      ->check(CLI::IsMember({"grouped", "record-random"}));
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--snapshot-epoch", o.snapshot_epoch, "epoch whose weights are evaluated");
  if (with_io) {
    cmd->add_option("--in", o.in, "stage input (overrides the config path)");
    cmd->add_option("--out", o.out, "stage output (overrides the config path)");
  }
  cmd->add_flag("-q,--quiet", o.quiet, "suppress progress messages");
}

StageContext make_context(const Overrides& o, std::optional<StageIo> io) {
  StageContext ctx;
  if (!o.config.empty()) {
    ctx.config = load_config(o.config);
    ctx.base = fs::path(o.config).parent_path();
    if (ctx.base.empty()) ctx.base = ".";
  }
  auto& c = ctx.config;
  if (o.seed) c.split.seed = c.train.seed = *o.seed;
  if (o.split_mode) c.split.mode = *parse_split_mode(*o.split_mode);
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.snapshot_epoch) c.eval.snapshot_epoch = *o.snapshot_epoch;
  // Command-line paths are relative to the working directory.
  if (io && !o.in.empty()) c.paths.*(io->in) = fs::absolute(o.in).lexically_normal().string();
  if (io && !o.out.empty()) c.paths.*(io->out) = fs::absolute(o.out).lexically_normal().string();
  c.validate();
  ctx.threads = worker_count();
  ctx.log = o.quiet ? nullptr : &std::cerr;
  return ctx;
}

int run_synth(const std::string& out, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw UserError("--per-class must be >= 1");
  const fs::path root(out);
  for (int c = 0; c < kNumClasses6; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const auto raw = synth::render_raw_photo(c, i, seed);
      const auto path = root / raw.relative_path;
      ensure_parent(path);
      save_pnm(path, raw.photo.image);
    }
  }
  std::cerr << "synth: wrote " << kNumClasses6 * per_class << " photos to " << root.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coin image dataset construction, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Overrides o;
  struct Stage {
    const char* name;
    const char* help;
    std::optional<StageIo> io;
  };
  const Stage stages[] = {
      {"clean", "detect, crop, resize and grayscale raw photos", StageIo{&PathsConfig::raw_dir, &PathsConfig::cleaned_dir}},
      {"augment", "expand each cleaned image into 39 images",
       StageIo{&PathsConfig::cleaned_dir, &PathsConfig::augmented_dir}},
      {"manifest", "label the augmented tree into a manifest",
       StageIo{&PathsConfig::augmented_dir, &PathsConfig::manifest_path}},
      {"split", "assign train/test splits", StageIo{&PathsConfig::manifest_path, &PathsConfig::split_manifest_path}},
      {"train", "train the CNN and record per-epoch test accuracy",
       StageIo{&PathsConfig::split_manifest_path, &PathsConfig::model_dir}},
      {"eval", "predict the test split with the snapshot weights",
       StageIo{&PathsConfig::model_dir, &PathsConfig::eval_dir}},
      {"report", "write the JSON report and confusion matrices", StageIo{&PathsConfig::eval_dir, &PathsConfig::report_dir}},
      {"pipeline", "run every stage in order", std::nullopt},
  };
  for (const auto& s : stages) add_common(app.add_subcommand(s.name, s.help), o, s.io.has_value());

  std::string synth_out;
  int per_class = 10;
  std::uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic raw photo tree");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--per-class", per_class, "photos per class");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_out, per_class, synth_seed);
    for (const auto& s : stages) {
      if (!app.got_subcommand(s.name)) continue;
      const StageContext ctx = make_context(o, s.io);
      const auto& p = ctx.config.paths;
      const std::string name = s.name;
      if (name == "clean") {
        run_clean(ctx, ctx.resolve(p.raw_dir), ctx.resolve(p.cleaned_dir));
      } else if (name == "augment") {
        run_augment(ctx, ctx.resolve(p.cleaned_dir), ctx.resolve(p.augmented_dir));
      } else if (name == "manifest") {
        run_manifest(ctx, ctx.resolve(p.augmented_dir), ctx.resolve(p.manifest_path));
      } else if (name == "split") {
        run_split(ctx, ctx.resolve(p.manifest_path), ctx.resolve(p.split_manifest_path));
      } else if (name == "train") {
        run_train(ctx, ctx.resolve(p.split_manifest_path), ctx.resolve(p.augmented_dir), ctx.resolve(p.model_dir));
      } else if (name == "eval") {
        run_eval(ctx, ctx.resolve(p.model_dir), ctx.resolve(p.split_manifest_path), ctx.resolve(p.augmented_dir),
                 ctx.resolve(p.eval_dir));
      } else if (name == "report") {
        run_report(ctx, ctx.resolve(p.model_dir), ctx.resolve(p.eval_dir), ctx.resolve(p.report_dir));
      } else {
        run_pipeline(ctx);
      }
    }
    return 0;
  } catch (const UserError& e) {
    std::cerr << "coinforge: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "coinforge: config: " << e.what() << '\n';
    return 1;
  } catch (const StageFailure& e) {
    std::cerr << "coinforge: failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "coinforge: internal error: " << e.what() << '\n';
    return 2;
  }
}
