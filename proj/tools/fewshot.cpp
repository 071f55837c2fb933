// Command-line front end: train, eval, ablate, dump-features, mi-probe, and
// make-glyphs for writing the procedural character dataset to disk.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "fewshot/analysis.hpp"
#include "fewshot/error.hpp"
#include "fewshot/glyphs.hpp"

namespace fs = std::filesystem;
using namespace fewshot;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Globals {
  std::string config_file;
  std::optional<std::int64_t> seed;
  std::string out_dir = "out";
  std::vector<std::string> sets;
};

Config command_line_config(const Globals& g) {
  Config cfg = g.config_file.empty() ? Config() : Config::read(g.config_file);
  for (const auto& s : g.sets) cfg.apply_override(s);
  if (g.seed) cfg.set("seed", std::to_string(*g.seed));
  return cfg;
}

// The checkpoint's configuration with every key set on the command line laid
// over it. The model itself is always rebuilt from the stored configuration.
Config overlay(const Config& stored, const Config& cli) {
  Config out = stored;
  for (const auto& [k, v] : cli.values()) out.set(k, v);
  return out;
}

void require_matching_images(const FewShotModel& model, const ClassDataset& ds) {
  const ModelSpec& spec = model.spec();
  if (spec.in_channels != ds.channels || spec.image_size != ds.image_size) {
    throw ConfigError("checkpoint expects " + std::to_string(spec.in_channels) + "x" +
                      std::to_string(spec.image_size) + " images, dataset has " + std::to_string(ds.channels) +
                      "x" + std::to_string(ds.image_size));
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!(out << j.dump(2) << '\n')) throw DataError("cannot write " + path.string());
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.accuracy;
  j["ci95"] = r.ci95;
  j["episodes"] = r.episodes;
  j["fingerprint"] = fingerprint_hex(r.fingerprint);
  for (Stream s : kAllStreams) {
    if (const auto& a = r.stream_accuracy[index_of(s)]) j["stream_accuracy"][std::string(stream_name(s))] = *a;
  }
  return j;
}

int cmd_train(const Globals& g, const std::string& resume) {
  const Config cfg = command_line_config(g);
  const ClassDataset ds = load_configured_dataset(cfg);
  Trainer trainer(cfg, ds);
  if (!resume.empty()) trainer.restore(load_checkpoint(resume));
  std::cout << "training " << trainer.train_config().iterations << " iterations, config "
            << fingerprint_hex(cfg.fingerprint()) << ", " << ds.classes.size() << " classes" << std::endl;
  const TrainSummary s = trainer.run(g.out_dir, &std::cout);
  std::cout << "metrics " << s.metrics.string() << "\nlast checkpoint " << s.last_checkpoint.string()
            << "\nbest checkpoint " << s.best_checkpoint.string() << "\n";
  if (s.best_val_accuracy) std::cout << "best validation accuracy " << *s.best_val_accuracy << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Config stored;
  auto model = model_from_checkpoint(ckpt, &stored);
  const Config cfg = overlay(stored, command_line_config(g));
  const ClassDataset ds = load_configured_dataset(cfg);
  require_matching_images(*model, ds);
  const EvalOptions opts = eval_options(cfg);
  EvalReport r = evaluate(*model, ds, opts);
  r.fingerprint = ckpt.fingerprint;
  std::cout << split_name(opts.split) << " " << opts.spec.ways << "-way " << opts.spec.shots << "-shot: "
            << r.summary() << "\n";
  for (Stream s : kAllStreams) {
    if (const auto& a = r.stream_accuracy[index_of(s)]) std::printf("  %-13s %.2f%%\n", std::string(stream_name(s)).c_str(), 100 * *a);
  }
  write_json(fs::path(g.out_dir) / "eval.json", report_json(r));
  return kOk;
}

int cmd_ablate(const Globals& g) {
  const Config cfg = command_line_config(g);
  const ClassDataset ds = load_configured_dataset(cfg);
  const auto cells = parse_ablation_grid(cfg.get("ablate.grid"));
  const auto results = run_ablation(cfg, ds, cells, cfg.get_size("ablate.seeds"), g.out_dir, &std::cout);
  std::cout << "\n" << ablation_markdown(results);
  return kOk;
}

int cmd_dump(const Globals& g, const std::string& ckpt_path, const std::vector<std::string>& images,
             std::size_t count) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Config stored;
  auto model = model_from_checkpoint(ckpt, &stored);
  const Config cfg = overlay(stored, command_line_config(g));
  const ModelSpec& spec = model->spec();
  Tensor batch;
  if (!images.empty()) {
    // Files are normalised with the statistics of the configured dataset when
    // one is set, otherwise used as read.
    ClassDataset norm;
    norm.channels = spec.in_channels;
    norm.image_size = spec.image_size;
    norm.mean.assign(spec.in_channels, 0.0);
    norm.std.assign(spec.in_channels, 1.0);
    if (!cfg.get("dataset.root").empty()) {
      const ClassDataset ds = load_configured_dataset(cfg);
      norm.mean = ds.mean, norm.std = ds.std;
    }
    std::vector<Image> loaded;
    for (const auto& p : images) {
      loaded.push_back(resize(convert_channels(read_image(p), spec.in_channels), spec.image_size, spec.image_size));
    }
    batch = images_to_tensor(norm, loaded);
  } else {
    const ClassDataset ds = load_configured_dataset(cfg);
    require_matching_images(*model, ds);
    const auto classes = ds.classes_in(parse_split(cfg.get("eval.split")));
    if (classes.empty()) throw DataError("no class in the evaluation split to take images from");
    const auto& cls = ds.classes[classes.front()];
    std::vector<ImageRef> refs;
    for (std::size_t i = 0; i < std::min(count, cls.images.size()); ++i) refs.push_back({classes.front(), i});
    std::cout << "images 0.." << refs.size() - 1 << " of class " << cls.name << "\n";
    batch = images_to_tensor(ds, refs);
  }
  const FeatureDump dump = extract_features(*model, batch, cfg.get_size("dump.channels"));
  const std::string prefix = cfg.get("dump.out");
  const fs::path base = prefix.empty() ? fs::path(g.out_dir) / "features" : fs::path(prefix);
  if (!base.parent_path().empty()) fs::create_directories(base.parent_path());
  write_feature_dump(dump, base.string() + ".png", base.string() + ".csv");
  std::cout << dump.images << " images x " << dump.channels << " channels (" << dump.height << "x" << dump.width
            << ") -> " << base.string() << ".png, " << base.string() << ".csv\n";
  return kOk;
}

int cmd_mi_probe(const Globals& g, const std::string& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Config stored;
  auto model = model_from_checkpoint(ckpt, &stored);
  const Config cfg = overlay(stored, command_line_config(g));
  const ClassDataset ds = load_configured_dataset(cfg);
  require_matching_images(*model, ds);
  MiProbeOptions opts;
  opts.split = parse_split(cfg.get("mi_probe.split"));
  opts.pairs = cfg.get_size("mi_probe.pairs");
  opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  opts.fit_iterations = cfg.get_size("mi_probe.fit_iterations");
  opts.fit_lr = cfg.get_double("mi_probe.fit_lr");
  if (!model->enabled().contains(Stream::kMutualInfo) && opts.fit_iterations == 0) {
    std::cerr << "note: the MI stream was disabled in this training run, so its head is untrained; "
                 "set mi_probe.fit_iterations to fit it first\n";
  }
  const MiProbeReport r = mi_probe(*model, ds, opts, &std::cout);
  std::printf("mi_probe_mse %.6f over %zu pairs (%s split, head fit %zu iterations)\n", r.mse, r.pairs,
              std::string(split_name(opts.split)).c_str(), r.fit_iterations);
  nlohmann::json j{{"mse", r.mse},
                   {"pairs", r.pairs},
                   {"split", split_name(opts.split)},
                   {"fit_iterations", r.fit_iterations},
                   {"mi_stream_trained", r.head_trained_with_model}};
  write_json(fs::path(g.out_dir) / "mi_probe.json", j);
  return kOk;
}

int cmd_make_glyphs(const Globals& g, GlyphOptions opts, const std::string& root) {
  if (g.seed) opts.seed = static_cast<std::uint64_t>(*g.seed);
  const GlyphSet set = generate_glyphs(opts);
  write_glyph_tree(set, root);
  std::cout << set.names.size() << " characters x " << opts.drawings << " drawings -> " << root << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot matching with relation, mutual-information and appearance streams"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "key=value configuration file");
  app.add_option("--seed", g.seed, "random seed (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
  app.add_option("--set", g.sets, "override one config key, key=value (repeatable)")->take_all();

  auto* train = app.add_subcommand("train", "train a model");
  std::string resume;
  train->add_option("--resume", resume, "continue from a checkpoint of the same configuration");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on sampled episodes");
  std::string ckpt;
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every cell of ablate.grid");

  auto* dump = app.add_subcommand("dump-features", "render the first embedding channels as a PNG grid + CSV");
  std::vector<std::string> dump_images;
  std::size_t dump_count = 3;
  dump->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  dump->add_option("images", dump_images, "image files (default: images of the first evaluation-split class)");
  dump->add_option("--count", dump_count, "images taken from the dataset when no files are given")
      ->capture_default_str();

  auto* probe = app.add_subcommand("mi-probe", "MSE of MI-head scores against same-class targets");
  probe->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  auto* glyphs = app.add_subcommand("make-glyphs", "write the procedural character dataset to disk");
  GlyphOptions glyph_opts;
  std::string glyph_root;
  glyphs->add_option("--root", glyph_root, "output directory")->required();
  glyphs->add_option("--alphabets", glyph_opts.alphabets)->capture_default_str();
  glyphs->add_option("--characters", glyph_opts.characters_per_alphabet, "characters per alphabet")
      ->capture_default_str();
  glyphs->add_option("--drawings", glyph_opts.drawings, "drawings per character")->capture_default_str();
  glyphs->add_option("--size", glyph_opts.image_size, "image side in pixels")->capture_default_str();
  glyphs->add_option("--jitter", glyph_opts.point_jitter, "stroke point noise, fraction of the canvas")
      ->capture_default_str();
  glyphs->add_option("--rotation", glyph_opts.max_rotation_degrees, "max drawing rotation in degrees")
      ->capture_default_str();
  glyphs->add_option("--scale", glyph_opts.scale_jitter, "max relative scale change")->capture_default_str();
  glyphs->add_option("--shift", glyph_opts.shift, "max shift, fraction of the canvas")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(g, resume);
    if (*eval) return cmd_eval(g, ckpt);
    if (*ablate) return cmd_ablate(g);
    if (*dump) return cmd_dump(g, ckpt, dump_images, dump_count);
    if (*probe) return cmd_mi_probe(g, ckpt);
    if (*glyphs) return cmd_make_glyphs(g, glyph_opts, glyph_root);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const ContractError& e) {
    // e.g. a split too small for the requested episodes
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
