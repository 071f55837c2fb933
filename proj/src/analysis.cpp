#include "fewshot/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "fewshot/error.hpp"
#include "fewshot/ops.hpp"

namespace fewshot {

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string weights_text(const PerStream<Real>& w) {
  std::string out;
  for (std::size_t k = 0; k < kStreamCount; ++k) out += (k ? "," : "") + fmt(w[k], "%g");
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

constexpr std::uint64_t kProbePairSalt = 0x9e;
constexpr std::uint64_t kProbeFitSalt = 0x9f;

}  // namespace

EvalOptions eval_options(const Config& cfg) {
  EvalOptions o;
  o.split = parse_split(cfg.get("eval.split"));
  o.spec = {cfg.get_size("episode.ways"), cfg.get_size("episode.shots"), cfg.get_size("episode.eval_queries")};
  o.episodes = cfg.get_size("eval.episodes");
  o.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  o.workers = cfg.get_size("eval.workers");
  if (o.episodes == 0) throw ConfigError("eval.episodes must be > 0");
  return o;
}

// ---- ablation ----------------------------------------------------------------

std::vector<AblationCell> parse_ablation_grid(std::string_view text) {
  std::vector<AblationCell> cells;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(';', start), text.size());
    const std::string item = trim(text.substr(start, end - start));
    start = end + 1;
    if (item.empty()) continue;
    AblationCell cell;
    if (item == "learned") {
      cell.mode = WeightMode::kLearned;
      cell.label = "automatic weight learning";
      cells.push_back(cell);
      continue;
    }
    std::stringstream ss(item);
    std::string part;
    std::size_t k = 0;
    while (std::getline(ss, part, ',')) {
      if (k >= kStreamCount) throw ConfigError("ablation cell '" + item + "' has more than 4 weights");
      try {
        std::size_t used = 0;
        const std::string t = trim(part);
        cell.weights[k] = static_cast<Real>(std::stod(t, &used));
        if (used != t.size()) throw std::invalid_argument(t);
      } catch (const std::logic_error&) {
        throw ConfigError("ablation cell '" + item + "': bad weight '" + part + "'");
      }
      if (cell.weights[k] < 0) throw ConfigError("ablation cell '" + item + "': negative weight");
      ++k;
    }
    if (k != kStreamCount) throw ConfigError("ablation cell '" + item + "' needs 4 weights or 'learned'");
    if (cell.weights[0] <= 0 && cell.weights[1] <= 0 && cell.weights[2] <= 0 && cell.weights[3] <= 0) {
      throw ConfigError("ablation cell '" + item + "' disables every stream");
    }
    cell.label = "fixed " + weights_text(cell.weights);
    if (cell.weights == PerStream<Real>{4, 2, 1, 2}) cell.label += " (best fixed weighting)";
    cells.push_back(cell);
  }
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  return cells;
}

Config ablation_config(const Config& base, const AblationCell& cell, std::uint64_t seed) {
  Config cfg = base;
  cfg.set("seed", std::to_string(seed));
  if (cell.mode == WeightMode::kLearned) {
    cfg.set("weights.mode", "learned");
    return cfg;
  }
  std::string streams;
  for (Stream s : kAllStreams) {
    if (cell.weights[index_of(s)] > 0) streams += (streams.empty() ? "" : ",") + std::string(stream_name(s));
  }
  cfg.set("model.streams", streams);
  cfg.set("weights.mode", "fixed");
  cfg.set("weights.fixed", weights_text(cell.weights));
  return cfg;
}

std::vector<AblationResult> run_ablation(const Config& base, const ClassDataset& ds,
                                         const std::vector<AblationCell>& cells, std::size_t seeds,
                                         const std::filesystem::path& out_dir, std::ostream* log) {
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  if (seeds == 0) throw ConfigError("ablate.seeds must be >= 1");
  std::filesystem::create_directories(out_dir);
  const auto first_seed = static_cast<std::uint64_t>(base.get_int("seed"));
  EvalOptions eval = eval_options(base);  // the same test episodes for every cell
  std::vector<AblationResult> results;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < seeds; ++s) {
      AblationResult r;
      r.cell = cells[c];
      r.seed = first_seed + s;
      r.run_dir = out_dir / ("cell" + std::to_string(c)) / ("seed" + std::to_string(r.seed));
      const Config cfg = ablation_config(base, cells[c], r.seed);
      if (log != nullptr) *log << "[" << cells[c].label << ", seed " << r.seed << "]" << std::endl;
      Trainer trainer(cfg, ds);
      const TrainSummary summary = trainer.run(r.run_dir, log);
      auto model = model_from_checkpoint(load_checkpoint(summary.best_checkpoint));
      r.report = evaluate(*model, ds, eval);
      if (log != nullptr) *log << "  test " << r.report.summary() << std::endl;
      results.push_back(std::move(r));
      write_text(out_dir / "ablation.csv", ablation_csv(results));
      write_text(out_dir / "ablation.md", ablation_markdown(results));
    }
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::string out = "cell,mode,w_a,w_corrC,w_corrD,w_MI,seed,accuracy,ci95,acc_a,acc_corrC,acc_corrD,acc_MI\n";
  for (const auto& r : results) {
    out += "\"" + r.cell.label + "\"," + (r.cell.mode == WeightMode::kLearned ? "learned" : "fixed");
    for (std::size_t k = 0; k < kStreamCount; ++k) {
      out += "," + (r.cell.mode == WeightMode::kLearned ? std::string() : fmt(r.cell.weights[k], "%g"));
    }
    out += "," + std::to_string(r.seed) + "," + fmt(r.report.accuracy) + "," + fmt(r.report.ci95);
    for (const auto& a : r.report.stream_accuracy) out += "," + (a ? fmt(*a) : std::string());
    out += "\n";
  }
  return out;
}

std::string ablation_markdown(const std::vector<AblationResult>& results) {
  struct Row {
    const AblationCell* cell;
    std::vector<const EvalReport*> reports;
  };
  std::vector<Row> rows;
  for (const auto& r : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const Row& row) { return row.cell->label == r.cell.label; });
    if (it == rows.end()) rows.push_back({&r.cell, {&r.report}});
    else it->reports.push_back(&r.report);
  }
  std::string out =
      "| Weighting | appearance | corr_channel | corr_spatial | MI | Accuracy (%) | Seeds |\n"
      "|---|---|---|---|---|---|---|\n";
  for (const Row& row : rows) {
    double acc = 0, ci = 0;
    for (const EvalReport* rep : row.reports) acc += rep->accuracy, ci += rep->ci95;
    acc /= static_cast<double>(row.reports.size());
    ci /= static_cast<double>(row.reports.size());
    out += "| " + row.cell->label;
    for (std::size_t k = 0; k < kStreamCount; ++k) {
      out += " | " + (row.cell->mode == WeightMode::kLearned ? std::string("learned")
                                                             : row.cell->weights[k] > 0 ? fmt(row.cell->weights[k], "%g")
                                                                                        : std::string("-"));
    }
    out += " | " + fmt(100 * acc, "%.2f") + " ± " + fmt(100 * ci, "%.2f") + " | " +
           std::to_string(row.reports.size()) + " |\n";
  }
  return out;
}

// ---- feature maps ------------------------------------------------------------

FeatureDump extract_features(FewShotModel& model, const Tensor& images, std::size_t channels) {
  if (images.ndim() != 4 || images.dim(0) == 0) throw ContractError("feature dump needs at least one image");
  NoGradGuard no_grad;
  const Tensor f = model.embedding().embed(images, false);
  FeatureDump d;
  d.images = f.dim(0);
  d.channels = std::min(channels, f.dim(1));
  d.height = f.dim(2);
  d.width = f.dim(3);
  const std::size_t plane = d.height * d.width;
  d.values.reserve(d.images * d.channels * plane);
  for (std::size_t i = 0; i < d.images; ++i) {
    const Real* base = f.data().data() + i * f.dim(1) * plane;
    d.values.insert(d.values.end(), base, base + d.channels * plane);
  }
  return d;
}

Image feature_grid(const FeatureDump& d, std::size_t scale) {
  if (scale == 0) throw ContractError("feature grid scale must be positive");
  constexpr std::size_t kGap = 1;
  const std::size_t th = d.height * scale, tw = d.width * scale;
  Image img;
  img.channels = 1;
  img.height = d.images * (th + kGap) + kGap;
  img.width = d.channels * (tw + kGap) + kGap;
  img.pixels.assign(img.height * img.width, 1.0f);
  for (std::size_t i = 0; i < d.images; ++i) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      Real lo = d.at(i, c, 0, 0), hi = lo;
      for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x) lo = std::min(lo, d.at(i, c, y, x)), hi = std::max(hi, d.at(i, c, y, x));
      const std::size_t top = kGap + i * (th + kGap), left = kGap + c * (tw + kGap);
      for (std::size_t y = 0; y < th; ++y) {
        for (std::size_t x = 0; x < tw; ++x) {
          const Real v = d.at(i, c, y / scale, x / scale);
          const double g = hi > lo ? static_cast<double>((v - lo) / (hi - lo)) : 0.5;
          img.pixels[(top + y) * img.width + left + x] = static_cast<float>(g);
        }
      }
    }
  }
  return img;
}

void write_feature_dump(const FeatureDump& d, const std::filesystem::path& png, const std::filesystem::path& csv) {
  write_png(png, feature_grid(d));
  std::ofstream out(csv);
  if (!out) throw DataError("cannot write " + csv.string());
  out << "image,channel,y,x,value\n";
  for (std::size_t i = 0; i < d.images; ++i)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x)
          out << i << ',' << c << ',' << y << ',' << x << ',' << fmt(d.at(i, c, y, x)) << '\n';
  if (!out) throw DataError("cannot write " + csv.string());
}

// ---- MI consistency probe ----------------------------------------------------

ProbePairs sample_probe_pairs(const ClassDataset& ds, Split split, std::size_t count, Rng& rng) {
  const std::vector<std::size_t> classes = ds.classes_in(split);
  std::vector<std::size_t> multi;
  for (std::size_t c : classes)
    if (ds.classes[c].images.size() >= 2) multi.push_back(c);
  if (classes.size() < 2 || multi.empty()) {
    throw ContractError(std::string("split ") + std::string(split_name(split)) +
                        " needs two classes and a class with two images for probe pairs");
  }
  ProbePairs p;
  for (std::size_t i = 0; i < count; ++i) {
    const bool same = i % 2 == 0;
    if (same) {
      const std::size_t c = multi[rng.uniform_index(multi.size())];
      const std::size_t n = ds.classes[c].images.size();
      const std::size_t a = rng.uniform_index(n);
      std::size_t b = rng.uniform_index(n - 1);
      if (b >= a) ++b;
      p.support.push_back({c, a});
      p.query.push_back({c, b});
    } else {
      const std::size_t ca = classes[rng.uniform_index(classes.size())];
      std::size_t cb = classes[rng.uniform_index(classes.size() - 1)];
      if (cb == ca) cb = classes.back();
      p.support.push_back({ca, rng.uniform_index(ds.classes[ca].images.size())});
      p.query.push_back({cb, rng.uniform_index(ds.classes[cb].images.size())});
    }
    p.same.push_back(same ? Real(1) : Real(0));
  }
  return p;
}

double probe_mse(std::span<const Real> scores, std::span<const Real> targets) {
  if (scores.size() != targets.size() || scores.empty()) throw ContractError("probe_mse needs equal, non-empty inputs");
  double s = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = static_cast<double>(scores[i]) - static_cast<double>(targets[i]);
    s += d * d;
  }
  return s / static_cast<double>(scores.size());
}

Tensor mi_pair_scores(FewShotModel& model, const Tensor& support_images, const Tensor& query_images,
                      bool train_head) {
  Tensor fs, fq;
  {
    NoGradGuard frozen;
    fs = model.embedding().embed(support_images, false);
    fq = model.embedding().embed(query_images, false);
  }
  return model.heads().mutual_info.score_pairs(global_max_pool(fs), fq, train_head);
}

MiProbeReport mi_probe(FewShotModel& model, const ClassDataset& ds, const MiProbeOptions& opt, std::ostream* log) {
  if (opt.pairs == 0) throw ConfigError("mi_probe.pairs must be > 0");
  MiProbeReport report;
  report.head_trained_with_model = model.enabled().contains(Stream::kMutualInfo);
  report.fit_iterations = opt.fit_iterations;
  if (opt.fit_iterations > 0) {
    std::vector<NamedTensor> params, buffers;
    model.heads().mutual_info.collect("mi", params, buffers);
    std::vector<Tensor> tensors;
    for (auto& p : params) tensors.push_back(p.tensor);
    Adam adam(tensors, AdamConfig{static_cast<Real>(opt.fit_lr)});
    Rng rng = Rng(opt.seed).fork(kProbeFitSalt);
    for (std::size_t it = 0; it < opt.fit_iterations; ++it) {
      const ProbePairs batch = sample_probe_pairs(ds, Split::kTrain, std::max<std::size_t>(opt.fit_batch, 2), rng);
      adam.zero_grad();
      const Tensor scores = mi_pair_scores(model, images_to_tensor(ds, batch.support),
                                           images_to_tensor(ds, batch.query), true);
      const Tensor target = Tensor::from({batch.same.size()}, batch.same);
      const Tensor loss = mean(square(sub(scores, target)));
      loss.backward();
      adam.step();
      if (log != nullptr && (it + 1) % 100 == 0) *log << "  fit " << it + 1 << "  mse " << loss.item() << std::endl;
    }
  }
  Rng rng = Rng(opt.seed).fork(kProbePairSalt);
  const ProbePairs pairs = sample_probe_pairs(ds, opt.split, opt.pairs, rng);
  std::vector<Real> scores;
  scores.reserve(pairs.same.size());
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 100;
  for (std::size_t first = 0; first < pairs.same.size(); first += kChunk) {
    const std::size_t n = std::min(kChunk, pairs.same.size() - first);
    const std::span<const ImageRef> s(pairs.support.data() + first, n), q(pairs.query.data() + first, n);
    const Tensor out = mi_pair_scores(model, images_to_tensor(ds, s), images_to_tensor(ds, q), false);
    scores.insert(scores.end(), out.data().begin(), out.data().end());
  }
  report.pairs = scores.size();
  report.mse = probe_mse(scores, pairs.same);
  return report;
}

}  // namespace fewshot
