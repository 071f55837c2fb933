// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--cache DIR] [criterion ...]
//
// Criteria 6-8 train several models on the procedural glyph dataset. Finished
// runs (checkpoints, metrics, test reports) are kept under the cache
// directory, keyed by a hash of their full configuration, and reused by later
// invocations with the same settings.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fewshot/analysis.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/glyphs.hpp"
#include "fewshot/objective.hpp"
#include "fewshot/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace fewshot;
using fewshot::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---- shared experiment settings ----------------------------------------------

// Omniglot-sized stand-in: 30 alphabets x 16 characters x 20 drawings, 24x24,
// quadrupled by rotation.
GlyphOptions standard_glyphs() { return GlyphOptions{}; }

// Same alphabets drawn with stronger noise. Appearance-only accuracy stays
// off the ceiling, so the stream comparisons are not decided by ties.
GlyphOptions noisy_glyphs() {
  GlyphOptions g;
  g.point_jitter = 0.05;
  g.max_rotation_degrees = 18;
  g.scale_jitter = 0.13;
  g.shift = 0.08;
  return g;
}

std::string describe(const GlyphOptions& g) {
  std::ostringstream os;
  os << std::setprecision(17) << "glyphs " << g.alphabets << ' ' << g.characters_per_alphabet << ' ' << g.drawings
     << ' ' << g.image_size << ' ' << g.seed << ' ' << g.point_jitter << ' ' << g.max_rotation_degrees << ' '
     << g.scale_jitter << ' ' << g.shift << ' ' << g.stroke_width << ' ' << g.train_fraction << ' '
     << g.val_fraction;
  return os.str();
}

constexpr std::size_t kTrainIterations = 1500;
constexpr std::size_t kTestEpisodes = 1000;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr std::size_t kProbeFitIterations = 300;

Config experiment_config(const std::string& streams, std::uint64_t seed) {
  Config c;
  c.set("seed", std::to_string(seed));
  c.set("model.streams", streams);
  c.set("weights.mode", "learned");
  c.set("episode.queries", "5");
  c.set("train.iterations", std::to_string(kTrainIterations));
  c.set("train.eval_interval", "500");
  c.set("train.eval_episodes", "100");
  c.set("eval.episodes", std::to_string(kTestEpisodes));
  c.set("eval.workers", "0");
  return c;
}

const ClassDataset& standard_dataset() {
  static const ClassDataset ds = augment_rotations(glyph_dataset(standard_glyphs()));
  return ds;
}

const ClassDataset& noisy_dataset() {
  static const ClassDataset ds = augment_rotations(glyph_dataset(noisy_glyphs()));
  return ds;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// A trained model plus its test report, trained on first use.
struct Run {
  fs::path dir;
  double train_seconds = 0;
  bool cached = false;
  EvalReport report;
};

void write_report(const fs::path& p, const EvalReport& r, double train_seconds) {
  std::ofstream out(p);
  out << std::setprecision(17) << "train_seconds " << train_seconds << "\naccuracy " << r.accuracy << "\nci95 "
      << r.ci95 << "\nepisodes " << r.episodes << '\n';
  for (Stream s : kAllStreams) {
    if (r.stream_accuracy[index_of(s)]) out << "stream " << stream_name(s) << ' ' << *r.stream_accuracy[index_of(s)] << '\n';
  }
}

bool read_report(const fs::path& p, EvalReport& r, double& train_seconds) {
  std::ifstream in(p);
  if (!in) return false;
  std::string key;
  while (in >> key) {
    if (key == "train_seconds") in >> train_seconds;
    else if (key == "accuracy") in >> r.accuracy;
    else if (key == "ci95") in >> r.ci95;
    else if (key == "episodes") in >> r.episodes;
    else if (key == "stream") {
      std::string name;
      double v;
      in >> name >> v;
      if (auto s = parse_stream(name)) r.stream_accuracy[index_of(*s)] = v;
    }
  }
  return r.episodes > 0;
}

Run trained_run(const fs::path& cache, const std::string& label, const Config& cfg, const GlyphOptions& glyphs,
                const ClassDataset& ds) {
  const std::string key = cfg.canonical() + describe(glyphs);
  Run run;
  run.dir = cache / (label + "-" + fingerprint_hex(fnv1a(key)));
  const fs::path report_path = run.dir / "test_report.txt";
  if (read_report(report_path, run.report, run.train_seconds)) {
    run.cached = true;
    return run;
  }
  fs::remove_all(run.dir);
  fs::create_directories(run.dir);
  std::ofstream(run.dir / "config.txt") << cfg.canonical();
  std::ofstream log(run.dir / "train.log");
  const auto t0 = Clock::now();
  Trainer trainer(cfg, ds);
  const TrainSummary summary = trainer.run(run.dir, &log);
  run.train_seconds = seconds_since(t0);
  auto model = model_from_checkpoint(load_checkpoint(summary.best_checkpoint));
  run.report = evaluate(*model, ds, eval_options(cfg));
  write_report(report_path, run.report, run.train_seconds);
  return run;
}

std::string stream_detail(const EvalReport& r) {
  std::string out;
  for (Stream s : kAllStreams) {
    if (r.stream_accuracy[index_of(s)]) out += " " + std::string(stream_tag(s)) + "=" + fmt(*r.stream_accuracy[index_of(s)]);
  }
  return out;
}

// ---- 1: gradients ----------------------------------------------------------------

double ops_worst(std::string& worst) {
  double w = 0;
  for (const auto& c : fewshot::testing::op_cases()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed * 7919);
      std::vector<Tensor> inputs = c.make(rng);
      const std::uint64_t probe_seed = rng.next_u64();
      auto loss = [&] {
        Rng pr(probe_seed);
        return fewshot::testing::probe(c.apply(inputs), pr);
      };
      const double e = fewshot::testing::check_gradients(loss, inputs).max_rel_error;
      if (e > w) {
        w = e;
        worst = c.name + " seed " + std::to_string(seed);
      }
    }
  }
  return w;
}

struct EndToEndCase {
  LossKind loss;
  MiMode mi;
  NormGranularity granularity;
  ShotAggregation aggregation;
  std::size_t shots;
};

// Full fused loss of a small 4-stream model; every parameter tensor is
// checked on its largest-gradient entry plus a few random entries.
double end_to_end_worst(std::uint64_t seed, const EndToEndCase& ec, std::string& worst) {
  ModelSpec spec;
  spec.image_size = 16;
  spec.streams.mi_mode = ec.mi;
  spec.streams.granularity = ec.granularity;
  spec.aggregation = ec.aggregation;
  spec.loss = ec.loss;
  spec.weight_mode = WeightMode::kLearned;
  Rng rng(seed);
  FewShotModel model(spec, rng);
  // Move off the neutral relation and weighting start so every term carries
  // gradient.
  model.heads().corr_channel.weight.mutable_data()[0] = rng.uniform(-4, -1);
  model.heads().corr_spatial.weight.mutable_data()[0] = rng.uniform(-4, -1);
  Tensor log_vars = model.weights().log_vars();
  for (Real& s : log_vars.mutable_data()) s = rng.uniform(-0.5, 0.5);

  const std::size_t ways = 3, queries = 2;
  Tensor support = random_tensor({ways * ec.shots, 1, 16, 16}, rng);
  Tensor query = random_tensor({ways * queries, 1, 16, 16}, rng);
  std::vector<std::size_t> classes{0, 1, 2}, labels;
  for (std::size_t c = 0; c < ways; ++c) labels.insert(labels.end(), queries, c);
  const MatchTargets targets = match_targets(classes, labels);
  auto loss = [&] { return model.forward(support, query, ways, ec.shots, targets, true).total; };

  auto params = model.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  loss().backward();

  const double h = 1e-5;
  double w = 0;
  for (auto& p : params) {
    Tensor& t = p.tensor;
    const auto grad = t.grad();
    std::set<std::size_t> picks;
    std::size_t top = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (std::abs(grad[i]) > std::abs(grad[top])) top = i;
    }
    picks.insert(top);
    while (picks.size() < std::min<std::size_t>(6, t.numel())) picks.insert(rng.uniform_index(t.numel()));
    double diff = 0, na = 0, nn = 0;
    auto values = t.mutable_data();
    for (std::size_t i : picks) {
      const Real saved = values[i];
      double fp, fm;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        fp = loss().item();
        values[i] = saved - h;
        fm = loss().item();
      }
      values[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      diff += (grad[i] - numeric) * (grad[i] - numeric);
      na += grad[i] * grad[i];
      nn += numeric * numeric;
    }
    // Entries whose gradient is below the finite-difference noise floor are
    // compared in absolute terms.
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-5});
    if (rel > w) {
      w = rel;
      worst = p.name + " seed " + std::to_string(seed);
    }
  }
  return w;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::string ops_at;
  const double ops = ops_worst(ops_at);
  const EndToEndCase cases[] = {
      {LossKind::kMSE, MiMode::kPooled, NormGranularity::kGlobal, ShotAggregation::kSum, 1},
      {LossKind::kCEL, MiMode::kPooled, NormGranularity::kGlobal, ShotAggregation::kSum, 1},
      {LossKind::kMSE, MiMode::kDense, NormGranularity::kGlobal, ShotAggregation::kSum, 1},
      {LossKind::kCEL, MiMode::kDense, NormGranularity::kChannel, ShotAggregation::kSum, 1},
      {LossKind::kMSE, MiMode::kPooled, NormGranularity::kChannel, ShotAggregation::kMean, 2},
  };
  std::string e2e_at;
  double e2e = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::string at;
    const double e = end_to_end_worst(seed, cases[seed - 1], at);
    if (e > e2e) {
      e2e = e;
      e2e_at = at;
    }
  }
  const double secs = seconds_since(t0);
  return {ops < 1e-4 && e2e < 1e-3 && secs < 120,
          "ops worst rel " + fmt(ops, 3) + " (" + ops_at + ", limit 1e-4); end-to-end worst rel " + fmt(e2e, 3) +
              " (" + e2e_at + ", limit 1e-3); 5 seeds; " + fmt(secs, 3) + " s (limit 120 s)"};
}

// ---- 2: correlation oracle -----------------------------------------------------

Outcome criterion2() {
  using fewshot::testing::gram_channel_loops;
  using fewshot::testing::gram_spatial_loops;
  using fewshot::testing::normalize_loops;
  using fewshot::testing::symmetric_eigenvalues;
  const auto t0 = Clock::now();
  const std::size_t c = 64, d = 9;
  double oracle = 0, asym = 0, min_eig = 1e300, trace = 0, affine = 0, spectrum = 0;
  Rng rng(2024);
  for (int map = 0; map < 50; ++map) {
    Tensor f = random_tensor({c, d}, rng, false, -2, 3);
    const Tensor n = normalize_map(f);
    const Tensor loop_n = Tensor::from({c, d}, normalize_loops(f));
    Tensor grams[2] = {corr_spatial(n), corr_channel(n)};
    const std::vector<double> oracles[2] = {gram_spatial_loops(loop_n), gram_channel_loops(loop_n)};
    const std::size_t sizes[2] = {d, c};

    const Real a = static_cast<Real>(rng.uniform(0.1, 10)), b = static_cast<Real>(rng.uniform(-5, 5));
    const Tensor shifted = normalize_map(add_scalar(mul_scalar(f, a), b));
    const Tensor moved[2] = {corr_spatial(shifted), corr_channel(shifted)};

    std::vector<double> eig[2];
    for (int k = 0; k < 2; ++k) {
      const std::size_t s = sizes[k];
      const auto g = grams[k].data();
      double tr = 0;
      for (std::size_t i = 0; i < s; ++i) {
        tr += g[i * s + i];
        for (std::size_t j = 0; j < s; ++j) {
          oracle = std::max(oracle, std::abs(g[i * s + j] - oracles[k][i * s + j]));
          asym = std::max(asym, std::abs(g[i * s + j] - g[j * s + i]));
          affine = std::max(affine, std::abs(g[i * s + j] - moved[k].data()[i * s + j]));
        }
      }
      trace = std::max(trace, std::abs(tr - 1));
      eig[k] = symmetric_eigenvalues(std::vector<double>(g.begin(), g.end()), s);
      min_eig = std::min(min_eig, eig[k].front());
    }
    // The DxD spectrum equals the top D eigenvalues of the CxC one; the rest are zero.
    for (std::size_t i = 0; i < d; ++i) spectrum = std::max(spectrum, std::abs(eig[0][i] - eig[1][c - d + i]));
    for (std::size_t i = 0; i < c - d; ++i) spectrum = std::max(spectrum, std::abs(eig[1][i]));
  }
  const double secs = seconds_since(t0);
  const bool pass = oracle <= 1e-12 && asym <= 1e-12 && min_eig >= -1e-8 && trace <= 1e-9 && affine <= 1e-10 &&
                    spectrum <= 1e-10 && secs < 60;
  return {pass, "50 maps 64x9: oracle " + fmt(oracle, 3) + " (1e-12), asymmetry " + fmt(asym, 3) +
                    ", min eigenvalue " + fmt(min_eig, 3) + " (>= -1e-8), |trace-1| " + fmt(trace, 3) +
                    " (1e-9), affine " + fmt(affine, 3) + ", spectrum gap " + fmt(spectrum, 3) + "; " +
                    fmt(secs, 3) + " s"};
}

// ---- 3: uncertainty weighting ---------------------------------------------------

Outcome criterion3() {
  const auto t0 = Clock::now();
  double grad_err = 0;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PerStream<Real> s0{};
    PerStream<Tensor> losses;
    PerStream<Real> l{};
    for (std::size_t k = 0; k < kStreamCount; ++k) {
      s0[k] = rng.uniform(-2, 2);
      l[k] = rng.uniform(0.05, 5);
      losses[k] = Tensor::scalar(l[k]);
    }
    StreamWeights w = StreamWeights::learned(s0);
    Tensor s = w.log_vars();
    s.zero_grad();
    fuse_uncertainty(losses, s).backward();
    const double h = 1e-5;
    for (std::size_t k = 0; k < kStreamCount; ++k) {
      const double closed = -std::exp(-s0[k]) * l[k] + 0.5;
      auto v = s.mutable_data();
      double fp, fm;
      {
        NoGradGuard guard;
        v[k] = s0[k] + h;
        fp = fuse_uncertainty(losses, s).item();
        v[k] = s0[k] - h;
        fm = fuse_uncertainty(losses, s).item();
        v[k] = s0[k];
      }
      grad_err = std::max({grad_err, std::abs((fp - fm) / (2 * h) - closed), std::abs(s.grad()[k] - closed)});
    }
  }

  // Frozen losses on two streams; gradient descent on s alone.
  PerStream<Tensor> frozen;
  frozen[0] = Tensor::scalar(0.5);
  frozen[1] = Tensor::scalar(2.0);
  StreamWeights w = StreamWeights::learned();
  Tensor s = w.log_vars();
  for (int it = 0; it < 2000; ++it) {
    s.zero_grad();
    fuse_uncertainty(frozen, s).backward();
    for (std::size_t k = 0; k < 2; ++k) s.mutable_data()[k] -= 0.5 * s.grad()[k];
  }
  const double e1 = std::abs(s.data()[0] - std::log(1.0)), e2 = std::abs(s.data()[1] - std::log(4.0));
  const double ratio = std::exp(-s.data()[0]) / std::exp(-s.data()[1]);
  const double secs = seconds_since(t0);
  const bool pass = grad_err <= 1e-6 && e1 <= 1e-3 && e2 <= 1e-3 && std::abs(ratio / 4 - 1) <= 0.01 && secs < 10;
  return {pass, "gradient error " + fmt(grad_err, 3) + " (1e-6); s = " + fmt(s.data()[0], 6) + ", " +
                    fmt(s.data()[1], 6) + " vs ln(1), ln(4); weight ratio " + fmt(ratio, 6) + " (4 +- 1%); " +
                    fmt(secs, 3) + " s"};
}

// ---- 4: episodes ---------------------------------------------------------------

Outcome criterion4() {
  const auto t0 = Clock::now();
  const ClassDataset& ds = standard_dataset();
  struct Task {
    EpisodeSpec spec;
    std::size_t m, n;
  };
  const Task tasks[] = {{{5, 1, 15}, 5, 75}, {{20, 5, 5}, 100, 100}};
  std::string failure;
  std::size_t checked = 0;
  Rng rng(4);
  for (const Task& task : tasks) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      for (int i = 0; i < 500 && failure.empty(); ++i) {
        const Episode ep = sample_episode(ds, split, task.spec, rng);
        if (auto bad = check_episode(ds, ep)) failure = *bad;
        if (ep.support_size() != task.m || ep.query_size() != task.n) failure = "wrong episode size";
        for (std::size_t c : ep.classes) {
          if (ds.classes[c].split != split) failure = "class from another split";
        }
        if (i < 3) {
          const Tensor s = images_to_tensor(ds, ep.support), q = images_to_tensor(ds, ep.query);
          if (s.shape() != Shape{task.m, 1, 24, 24} || q.shape() != Shape{task.n, 1, 24, 24}) failure = "tensor shape";
        }
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failure.empty() && secs < 60,
          std::to_string(checked / 2) + " episodes per task (5-way 1-shot m=5 n=75, 20-way 5-shot m=100 n=100)" +
              (failure.empty() ? std::string("") : "; violation: " + failure) + "; " + fmt(secs, 3) + " s"};
}

// ---- 5: untrained model ---------------------------------------------------------

Outcome criterion5() {
  const auto t0 = Clock::now();
  Config cfg;
  auto model = build_model(cfg);
  EvalOptions o;
  o.episodes = 600;
  o.workers = 0;
  const EvalReport r = evaluate(*model, standard_dataset(), o);
  const double secs = seconds_since(t0);
  const double gap = std::abs(r.accuracy - 0.2);
  return {gap <= 3 * r.ci95 && secs < 300, "untrained " + r.summary() + ", |acc-0.2| = " + fmt(gap, 3) +
                                               " vs 3 half-widths " + fmt(3 * r.ci95, 3) + ";" + stream_detail(r) +
                                               "; " + fmt(secs, 3) + " s"};
}

// ---- 6-8: training -------------------------------------------------------------

struct Cell {
  std::string label;
  std::string streams;
};
const Cell kAllStreamsCell{"all", "all"};
const Cell kCells[] = {{"appearance", "appearance"},
                       {"appearance+relation", "appearance,corr_channel,corr_spatial"},
                       {"appearance+mi", "appearance,mi"}};

Outcome criterion6(const fs::path& cache) {
  const Run run = trained_run(cache, "all-seed1", experiment_config(kAllStreamsCell.streams, 1), standard_glyphs(),
                              standard_dataset());
  const bool pass = run.report.accuracy >= 0.9 && run.report.episodes == kTestEpisodes &&
                    kTrainIterations <= 30000 && run.train_seconds < 4 * 3600;
  return {pass, "glyphs, 4 streams, learned weights, " + std::to_string(kTrainIterations) + " iterations: test " +
                    run.report.summary() + " (>= 90%);" + stream_detail(run.report) + "; trained in " +
                    fmt(run.train_seconds, 4) + " s" + (run.cached ? " (cached run)" : "")};
}

Outcome criterion7(const fs::path& cache) {
  std::vector<double> mean(std::size(kCells), 0);
  std::string detail;
  bool cached = false;
  for (std::size_t c = 0; c < std::size(kCells); ++c) {
    detail += (c ? "; " : "") + kCells[c].label + " [";
    for (std::uint64_t seed : kSeeds) {
      const Run run = trained_run(cache, kCells[c].label + "-noisy-seed" + std::to_string(seed),
                                  experiment_config(kCells[c].streams, seed), noisy_glyphs(), noisy_dataset());
      cached = cached || run.cached;
      mean[c] += run.report.accuracy / std::size(kSeeds);
      detail += (seed == kSeeds[0] ? "" : " ") + fmt(100 * run.report.accuracy, 4);
    }
    detail += "] mean " + fmt(100 * mean[c], 4) + "%";
  }
  return {mean[0] < mean[1] && mean[0] < mean[2],
          detail + " over seeds 1-3, " + std::to_string(kTrainIterations) + " iterations, noisy glyphs" +
              (cached ? " (cached runs)" : "")};
}

Outcome criterion8(const fs::path& cache) {
  const auto t0 = Clock::now();
  // with MI: appearance+MI runs; without: appearance-only runs of the same seeds.
  const Cell* with = &kCells[2];
  const Cell* without = &kCells[0];
  double probe[2] = {0, 0}, stored[2] = {0, 0};
  for (std::uint64_t seed : kSeeds) {
    for (int k = 0; k < 2; ++k) {
      const Cell& cell = k == 0 ? *with : *without;
      const Run run = trained_run(cache, cell.label + "-noisy-seed" + std::to_string(seed),
                                  experiment_config(cell.streams, seed), noisy_glyphs(), noisy_dataset());
      const Checkpoint ck = load_checkpoint(run.dir / "best.ckpt");
      MiProbeOptions o;
      o.seed = seed;
      auto as_stored = model_from_checkpoint(ck);
      stored[k] += mi_probe(*as_stored, noisy_dataset(), o).mse / std::size(kSeeds);
      o.fit_iterations = kProbeFitIterations;
      auto refit = model_from_checkpoint(ck);
      probe[k] += mi_probe(*refit, noisy_dataset(), o).mse / std::size(kSeeds);
    }
  }
  const double secs = seconds_since(t0);
  return {probe[0] < probe[1],
          "probe MSE with MI (appearance+mi runs) " + fmt(probe[0]) + " vs without (appearance runs) " +
              fmt(probe[1]) + " (MI head refit for " +
              std::to_string(kProbeFitIterations) + " steps on both, mean of 3 seeds); heads as stored: " +
              fmt(stored[0]) + " vs " + fmt(stored[1]) + "; " + fmt(secs, 3) + " s"};
}

// ---- 9: determinism and persistence ---------------------------------------------

Outcome criterion9() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("fewshot-acceptance-" + std::to_string(Clock::now().time_since_epoch().count()));
  fs::remove_all(root);
  GlyphOptions g;
  g.alphabets = 10;
  g.characters_per_alphabet = 8;
  const ClassDataset ds = augment_rotations(glyph_dataset(g));
  Config cfg;
  cfg.set("seed", "9");
  cfg.set("episode.queries", "5");
  cfg.set("train.iterations", "12");
  cfg.set("train.eval_interval", "6");
  cfg.set("train.eval_episodes", "10");
  std::vector<std::string> problems;

  Trainer(cfg, ds).run(root / "a");
  Trainer(cfg, ds).run(root / "b");
  const std::string csv_a = slurp(root / "a" / "metrics.csv");
  if (csv_a.empty() || csv_a != slurp(root / "b" / "metrics.csv")) problems.push_back("metrics differ");

  // file round trip: bytes and tensor bits
  const Checkpoint ck = load_checkpoint(root / "a" / "last.ckpt");
  save_checkpoint(ck, root / "copy.ckpt");
  if (slurp(root / "a" / "last.ckpt") != slurp(root / "copy.ckpt")) problems.push_back("re-saved bytes differ");
  Trainer restored(cfg, ds);
  restored.restore(ck);
  const Checkpoint again = restored.checkpoint();
  bool same = again.tensors.size() == ck.tensors.size() && again.rng_state == ck.rng_state &&
              again.iteration == ck.iteration;
  for (std::size_t i = 0; same && i < ck.tensors.size(); ++i) {
    same = again.tensors[i].name == ck.tensors[i].name &&
           std::memcmp(again.tensors[i].values.data(), ck.tensors[i].values.data(),
                       ck.tensors[i].values.size() * sizeof(double)) == 0;
  }
  if (!same) problems.push_back("restored state differs");

  // interrupted and resumed training continues bit-identically
  Trainer straight(cfg, ds), first(cfg, ds);
  std::vector<std::string> rows_straight, rows_resumed;
  for (int i = 0; i < 8; ++i) rows_straight.push_back(metrics_row(straight.step()));
  for (int i = 0; i < 4; ++i) rows_resumed.push_back(metrics_row(first.step()));
  save_checkpoint(first.checkpoint(), root / "mid.ckpt");
  Trainer second(cfg, ds);
  second.restore(load_checkpoint(root / "mid.ckpt"));
  for (int i = 0; i < 4; ++i) rows_resumed.push_back(metrics_row(second.step()));
  if (rows_straight != rows_resumed) problems.push_back("resumed run diverges");

  fs::remove_all(root);
  const double secs = seconds_since(t0);
  std::string detail = problems.empty() ? "identical metrics CSVs, bit-exact checkpoint round trip and resume"
                                        : "problems:";
  for (const auto& p : problems) detail += " " + p + ";";
  return {problems.empty() && secs < 300, detail + "; " + fmt(secs, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string cache = "acceptance-runs";
  std::vector<int> selected;
  app.add_option("--cache", cache, "directory for trained runs");
  app.add_option("criteria", selected, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  fs::create_directories(cache);

  const std::map<int, std::function<Outcome()>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, [&] { return criterion6(cache); }},
      {7, [&] { return criterion7(cache); }},
      {8, [&] { return criterion8(cache); }},
      {9, criterion9},
  };
  int failed = 0;
  for (int id : selected) {
    Outcome o;
    try {
      o = criteria.at(id)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
