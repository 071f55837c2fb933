#include "fewshot/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

constexpr std::uint64_t kInitSalt = 0x1;
constexpr std::uint64_t kTrainSalt = 0x2;
constexpr std::uint64_t kValidationSalt = 0x3;

PerStream<Real> four_values(const Config& cfg, std::string_view key) {
  const auto v = cfg.get_doubles(key);
  if (v.size() != kStreamCount) {
    throw ConfigError(std::string(key) + " needs 4 comma-separated values (appearance, corr_channel, corr_spatial, mi)");
  }
  PerStream<Real> out{};
  for (std::size_t k = 0; k < kStreamCount; ++k) out[k] = static_cast<Real>(v[k]);
  return out;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ModelSpec model_spec(const Config& cfg) {
  ModelSpec spec;
  spec.in_channels = cfg.get_size("dataset.channels");
  spec.image_size = cfg.get_size("dataset.image_size");
  spec.streams.enabled = StreamSet::parse(cfg.get("model.streams"));
  const std::string mi = cfg.get("model.mi_mode");
  if (mi == "pooled") spec.streams.mi_mode = MiMode::kPooled;
  else if (mi == "dense") spec.streams.mi_mode = MiMode::kDense;
  else throw ConfigError("model.mi_mode must be pooled or dense");
  const std::string norm = cfg.get("model.normalization");
  if (norm == "global") spec.streams.granularity = NormGranularity::kGlobal;
  else if (norm == "channel") spec.streams.granularity = NormGranularity::kChannel;
  else throw ConfigError("model.normalization must be global or channel");
  const std::string agg = cfg.get("model.shot_aggregation");
  if (agg == "sum") spec.aggregation = ShotAggregation::kSum;
  else if (agg == "mean") spec.aggregation = ShotAggregation::kMean;
  else throw ConfigError("model.shot_aggregation must be sum or mean");
  const std::string loss = cfg.get("loss.kind");
  if (loss == "mse") spec.loss = LossKind::kMSE;
  else if (loss == "cel") spec.loss = LossKind::kCEL;
  else throw ConfigError("loss.kind must be mse or cel");
  const std::string mode = cfg.get("weights.mode");
  if (mode == "fixed") spec.weight_mode = WeightMode::kFixed;
  else if (mode == "learned") spec.weight_mode = WeightMode::kLearned;
  else throw ConfigError("weights.mode must be fixed or learned");
  spec.fixed_weights = four_values(cfg, "weights.fixed");
  spec.init_log_vars = four_values(cfg, "weights.init_log_var");
  if (spec.in_channels != 1 && spec.in_channels != 3) throw ConfigError("dataset.channels must be 1 or 3");
  if (spec.image_size == 0 || spec.image_size % 4 != 0) {
    throw ConfigError("dataset.image_size must be a positive multiple of 4");
  }
  if (spec.streams.enabled.empty()) throw ConfigError("model.streams enables no stream");
  if (spec.weight_mode == WeightMode::kFixed) StreamWeights::fixed(spec.fixed_weights).validate(spec.streams.enabled);
  return spec;
}

TrainConfig TrainConfig::from(const Config& cfg) {
  TrainConfig tc;
  tc.model = model_spec(cfg);
  tc.episode.ways = cfg.get_size("episode.ways");
  tc.episode.shots = cfg.get_size("episode.shots");
  tc.episode.queries = cfg.get_size("episode.queries");
  tc.eval_queries = cfg.get_size("episode.eval_queries");
  tc.batch = cfg.get_size("episode.batch");
  tc.jitter.enabled = cfg.get_bool("augment.flip_jitter");
  tc.jitter.flip_probability = cfg.get_double("augment.flip_probability");
  tc.jitter.max_rotation_degrees = cfg.get_double("augment.rotation_degrees");
  tc.jitter.brightness = cfg.get_double("augment.brightness");
  tc.jitter.contrast = cfg.get_double("augment.contrast");
  tc.jitter.saturation = cfg.get_double("augment.saturation");
  tc.iterations = cfg.get_size("train.iterations");
  tc.lr = cfg.get_double("train.lr");
  tc.lr_decay_interval = cfg.get_size("train.lr_decay_interval");
  tc.eval_interval = cfg.get_size("train.eval_interval");
  tc.eval_episodes = cfg.get_size("train.eval_episodes");
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  if (tc.episode.ways < 2 || tc.episode.shots == 0 || tc.episode.queries == 0 || tc.eval_queries == 0) {
    throw ConfigError("episodes need ways >= 2, shots >= 1 and queries >= 1");
  }
  if (tc.batch == 0) throw ConfigError("episode.batch must be >= 1");
  if (tc.iterations == 0) throw ConfigError("train.iterations must be > 0");
  if (!(tc.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (tc.lr_decay_interval == 0) throw ConfigError("train.lr_decay_interval must be > 0");
  return tc;
}

ClassDataset load_configured_dataset(const Config& cfg) {
  const std::string root = cfg.get("dataset.root");
  if (root.empty()) throw ConfigError("dataset.root is not set");
  const std::string split = cfg.get("dataset.split_file");
  LoadOptions opts;
  opts.image_size = cfg.get_size("dataset.image_size");
  opts.channels = cfg.get_size("dataset.channels");
  opts.min_images = cfg.get_size("episode.shots") +
                    std::min(cfg.get_size("episode.queries"), cfg.get_size("episode.eval_queries"));
  opts.mean = cfg.get_doubles("dataset.mean");
  opts.std = cfg.get_doubles("dataset.std");
  ClassDataset ds = load_dataset(root, split.empty() ? std::filesystem::path(root) / "splits.txt" : std::filesystem::path(split), opts);
  return cfg.get_bool("augment.rotations") ? augment_rotations(ds) : ds;
}

std::unique_ptr<FewShotModel> build_model(const Config& cfg) {
  Rng rng = Rng(static_cast<std::uint64_t>(cfg.get_int("seed"))).fork(kInitSalt);
  return std::make_unique<FewShotModel>(model_spec(cfg), rng);
}

std::unique_ptr<FewShotModel> model_from_checkpoint(const Checkpoint& ckpt, Config* config) {
  Config cfg = Config::parse(ckpt.config_text);
  auto model = build_model(cfg);
  for (auto& p : model->parameters()) ckpt.restore("param/" + p.name, p.tensor);
  for (auto& b : model->buffers()) ckpt.restore("buffer/" + b.name, b.tensor);
  if (config != nullptr) *config = std::move(cfg);
  return model;
}

double learning_rate(double lr0, std::size_t interval, std::uint64_t iteration) {
  return lr0 / std::ldexp(1.0, static_cast<int>(std::min<std::uint64_t>(iteration / interval, 1000)));
}

std::string metrics_header() { return "iter,lr,L_total,L_a,L_corrC,L_corrD,L_MI,s_a,s_corrC,s_corrD,s_MI,val_acc"; }

std::string metrics_row(const IterationMetrics& m) {
  std::string row = std::to_string(m.iter) + "," + fmt(m.lr) + "," + fmt(m.total);
  for (const auto& v : m.losses) row += "," + (v ? fmt(*v) : std::string());
  for (const auto& v : m.log_vars) row += "," + (v ? fmt(*v) : std::string());
  row += "," + (m.val_accuracy ? fmt(*m.val_accuracy) : std::string());
  return row;
}

Trainer::Trainer(const Config& config, const ClassDataset& dataset)
    : config_(config),
      tc_(TrainConfig::from(config)),
      ds_(dataset),
      model_(build_model(config)),
      params_(model_->parameters()),
      buffers_(model_->buffers()),
      adam_(tensors_of(params_), AdamConfig{static_cast<Real>(tc_.lr)}),
      rng_(Rng(tc_.seed).fork(kTrainSalt)) {
  if (ds_.channels != tc_.model.in_channels || ds_.image_size != tc_.model.image_size) {
    throw ConfigError("dataset images are " + std::to_string(ds_.channels) + "x" + std::to_string(ds_.image_size) +
                      " but the model expects " + std::to_string(tc_.model.in_channels) + "x" +
                      std::to_string(tc_.model.image_size));
  }
}

IterationMetrics Trainer::step() {
  IterationMetrics m;
  m.iter = iteration_;
  m.lr = learning_rate(tc_.lr, tc_.lr_decay_interval, iteration_);
  adam_.set_lr(static_cast<Real>(m.lr));
  adam_.zero_grad();
  last_episodes_.clear();
  last_losses_ = {};
  const Real scale = Real(1) / static_cast<Real>(tc_.batch);
  try {
    for (std::size_t b = 0; b < tc_.batch; ++b) {
      last_episodes_.push_back(sample_episode(ds_, Split::kTrain, tc_.episode, rng_));
      const Episode& ep = last_episodes_.back();
      const Tensor support = images_to_tensor(ds_, ep.support, &tc_.jitter, &rng_);
      const Tensor query = images_to_tensor(ds_, ep.query, &tc_.jitter, &rng_);
      const MatchTargets targets = match_targets(ep.classes, ep.query_labels());
      const ForwardResult r = model_->forward(support, query, ep.spec.ways, ep.spec.shots, targets, true);
      for (std::size_t k = 0; k < kStreamCount; ++k) {
        if (!r.losses[k].defined()) continue;
        last_losses_[k] = last_losses_[k].value_or(0.0) + scale * r.losses[k].item();
      }
      const Real total = r.total.item();
      m.total += scale * total;
      if (!std::isfinite(total)) throw NumericalError("non-finite training loss");
      (tc_.batch == 1 ? r.total : mul_scalar(r.total, scale)).backward();
    }
    for (const auto& p : params_) {
      for (Real g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + p.name);
      }
    }
  } catch (const NumericalError& e) {
    write_diagnostics(e.what());
    throw;
  }
  adam_.step();
  ++iteration_;
  m.losses = last_losses_;
  if (model_->weights().mode() == WeightMode::kLearned) {
    const auto s = model_->weights().log_vars().data();
    for (Stream st : kAllStreams)
      if (model_->enabled().contains(st)) m.log_vars[index_of(st)] = s[index_of(st)];
  }
  return m;
}

std::optional<double> Trainer::validate() {
  if (ds_.class_count(Split::kVal) < tc_.episode.ways || tc_.eval_episodes == 0) return std::nullopt;
  EvalOptions o;
  o.split = Split::kVal;
  o.spec = {tc_.episode.ways, tc_.episode.shots, tc_.eval_queries};
  o.episodes = tc_.eval_episodes;
  o.seed = Rng(tc_.seed).fork(kValidationSalt).next_u64();
  o.workers = 1;
  return evaluate(*model_, ds_, o).accuracy;
}

TrainSummary Trainer::run(const std::filesystem::path& out_dir, std::ostream* log) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  diagnostics_dir_ = out_dir;
  const std::string ckpt_dir_key = config_.get("train.checkpoint_dir");
  const fs::path ckpt_dir = ckpt_dir_key.empty() ? out_dir : fs::path(ckpt_dir_key);
  fs::create_directories(ckpt_dir);
  TrainSummary summary;
  summary.metrics = out_dir / "metrics.csv";
  summary.last_checkpoint = ckpt_dir / "last.ckpt";
  summary.best_checkpoint = ckpt_dir / "best.ckpt";
  const bool resume = iteration_ > 0;
  std::ofstream csv(summary.metrics, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write " + summary.metrics.string());
  if (!resume) csv << metrics_header() << '\n';
  while (iteration_ < tc_.iterations) {
    IterationMetrics m = step();
    const bool eval_now = (tc_.eval_interval > 0 && iteration_ % tc_.eval_interval == 0) || iteration_ == tc_.iterations;
    if (eval_now) {
      m.val_accuracy = validate();
      const bool improved = m.val_accuracy && *m.val_accuracy > best_val_;
      if (improved) best_val_ = *m.val_accuracy;
      const Checkpoint ckpt = checkpoint();
      save_checkpoint(ckpt, summary.last_checkpoint);
      if (improved || (!m.val_accuracy && iteration_ == tc_.iterations)) save_checkpoint(ckpt, summary.best_checkpoint);
      if (log != nullptr) {
        *log << "iter " << iteration_ << "  lr " << m.lr << "  loss " << m.total;
        if (m.val_accuracy) *log << "  val_acc " << *m.val_accuracy;
        *log << std::endl;
      }
    }
    csv << metrics_row(m) << '\n';
    csv.flush();
  }
  summary.iterations = iteration_;
  if (best_val_ >= 0) summary.best_val_accuracy = best_val_;
  if (!fs::exists(summary.best_checkpoint)) save_checkpoint(checkpoint(), summary.best_checkpoint);
  return summary;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.fingerprint = config_.fingerprint();
  ck.config_text = config_.canonical();
  ck.iteration = iteration_;
  ck.best_val_accuracy = best_val_ >= 0 ? best_val_ : std::nan("");
  ck.rng_state = rng_.serialize();
  for (const auto& p : params_) ck.add("param/" + p.name, p.tensor);
  for (const auto& b : buffers_) ck.add("buffer/" + b.name, b.tensor);
  auto& adam = const_cast<Adam&>(adam_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.add("adam.m/" + params_[i].name, adam.first_moments()[i]);
    ck.add("adam.v/" + params_[i].name, adam.second_moments()[i]);
  }
  ck.add("adam.step", Tensor::scalar(static_cast<Real>(adam_.step_count())));
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.fingerprint != config_.fingerprint()) {
    throw ConfigError("checkpoint was trained with a different configuration (fingerprint " +
                      fingerprint_hex(ck.fingerprint) + ", current " + fingerprint_hex(config_.fingerprint()) + ")");
  }
  for (auto& p : params_) ck.restore("param/" + p.name, p.tensor);
  for (auto& b : buffers_) ck.restore("buffer/" + b.name, b.tensor);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.restore("adam.m/" + params_[i].name, adam_.first_moments()[i]);
    ck.restore("adam.v/" + params_[i].name, adam_.second_moments()[i]);
  }
  const StoredTensor* step = ck.find("adam.step");
  if (step == nullptr || step->values.size() != 1) throw DataError("checkpoint lacks the optimizer step count");
  adam_.set_step_count(static_cast<std::uint64_t>(step->values[0]));
  iteration_ = ck.iteration;
  best_val_ = std::isnan(ck.best_val_accuracy) ? -1 : ck.best_val_accuracy;
  rng_.deserialize(ck.rng_state);
}

void Trainer::write_diagnostics(const std::string& reason) const {
  if (diagnostics_dir_.empty()) return;
  std::ofstream out(diagnostics_dir_ / "numerical_abort.txt");
  out << "reason: " << reason << "\n";
  out << "iteration: " << iteration_ << "\n";
  out << "lr: " << learning_rate(tc_.lr, tc_.lr_decay_interval, iteration_) << "\n";
  for (Stream s : kAllStreams) {
    const auto& l = last_losses_[index_of(s)];
    out << "loss_" << stream_tag(s) << ": " << (l ? fmt(*l) : std::string("n/a")) << "\n";
  }
  if (model_->weights().mode() == WeightMode::kLearned) {
    for (Stream s : kAllStreams) out << "s_" << stream_tag(s) << ": " << fmt(model_->weights().log_vars().data()[index_of(s)]) << "\n";
  }
  for (std::size_t e = 0; e < last_episodes_.size(); ++e) {
    const Episode& ep = last_episodes_[e];
    out << "episode " << e << " classes:";
    for (std::size_t c : ep.classes) out << " " << ds_.classes[c].name;
    out << "\nepisode " << e << " support:";
    for (const ImageRef& r : ep.support) out << " " << r.class_id << ":" << r.index;
    out << "\nepisode " << e << " query:";
    for (const ImageRef& r : ep.query) out << " " << r.class_id << ":" << r.index;
    out << "\n";
  }
  for (const auto& p : params_) {
    std::size_t bad = 0;
    for (Real v : p.tensor.data()) bad += std::isfinite(v) ? 0 : 1;
    std::size_t bad_grad = 0;
    for (Real g : p.tensor.grad()) bad_grad += std::isfinite(g) ? 0 : 1;
    if (bad + bad_grad > 0) out << "non-finite in " << p.name << ": values " << bad << ", grads " << bad_grad << "\n";
  }
}

}  // namespace fewshot
