#include "fewshot/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Keys that shape a trained model; evaluation, probing and output settings
// are left out so one checkpoint serves many of those runs.
bool affects_results(std::string_view key) {
  if (key == "train.checkpoint_dir") return false;
  for (std::string_view prefix : {"seed", "dataset.", "episode.", "augment.", "model.", "loss.", "weights.", "train."}) {
    if (key.starts_with(prefix)) return true;
  }
  return false;
}

}  // namespace

const std::map<std::string, std::string, std::less<>>& Config::defaults() {
  static const std::map<std::string, std::string, std::less<>> table = {
      {"seed", "1"},
      // data
      {"dataset.root", ""},
      {"dataset.split_file", ""},  // empty: <root>/splits.txt
      {"dataset.image_size", "24"},
      {"dataset.channels", "1"},
      {"dataset.mean", ""},  // empty: estimated on the training split
      {"dataset.std", ""},
      {"episode.ways", "5"},
      {"episode.shots", "1"},
      {"episode.queries", "19"},
      {"episode.eval_queries", "15"},
      {"episode.batch", "1"},
      {"augment.rotations", "true"},
      {"augment.flip_jitter", "false"},
      {"augment.flip_probability", "0.5"},
      {"augment.rotation_degrees", "15"},
      {"augment.brightness", "0.4"},
      {"augment.contrast", "0.4"},
      {"augment.saturation", "0.4"},
      // model
      {"model.streams", "all"},
      {"model.mi_mode", "pooled"},
      {"model.normalization", "global"},
      {"model.shot_aggregation", "sum"},
      // objective
      {"loss.kind", "mse"},
      {"weights.mode", "learned"},
      {"weights.fixed", "4,2,1,2"},
      {"weights.init_log_var", "0,0,0,0"},
      // optimisation
      {"train.iterations", "2000"},
      {"train.lr", "0.001"},
      {"train.lr_decay_interval", "2000"},
      {"train.eval_interval", "500"},
      {"train.eval_episodes", "100"},
      {"train.checkpoint_dir", ""},  // empty: the output directory
      // evaluation
      {"eval.split", "test"},
      {"eval.episodes", "600"},
      {"eval.workers", "0"},  // 0: hardware concurrency
      // ablation: ';'-separated cells, each "w_a,w_corrC,w_corrD,w_MI" or "learned"
      {"ablate.grid", "1,0,0,0;1,1,0,0;2,1,0,0;2,1,1,0;4,2,1,0;4,2,1,2;4,2,1,4;learned"},
      {"ablate.seeds", "1"},
      // MI consistency probe
      {"mi_probe.pairs", "2000"},
      {"mi_probe.split", "test"},
      {"mi_probe.fit_iterations", "0"},
      {"mi_probe.fit_lr", "0.001"},
      // feature dump
      {"dump.channels", "16"},
      {"dump.out", ""},
  };
  return table;
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config Config::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(std::string_view key, std::string_view value) {
  if (!defaults().contains(key)) throw ConfigError("unknown config key '" + std::string(key) + "'");
  values_[std::string(key)] = std::string(value);
}

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool Config::has(std::string_view key) const { return values_.contains(key); }

std::string Config::get(std::string_view key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  auto it = defaults().find(key);
  if (it == defaults().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t Config::get_int(std::string_view key) const {
  const std::string v = get(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key " + std::string(key) + " expects an integer, got '" + v + "'");
  }
  return out;
}

std::size_t Config::get_size(std::string_view key) const {
  const std::int64_t v = get_int(key);
  if (v < 0) throw ConfigError("config key " + std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double Config::get_double(std::string_view key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + std::string(key) + " expects a number, got '" + v + "'");
  }
}

bool Config::get_bool(std::string_view key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + std::string(key) + " expects true/false, got '" + v + "'");
}

std::vector<double> Config::get_doubles(std::string_view key) const {
  const std::string v = get(key);
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t(trim(item));
    try {
      std::size_t used = 0;
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::logic_error&) {
      throw ConfigError("config key " + std::string(key) + " expects comma-separated numbers, got '" + v + "'");
    }
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, def] : defaults()) out += key + "=" + get(key) + "\n";
  return out;
}

std::uint64_t Config::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [key, def] : defaults()) {
    if (!affects_results(key)) continue;
    const std::string line = key + "=" + get(key) + "\n";
    for (unsigned char c : line) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint));
  return buf;
}

}  // namespace fewshot
