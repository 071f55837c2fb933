#include "fewshot/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits)
    if (name == split_name(s)) return s;
  throw ConfigError("unknown split '" + std::string(name) + "' (train|val|test)");
}

// ---- manifest --------------------------------------------------------------------------

SplitManifest SplitManifest::parse(std::string_view text) {
  SplitManifest m;
  std::optional<Split> current;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw DataError("split manifest line " + std::to_string(line_no) + ": bad header");
      const std::string_view name = line.substr(1, line.size() - 2);
      if (name != "train" && name != "val" && name != "test") {
        throw DataError("split manifest line " + std::to_string(line_no) + ": unknown split '" + std::string(name) + "'");
      }
      current = parse_split(name);
      continue;
    }
    if (!current) {
      throw DataError("split manifest line " + std::to_string(line_no) + ": class before any [train]/[val]/[test] header");
    }
    if (!seen.emplace(line).second) {
      throw DataError("split manifest lists class '" + std::string(line) + "' twice");
    }
    m.of(*current).emplace_back(line);
  }
  return m;
}

SplitManifest SplitManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string SplitManifest::str() const {
  std::string out;
  for (Split s : kAllSplits) {
    out += "[" + std::string(split_name(s)) + "]\n";
    for (const auto& c : of(s)) out += c + "\n";
  }
  return out;
}

// ---- dataset -----------------------------------------------------------------------------

std::vector<std::size_t> ClassDataset::classes_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i].split == split) out.push_back(i);
  return out;
}

Image ClassDataset::image(std::size_t class_id, std::size_t k) const {
  const DatasetClass& c = classes.at(class_id);
  const Image& base = images.at(c.images.at(k));
  return c.quarter_turns == 0 ? base : rotate90(base, c.quarter_turns);
}

void ClassDataset::validate() const {
  std::unordered_map<std::size_t, Split> owner;
  for (const DatasetClass& c : classes) {
    if (c.images.empty()) throw DataError("class '" + c.name + "' has no images");
    const auto [it, fresh] = owner.emplace(c.source, c.split);
    if (!fresh && it->second != c.split) {
      throw DataError("class '" + c.name + "' and its source class sit in different splits");
    }
  }
  std::set<std::string> names;
  for (const DatasetClass& c : classes) {
    if (!names.insert(c.name).second) throw DataError("class '" + c.name + "' appears twice");
  }
}

ClassDataset load_dataset(const std::filesystem::path& root, const SplitManifest& manifest,
                          const LoadOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  if (fs::is_empty(root)) throw DataError("dataset root " + root.string() + " is empty");
  if (options.image_size == 0 || (options.channels != 1 && options.channels != 3)) {
    throw ConfigError("image size must be positive and channels 1 or 3");
  }
  ClassDataset ds;
  ds.image_size = options.image_size;
  ds.channels = options.channels;
  for (Split split : kAllSplits) {
    for (const std::string& name : manifest.of(split)) {
      const fs::path dir = root / name;
      if (!fs::is_directory(dir)) throw DataError("missing class directory " + dir.string());
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      if (files.size() < std::max<std::size_t>(options.min_images, 1)) {
        throw DataError("class '" + name + "' has " + std::to_string(files.size()) + " images, needs at least " +
                        std::to_string(std::max<std::size_t>(options.min_images, 1)));
      }
      DatasetClass cls;
      cls.name = name;
      cls.split = split;
      cls.source = ds.classes.size();
      for (const fs::path& f : files) {
        Image img = resize(convert_channels(read_image(f), options.channels), options.image_size, options.image_size);
        cls.images.push_back(ds.images.size());
        ds.images.push_back(std::move(img));
      }
      ds.classes.push_back(std::move(cls));
    }
  }
  if (ds.classes.empty()) throw DataError("split manifest lists no classes");
  if (!options.mean.empty() || !options.std.empty()) {
    if (options.mean.size() != options.channels || options.std.size() != options.channels) {
      throw ConfigError("normalisation needs one mean and one std per channel");
    }
    for (double s : options.std)
      if (!(s > 0)) throw ConfigError("normalisation std must be positive");
    ds.mean = options.mean;
    ds.std = options.std;
  } else {
    estimate_normalization(ds);
  }
  ds.validate();
  return ds;
}

ClassDataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest_path,
                          const LoadOptions& options) {
  return load_dataset(root, SplitManifest::read(manifest_path), options);
}

void estimate_normalization(ClassDataset& ds) {
  std::vector<double> sum(ds.channels, 0.0), sq(ds.channels, 0.0);
  std::size_t count = 0;
  auto ids = ds.classes_in(Split::kTrain);
  if (ids.empty()) {
    ids.resize(ds.classes.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  }
  for (std::size_t id : ids) {
    for (std::size_t idx : ds.classes[id].images) {
      const Image& img = ds.images[idx];
      const std::size_t plane = img.height * img.width;
      for (std::size_t c = 0; c < ds.channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = img.pixels[c * plane + i];
          sum[c] += v;
          sq[c] += v * v;
        }
      count += plane;
    }
  }
  ds.mean.assign(ds.channels, 0.0);
  ds.std.assign(ds.channels, 1.0);
  if (count == 0) return;
  for (std::size_t c = 0; c < ds.channels; ++c) {
    ds.mean[c] = sum[c] / static_cast<double>(count);
    const double var = sq[c] / static_cast<double>(count) - ds.mean[c] * ds.mean[c];
    ds.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
}

ClassDataset augment_rotations(const ClassDataset& ds) {
  if (!ds.images.empty() && ds.images.front().height != ds.images.front().width) {
    throw DataError("rotation augmentation needs square images");
  }
  ClassDataset out = ds;
  static constexpr const char* kSuffix[] = {"", "/rot090", "/rot180", "/rot270"};
  for (int turn = 1; turn < 4; ++turn) {
    for (std::size_t i = 0; i < ds.classes.size(); ++i) {
      DatasetClass c = ds.classes[i];
      c.name += kSuffix[turn];
      c.quarter_turns = (c.quarter_turns + turn) % 4;
      out.classes.push_back(std::move(c));
    }
  }
  return out;
}

// ---- episodes ------------------------------------------------------------------------------

std::vector<std::size_t> Episode::query_labels() const {
  std::vector<std::size_t> labels;
  labels.reserve(query.size());
  for (const ImageRef& r : query) labels.push_back(r.class_id);
  return labels;
}

Episode sample_episode(const ClassDataset& ds, Split split, const EpisodeSpec& spec, Rng& rng) {
  if (spec.ways == 0 || spec.shots == 0 || spec.queries == 0) {
    throw ContractError("episode needs ways, shots and queries >= 1");
  }
  const std::vector<std::size_t> pool = ds.classes_in(split);
  const std::size_t per_class = spec.shots + spec.queries;
  std::vector<std::size_t> eligible;
  for (std::size_t id : pool)
    if (ds.classes[id].images.size() >= per_class) eligible.push_back(id);
  if (eligible.size() < spec.ways || eligible.size() != pool.size()) {
    throw ContractError(std::to_string(spec.ways) + "-way " + std::to_string(spec.shots) + "-shot episodes with " +
                        std::to_string(spec.queries) + " queries per class are infeasible on the " +
                        std::string(split_name(split)) + " split (" + std::to_string(eligible.size()) + " of " +
                        std::to_string(pool.size()) + " classes hold " + std::to_string(per_class) + " images)");
  }
  Episode ep;
  ep.spec = spec;
  for (std::size_t pick : rng.sample_without_replacement(eligible.size(), spec.ways)) {
    ep.classes.push_back(eligible[pick]);
  }
  for (std::size_t id : ep.classes) {
    const auto picks = rng.sample_without_replacement(ds.classes[id].images.size(), per_class);
    for (std::size_t k = 0; k < spec.shots; ++k) ep.support.push_back({id, picks[k]});
    for (std::size_t k = spec.shots; k < per_class; ++k) ep.query.push_back({id, picks[k]});
  }
  return ep;
}

std::optional<std::string> check_episode(const ClassDataset& ds, const Episode& ep) {
  const auto& s = ep.spec;
  if (ep.classes.size() != s.ways) return "class count differs from ways";
  if (std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size() != s.ways) return "repeated class";
  if (ep.support.size() != s.ways * s.shots) return "support size differs from K*C";
  if (ep.query.size() != s.ways * s.queries) return "query size differs from queries*C";
  for (std::size_t c = 0; c < s.ways; ++c) {
    for (std::size_t k = 0; k < s.shots; ++k)
      if (ep.support[c * s.shots + k].class_id != ep.classes[c]) return "support not class-major";
    for (std::size_t k = 0; k < s.queries; ++k)
      if (ep.query[c * s.queries + k].class_id != ep.classes[c]) return "query not class-major";
  }
  std::set<std::pair<std::size_t, std::size_t>> used;
  for (const auto* part : {&ep.support, &ep.query}) {
    for (const ImageRef& r : *part) {
      if (r.class_id >= ds.classes.size() || r.index >= ds.classes[r.class_id].images.size()) return "dangling image";
      if (!used.emplace(r.class_id, r.index).second) return "image used twice in one episode";
    }
  }
  return std::nullopt;
}

// ---- augmentation and tensors ---------------------------------------------------------------

Image flip_jitter_augment(const Image& image, const JitterOptions& options, Rng& rng) {
  if (!options.enabled) return image;
  Image out = rng.bernoulli(options.flip_probability) ? flip_horizontal(image) : image;
  if (options.max_rotation_degrees > 0) {
    out = rotate_degrees(out, rng.uniform(-options.max_rotation_degrees, options.max_rotation_degrees));
  }
  const double brightness = 1 + rng.uniform(-options.brightness, options.brightness);
  const double contrast = 1 + rng.uniform(-options.contrast, options.contrast);
  const double saturation = 1 + rng.uniform(-options.saturation, options.saturation);
  const std::size_t plane = out.height * out.width;
  for (float& v : out.pixels) v = static_cast<float>(std::clamp(v * brightness, 0.0, 1.0));
  double mean = 0;
  for (float v : out.pixels) mean += v;
  mean /= static_cast<double>(out.pixels.size());
  for (float& v : out.pixels) v = static_cast<float>(std::clamp((v - mean) * contrast + mean, 0.0, 1.0));
  if (out.channels == 3) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double gray = 0.299 * out.pixels[i] + 0.587 * out.pixels[plane + i] + 0.114 * out.pixels[2 * plane + i];
      for (std::size_t c = 0; c < 3; ++c) {
        float& v = out.pixels[c * plane + i];
        v = static_cast<float>(std::clamp((v - gray) * saturation + gray, 0.0, 1.0));
      }
    }
  }
  return out;
}

Tensor images_to_tensor(const ClassDataset& ds, std::span<const Image> images) {
  if (images.empty()) throw ContractError("no images to stack");
  const std::size_t s = ds.image_size;
  const std::size_t plane = s * s;
  std::vector<Real> values(images.size() * ds.channels * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.channels != ds.channels || img.height != s || img.width != s) {
      throw DataError("image does not match the dataset's " + std::to_string(ds.channels) + "x" + std::to_string(s) +
                      "x" + std::to_string(s) + " layout");
    }
    for (std::size_t c = 0; c < ds.channels; ++c) {
      const double m = ds.mean.empty() ? 0.0 : ds.mean[c];
      const double sd = ds.std.empty() ? 1.0 : ds.std[c];
      for (std::size_t i = 0; i < plane; ++i) {
        values[(n * ds.channels + c) * plane + i] = static_cast<Real>((img.pixels[c * plane + i] - m) / sd);
      }
    }
  }
  return Tensor::from({images.size(), ds.channels, s, s}, std::move(values));
}

Tensor images_to_tensor(const ClassDataset& ds, std::span<const ImageRef> refs, const JitterOptions* jitter,
                        Rng* rng) {
  std::vector<Image> images;
  images.reserve(refs.size());
  for (const ImageRef& r : refs) {
    Image img = ds.image(r.class_id, r.index);
    if (jitter != nullptr && jitter->enabled) {
      if (rng == nullptr) throw ContractError("jitter needs a random source");
      img = flip_jitter_augment(img, *jitter, *rng);
    }
    images.push_back(std::move(img));
  }
  return images_to_tensor(ds, images);
}

}  // namespace fewshot
