#pragma once
// Class-per-directory datasets, split manifests, rotation augmentation and
// the C-way K-shot episode sampler.
//
// Split manifest (UTF-8):
//
//   [train]
//   alphabet_a/character01
//   ...
//   [val]
//   ...
//   [test]
//   ...
//
// Blank lines and lines starting with '#' are ignored. Class names are paths
// relative to the dataset root.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/image.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
inline constexpr std::array<Split, 3> kAllSplits = {Split::kTrain, Split::kVal, Split::kTest};
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct SplitManifest {
  std::array<std::vector<std::string>, 3> classes;

  const std::vector<std::string>& of(Split s) const { return classes[static_cast<std::size_t>(s)]; }
  std::vector<std::string>& of(Split s) { return classes[static_cast<std::size_t>(s)]; }
  // Throws DataError on syntax errors or a class listed twice.
  static SplitManifest parse(std::string_view text);
  static SplitManifest read(const std::filesystem::path& path);
  std::string str() const;
};

struct DatasetClass {
  std::string name;
  Split split = Split::kTrain;
  std::vector<std::size_t> images;  // indices into ClassDataset::images
  int quarter_turns = 0;            // applied when the image is materialised
  std::size_t source = 0;           // class this one was derived from (itself if original)
};

struct ClassDataset {
  std::size_t image_size = 0;
  std::size_t channels = 0;
  std::vector<Image> images;  // decoded, resized, [0,1]
  std::vector<DatasetClass> classes;
  // Per-channel normalisation applied when images become tensors.
  std::vector<double> mean;
  std::vector<double> std;

  std::vector<std::size_t> classes_in(Split split) const;
  std::size_t class_count(Split split) const { return classes_in(split).size(); }
  // The class's image `k` with its rotation applied, still in [0,1].
  Image image(std::size_t class_id, std::size_t k) const;
  // Throws DataError when splits overlap or a class is empty.
  void validate() const;
};

struct LoadOptions {
  std::size_t image_size = 24;
  std::size_t channels = 1;
  std::size_t min_images = 1;
  // Empty: estimated from the training split after loading.
  std::vector<double> mean;
  std::vector<double> std;
};

// Classes are the manifest entries; each must name a directory under `root`
// holding PNG/JPEG files (sorted by file name).
ClassDataset load_dataset(const std::filesystem::path& root, const SplitManifest& manifest,
                          const LoadOptions& options);
ClassDataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest_path,
                          const LoadOptions& options);

// Per-channel mean/std over every image of the training split.
void estimate_normalization(ClassDataset& ds);

// Adds the 90, 180 and 270 degree rotations of every class as new classes of
// the same split. Needs square images.
ClassDataset augment_rotations(const ClassDataset& ds);

struct EpisodeSpec {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;  // per class
  bool operator==(const EpisodeSpec&) const = default;
};

struct ImageRef {
  std::size_t class_id = 0;
  std::size_t index = 0;  // position within the class's image list
  bool operator==(const ImageRef&) const = default;
};

// Support and query are class-major: entries [c*K, (c+1)*K) of the support
// belong to classes[c], likewise for the queries.
struct Episode {
  EpisodeSpec spec;
  std::vector<std::size_t> classes;  // dataset class ids, column order
  std::vector<ImageRef> support;
  std::vector<ImageRef> query;

  std::size_t support_size() const { return support.size(); }  // m = K * C
  std::size_t query_size() const { return query.size(); }      // n
  std::vector<std::size_t> query_labels() const;
  bool operator==(const Episode&) const = default;
};

// Throws ContractError when the split cannot supply the spec.
Episode sample_episode(const ClassDataset& ds, Split split, const EpisodeSpec& spec, Rng& rng);
// Checks exact per-class counts, class membership and support/query
// disjointness; returns a description of the first violation.
std::optional<std::string> check_episode(const ClassDataset& ds, const Episode& episode);

struct JitterOptions {
  bool enabled = false;
  double flip_probability = 0.5;
  double max_rotation_degrees = 15;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
};

// Random horizontal flip, small rotation and colour jitter, clamped to [0,1].
// Identity when disabled.
Image flip_jitter_augment(const Image& image, const JitterOptions& options, Rng& rng);

// Stacks the referenced images into [N, channels, S, S], normalised with the
// dataset statistics. With `jitter` set, every image is augmented first.
Tensor images_to_tensor(const ClassDataset& ds, std::span<const ImageRef> refs,
                        const JitterOptions* jitter = nullptr, Rng* rng = nullptr);
Tensor images_to_tensor(const ClassDataset& ds, std::span<const Image> images);

}  // namespace fewshot
