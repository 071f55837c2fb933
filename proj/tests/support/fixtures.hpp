#pragma once
// On-disk dataset fixtures written under a fresh temporary directory.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "fewshot/episodes.hpp"
#include "fewshot/image.hpp"

namespace fewshot::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fewshot_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// `classes` class directories named c000, c001, ... with `per_class` small
// grayscale PNGs each, listed round-robin-free as: first `train` classes in
// [train], the next `val` in [val], the rest in [test].
inline SplitManifest write_toy_tree(const std::filesystem::path& root, std::size_t classes, std::size_t per_class,
                                    std::size_t train, std::size_t val, std::size_t side = 8) {
  SplitManifest m;
  for (std::size_t c = 0; c < classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "c%03zu", c);
    std::filesystem::create_directories(root / name);
    for (std::size_t k = 0; k < per_class; ++k) {
      Image img(1, side, side);
      for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = static_cast<float>(((c * 7 + k * 3 + i * 5) % 17) / 16.0);
      char file[32];
      std::snprintf(file, sizeof file, "%03zu.png", k);
      write_png(root / name / file, img);
    }
    m.of(c < train ? Split::kTrain : c < train + val ? Split::kVal : Split::kTest).push_back(name);
  }
  std::ofstream(root / "splits.txt") << m.str();
  return m;
}

}  // namespace fewshot::testing
