#pragma once
// Procedural handwritten-character dataset in the layout of Omniglot: a set
// of alphabets, each with characters built from a few pen strokes, every
// character "drawn" several times with per-drawing stroke noise and a small
// random affine transform. Splits are made by alphabet. Used where the real
// Omniglot images are not available.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"

namespace fewshot {

struct GlyphOptions {
  std::size_t alphabets = 30;
  std::size_t characters_per_alphabet = 16;
  std::size_t drawings = 20;
  std::size_t image_size = 24;
  std::uint64_t seed = 1;
  // drawing noise, as fractions of the canvas
  double point_jitter = 0.035;
  double max_rotation_degrees = 10;
  double scale_jitter = 0.08;
  double shift = 0.05;
  double stroke_width = 0.07;
  // alphabets per split, in that order; the remainder goes to test
  double train_fraction = 0.6;
  double val_fraction = 0.1;
};

struct GlyphSet {
  SplitManifest manifest;
  std::vector<std::string> names;          // alphabet/character, manifest order
  std::vector<std::vector<Image>> images;  // per class, 1 channel, ink 0 on paper 1
};

GlyphSet generate_glyphs(const GlyphOptions& options);
// In-memory dataset (normalisation estimated from the training split).
ClassDataset glyph_dataset(const GlyphOptions& options);
// root/<alphabet>/<character>/<k>.png plus root/splits.txt.
void write_glyph_tree(const GlyphSet& glyphs, const std::filesystem::path& root);

}  // namespace fewshot
