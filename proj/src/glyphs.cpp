#include "fewshot/glyphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

constexpr std::size_t kSupersample = 4;
constexpr std::size_t kCurveSegments = 20;

struct Point {
  double x = 0;
  double y = 0;
};

using Stroke = std::array<Point, 4>;  // cubic Bezier control points

Point bezier(const Stroke& s, double t) {
  const double u = 1 - t;
  const double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, d = t * t * t;
  return {a * s[0].x + b * s[1].x + c * s[2].x + d * s[3].x, a * s[0].y + b * s[1].y + c * s[2].y + d * s[3].y};
}

Stroke random_stroke(Rng& rng) {
  Stroke s;
  // start and end far enough apart to read as a stroke, not a dot
  do {
    for (Point& p : s) p = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  } while (std::hypot(s[3].x - s[0].x, s[3].y - s[0].y) < 0.35);
  return s;
}

// Places a unit-box stroke at `centre` with scale `scale`.
Stroke place(const Stroke& s, Point centre, double scale) {
  Stroke out;
  for (std::size_t i = 0; i < 4; ++i) out[i] = {centre.x + scale * s[i].x, centre.y + scale * s[i].y};
  return out;
}

using Character = std::vector<Stroke>;  // canvas coordinates in [0,1]

Character make_character(const std::vector<Stroke>& alphabet_primitives, Rng& rng) {
  const std::size_t strokes = 2 + rng.uniform_index(3);
  Character ch;
  for (std::size_t i = 0; i < strokes; ++i) {
    const Stroke& base = rng.bernoulli(0.6) ? alphabet_primitives[rng.uniform_index(alphabet_primitives.size())]
                                            : random_stroke(rng);
    const Point centre{rng.uniform(0.32, 0.68), rng.uniform(0.32, 0.68)};
    ch.push_back(place(base, centre, rng.uniform(0.45, 0.75)));
  }
  return ch;
}

void stamp_segment(std::vector<float>& ink, std::size_t n, Point a, Point b, double radius) {
  const double lo_x = std::min(a.x, b.x) - radius - 1, hi_x = std::max(a.x, b.x) + radius + 1;
  const double lo_y = std::min(a.y, b.y) - radius - 1, hi_y = std::max(a.y, b.y) + radius + 1;
  const long x0 = std::max(0L, static_cast<long>(std::floor(lo_x)));
  const long x1 = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(hi_x)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(lo_y)));
  const long y1 = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(hi_y)));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double d = std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
      if (d <= radius) ink[static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)] = 1.0f;
    }
}

Image draw(const Character& ch, const GlyphOptions& o, Rng& rng) {
  const std::size_t n = o.image_size * kSupersample;
  const double angle = rng.uniform(-o.max_rotation_degrees, o.max_rotation_degrees) * 3.14159265358979323846 / 180;
  const double scale = 1 + rng.uniform(-o.scale_jitter, o.scale_jitter);
  const Point shift{rng.uniform(-o.shift, o.shift), rng.uniform(-o.shift, o.shift)};
  const double width = o.stroke_width * rng.uniform(0.8, 1.2);
  const double cs = std::cos(angle), sn = std::sin(angle);
  auto transform = [&](Point p) {
    const double x = p.x - 0.5, y = p.y - 0.5;
    return Point{(scale * (cs * x - sn * y) + 0.5 + shift.x) * static_cast<double>(n),
                 (scale * (sn * x + cs * y) + 0.5 + shift.y) * static_cast<double>(n)};
  };
  std::vector<float> ink(n * n, 0.0f);
  for (const Stroke& base : ch) {
    Stroke s = base;
    for (Point& p : s) {
      p.x += o.point_jitter * rng.normal();
      p.y += o.point_jitter * rng.normal();
    }
    Point prev = transform(bezier(s, 0));
    for (std::size_t i = 1; i <= kCurveSegments; ++i) {
      const Point next = transform(bezier(s, static_cast<double>(i) / kCurveSegments));
      stamp_segment(ink, n, prev, next, 0.5 * width * static_cast<double>(n));
      prev = next;
    }
  }
  Image out(1, o.image_size, o.image_size, 1.0f);
  const float area = static_cast<float>(kSupersample * kSupersample);
  for (std::size_t y = 0; y < o.image_size; ++y)
    for (std::size_t x = 0; x < o.image_size; ++x) {
      float covered = 0;
      for (std::size_t sy = 0; sy < kSupersample; ++sy)
        for (std::size_t sx = 0; sx < kSupersample; ++sx)
          covered += ink[(y * kSupersample + sy) * n + x * kSupersample + sx];
      out.at(0, y, x) = 1.0f - covered / area;
    }
  return out;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i + 1);
  return buf;
}

}  // namespace

GlyphSet generate_glyphs(const GlyphOptions& o) {
  if (o.alphabets == 0 || o.characters_per_alphabet == 0 || o.drawings == 0 || o.image_size == 0) {
    throw ConfigError("glyph generator needs alphabets, characters, drawings and a size");
  }
  Rng rng(o.seed);
  const std::size_t n_train = static_cast<std::size_t>(std::lround(o.train_fraction * static_cast<double>(o.alphabets)));
  const std::size_t n_val = static_cast<std::size_t>(std::lround(o.val_fraction * static_cast<double>(o.alphabets)));
  GlyphSet set;
  for (std::size_t a = 0; a < o.alphabets; ++a) {
    Rng alphabet_rng = rng.fork(a);
    std::vector<Stroke> primitives;
    for (int i = 0; i < 5; ++i) primitives.push_back(random_stroke(alphabet_rng));
    const Split split = a < n_train ? Split::kTrain : a < n_train + n_val ? Split::kVal : Split::kTest;
    for (std::size_t c = 0; c < o.characters_per_alphabet; ++c) {
      const Character ch = make_character(primitives, alphabet_rng);
      Rng drawer = alphabet_rng.fork(1000 + c);
      std::vector<Image> drawings;
      for (std::size_t k = 0; k < o.drawings; ++k) drawings.push_back(draw(ch, o, drawer));
      const std::string name = numbered("alphabet", a) + "/" + numbered("character", c);
      set.manifest.of(split).push_back(name);
      set.names.push_back(name);
      set.images.push_back(std::move(drawings));
    }
  }
  return set;
}

ClassDataset glyph_dataset(const GlyphOptions& options) {
  GlyphSet set = generate_glyphs(options);
  ClassDataset ds;
  ds.image_size = options.image_size;
  ds.channels = 1;
  std::size_t idx = 0;
  for (Split split : kAllSplits) {
    for (const std::string& name : set.manifest.of(split)) {
      while (set.names[idx] != name) idx = (idx + 1) % set.names.size();
      DatasetClass cls;
      cls.name = name;
      cls.split = split;
      cls.source = ds.classes.size();
      for (Image& img : set.images[idx]) {
        cls.images.push_back(ds.images.size());
        ds.images.push_back(std::move(img));
      }
      ds.classes.push_back(std::move(cls));
    }
  }
  estimate_normalization(ds);
  ds.validate();
  return ds;
}

void write_glyph_tree(const GlyphSet& glyphs, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (std::size_t i = 0; i < glyphs.names.size(); ++i) {
    const fs::path dir = root / glyphs.names[i];
    fs::create_directories(dir);
    for (std::size_t k = 0; k < glyphs.images[i].size(); ++k) {
      write_png(dir / (numbered("", k) + ".png"), glyphs.images[i][k]);
    }
  }
  std::ofstream out(root / "splits.txt");
  if (!out) throw DataError("cannot write " + (root / "splits.txt").string());
  out << glyphs.manifest.str();
}

}  // namespace fewshot
