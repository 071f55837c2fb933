#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "fewshot/episodes.hpp"
#include "fewshot/error.hpp"
#include "fewshot/glyphs.hpp"
#include "fewshot/image.hpp"
#include "support/fixtures.hpp"

using namespace fewshot;
using fewshot::testing::TempDir;
using fewshot::testing::write_toy_tree;

namespace {

Image asymmetric_2x2() {
  Image img(1, 2, 2);
  img.at(0, 0, 0) = 0.1f, img.at(0, 0, 1) = 0.2f;
  img.at(0, 1, 0) = 0.3f, img.at(0, 1, 1) = 0.4f;
  return img;
}

Image random_image(std::size_t c, std::size_t s, Rng& rng) {
  Image img(c, s, s);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform01());
  return img;
}

}  // namespace

TEST_CASE("quarter turn of an asymmetric 2x2 image") {
  // [[a b] [c d]] turned counter-clockwise is [[b d] [a c]]
  const Image r = rotate90(asymmetric_2x2(), 1);
  CHECK(r.at(0, 0, 0) == 0.2f);
  CHECK(r.at(0, 0, 1) == 0.4f);
  CHECK(r.at(0, 1, 0) == 0.1f);
  CHECK(r.at(0, 1, 1) == 0.3f);
  const Image h = rotate90(asymmetric_2x2(), 2);
  CHECK(h.at(0, 0, 0) == 0.4f);
  CHECK(h.at(0, 1, 1) == 0.1f);
}

TEST_CASE("four quarter turns and two flips are the identity") {
  Rng rng(4);
  for (std::size_t c : {1u, 3u}) {
    const Image img = random_image(c, 7, rng);
    Image r = img;
    for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
    CHECK(r == img);
    CHECK(rotate90(img, -1) == rotate90(img, 3));
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
  }
}

TEST_CASE("png round trip and channel conversion") {
  TempDir dir("png");
  Rng rng(5);
  Image img = random_image(3, 5, rng);
  for (float& p : img.pixels) p = std::round(p * 255.0f) / 255.0f;
  write_png(dir.path() / "a.png", img);
  const Image back = read_image(dir.path() / "a.png");
  REQUIRE(back.channels == 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) < 1e-6);
  const Image gray = convert_channels(img, 1);
  CHECK(gray.channels == 1);
  CHECK(gray.at(0, 2, 3) == doctest::Approx(0.299 * img.at(0, 2, 3) + 0.587 * img.at(1, 2, 3) + 0.114 * img.at(2, 2, 3)));
  std::ofstream(dir.path() / "junk.png") << "not an image";
  CHECK_THROWS_AS(read_image(dir.path() / "junk.png"), DataError);
}

TEST_CASE("resize by area averaging") {
  Image img(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<float>(i);
  const Image small = resize(img, 2, 2);
  CHECK(small.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(small.at(0, 1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  CHECK(resize(img, 4, 4) == img);
}

TEST_CASE("split manifest parsing") {
  const auto m = SplitManifest::parse("# comment\n[train]\na/1\na/2\n\n[val]\nb/1\n[test]\nc/1\n");
  CHECK(m.of(Split::kTrain) == std::vector<std::string>{"a/1", "a/2"});
  CHECK(m.of(Split::kVal) == std::vector<std::string>{"b/1"});
  CHECK(m.of(Split::kTest) == std::vector<std::string>{"c/1"});
  CHECK(SplitManifest::parse(m.str()).classes == m.classes);
  CHECK_THROWS_AS(SplitManifest::parse("a/1\n[train]\n"), DataError);
  CHECK_THROWS_AS(SplitManifest::parse("[training]\na\n"), DataError);
  CHECK_THROWS_AS(SplitManifest::parse("[train]\na\n[test]\na\n"), DataError);
}

TEST_CASE("load a 3-class toy tree") {
  TempDir dir("toy");
  const auto manifest = write_toy_tree(dir.path(), 3, 25, 1, 1);
  LoadOptions opts;
  opts.image_size = 8;
  const ClassDataset ds = load_dataset(dir.path(), dir.path() / "splits.txt", opts);
  REQUIRE(ds.classes.size() == 3);
  for (const auto& c : ds.classes) CHECK(c.images.size() == 25);
  CHECK(ds.class_count(Split::kTrain) == 1);
  CHECK(ds.images.size() == 75);
  for (const Image& img : ds.images) {
    CHECK(img.height == 8);
    for (float p : img.pixels) CHECK((p >= 0.0f && p <= 1.0f));
  }
  REQUIRE(ds.mean.size() == 1);
  CHECK(ds.std[0] > 0);

  opts.min_images = 26;
  CHECK_THROWS_AS(load_dataset(dir.path(), manifest, opts), DataError);
  SplitManifest missing = manifest;
  missing.of(Split::kTest).push_back("no_such_class");
  opts.min_images = 1;
  CHECK_THROWS_AS(load_dataset(dir.path(), missing, opts), DataError);
}

TEST_CASE("empty root is an error") {
  TempDir dir("empty");
  CHECK_THROWS_AS(load_dataset(dir.path(), SplitManifest::parse("[train]\na\n"), LoadOptions{}), DataError);
  CHECK_THROWS_AS(load_dataset(dir.path() / "absent", SplitManifest::parse("[train]\na\n"), LoadOptions{}), DataError);
}

TEST_CASE("1623-class tree keeps every class") {
  TempDir dir("big");
  write_toy_tree(dir.path(), 1623, 1, 964, 0, 4);
  LoadOptions opts;
  opts.image_size = 4;
  const ClassDataset ds = load_dataset(dir.path(), dir.path() / "splits.txt", opts);
  CHECK(ds.classes.size() == 1623);
  const ClassDataset rot = augment_rotations(ds);
  CHECK(rot.classes.size() == 4 * 1623);
  CHECK(rot.class_count(Split::kTrain) == 4 * 964);
}

TEST_CASE("rotation augmentation makes new classes in the source split") {
  TempDir dir("rot");
  write_toy_tree(dir.path(), 6, 4, 3, 1);
  LoadOptions opts;
  opts.image_size = 8;
  const ClassDataset ds = load_dataset(dir.path(), dir.path() / "splits.txt", opts);
  const ClassDataset rot = augment_rotations(ds);
  REQUIRE(rot.classes.size() == 24);
  rot.validate();
  for (const auto& c : rot.classes) {
    CHECK(c.split == rot.classes[c.source].split);
    CHECK(c.images == rot.classes[c.source].images);
    for (std::size_t k = 0; k < c.images.size(); ++k) {
      CHECK(rot.image(&c - rot.classes.data(), k) == rotate90(ds.images[c.images[k]], c.quarter_turns));
    }
  }
  std::set<std::string> names;
  for (const auto& c : rot.classes) names.insert(c.name);
  CHECK(names.size() == 24);
}

TEST_CASE("episodes: shapes, invariants, determinism") {
  GlyphOptions go;
  go.alphabets = 10;
  go.characters_per_alphabet = 12;
  go.drawings = 20;
  go.train_fraction = 0.5;
  const ClassDataset ds = augment_rotations(glyph_dataset(go));

  Rng rng(11);
  const Episode a = sample_episode(ds, Split::kTrain, {5, 1, 15}, rng);
  CHECK(a.support_size() == 5);
  CHECK(a.query_size() == 75);
  const Episode b = sample_episode(ds, Split::kTrain, {20, 5, 5}, rng);
  CHECK(b.support_size() == 100);
  CHECK(b.query_size() == 100);

  Rng r1(3), r2(3);
  CHECK(sample_episode(ds, Split::kTest, {5, 1, 15}, r1) == sample_episode(ds, Split::kTest, {5, 1, 15}, r2));

  Rng rng2(12);
  for (int i = 0; i < 300; ++i) {
    const Episode ep = sample_episode(ds, Split::kTrain, {5, 2, 7}, rng2);
    const auto problem = check_episode(ds, ep);
    CHECK_MESSAGE(!problem, *problem);
    for (std::size_t c : ep.classes) CHECK(ds.classes[c].split == Split::kTrain);
    const auto labels = ep.query_labels();
    CHECK(labels.size() == 35);
    CHECK(labels[0] == ep.classes[0]);
    CHECK(labels[34] == ep.classes[4]);
  }
  CHECK_THROWS_AS(sample_episode(ds, Split::kTrain, {5, 10, 11}, rng), ContractError);
  CHECK_THROWS_AS(sample_episode(ds, Split::kVal, {1000, 1, 1}, rng), ContractError);
}

TEST_CASE("check_episode catches broken episodes") {
  GlyphOptions go;
  go.alphabets = 4;
  go.characters_per_alphabet = 6;
  const ClassDataset ds = glyph_dataset(go);
  Rng rng(2);
  Episode ep = sample_episode(ds, Split::kTrain, {3, 1, 2}, rng);
  CHECK_FALSE(check_episode(ds, ep));
  Episode dup = ep;
  dup.query[0] = dup.support[0];
  CHECK(check_episode(ds, dup));
  Episode short_support = ep;
  short_support.support.pop_back();
  CHECK(check_episode(ds, short_support));
}

TEST_CASE("class histogram of sampled episodes is uniform") {
  GlyphOptions go;
  go.alphabets = 5;
  go.characters_per_alphabet = 4;
  go.train_fraction = 1.0;
  go.val_fraction = 0.0;
  const ClassDataset ds = glyph_dataset(go);
  const std::size_t classes = ds.class_count(Split::kTrain);
  REQUIRE(classes == 20);
  std::map<std::size_t, int> hits;
  Rng rng(9);
  const int episodes = 4000;
  for (int i = 0; i < episodes; ++i)
    for (std::size_t c : sample_episode(ds, Split::kTrain, {5, 1, 1}, rng).classes) ++hits[c];
  const double p = 5.0 / classes, mean = episodes * p, sd = std::sqrt(episodes * p * (1 - p));
  for (const auto& [c, n] : hits) CHECK(std::abs(n - mean) <= 3.5 * sd);
  CHECK(hits.size() == classes);
}

TEST_CASE("flip/jitter augmentation") {
  Rng rng(6);
  JitterOptions off;
  const Image img = random_image(3, 9, rng);
  CHECK(flip_jitter_augment(img, off, rng) == img);
  JitterOptions on;
  on.enabled = true;
  on.brightness = on.contrast = on.saturation = 0.9;
  for (int i = 0; i < 200; ++i) {
    const Image out = flip_jitter_augment(random_image(i % 2 ? 3 : 1, 9, rng), on, rng);
    for (float p : out.pixels) CHECK((p >= 0.0f && p <= 1.0f));
  }
  JitterOptions flip_only;
  flip_only.enabled = true;
  flip_only.flip_probability = 1.0;
  flip_only.max_rotation_degrees = 0;
  flip_only.brightness = flip_only.contrast = flip_only.saturation = 0;
  CHECK(flip_jitter_augment(flip_jitter_augment(img, flip_only, rng), flip_only, rng) == img);
}

TEST_CASE("images become normalised tensors") {
  TempDir dir("tensor");
  write_toy_tree(dir.path(), 3, 5, 2, 0);
  LoadOptions opts;
  opts.image_size = 8;
  opts.mean = {0.25};
  opts.std = {0.5};
  const ClassDataset ds = load_dataset(dir.path(), dir.path() / "splits.txt", opts);
  const std::vector<ImageRef> refs{{0, 1}, {2, 4}};
  const Tensor t = images_to_tensor(ds, refs);
  CHECK(t.shape() == Shape{2, 1, 8, 8});
  const Image& src = ds.images[ds.classes[2].images[4]];
  CHECK(t.at({1, 0, 3, 5}) == doctest::Approx((src.at(0, 3, 5) - 0.25) / 0.5).epsilon(1e-12));
}

TEST_CASE("glyph generator layout") {
  GlyphOptions go;
  go.alphabets = 5;
  go.characters_per_alphabet = 3;
  go.drawings = 4;
  const GlyphSet set = generate_glyphs(go);
  CHECK(set.names.size() == 15);
  CHECK(set.manifest.of(Split::kTrain).size() == 9);
  const GlyphSet again = generate_glyphs(go);
  CHECK(again.images == set.images);
  for (const auto& drawings : set.images) {
    CHECK(drawings.size() == 4);
    CHECK(drawings[0].height == 24);
    CHECK(drawings[0] != drawings[1]);  // each drawing differs
  }
  TempDir dir("glyphs");
  write_glyph_tree(set, dir.path());
  LoadOptions opts;
  const ClassDataset ds = load_dataset(dir.path(), dir.path() / "splits.txt", opts);
  CHECK(ds.classes.size() == 15);
}
