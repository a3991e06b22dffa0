#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "advtag/dataset.hpp"
#include "advtag/errors.hpp"
#include "test_util.hpp"

using namespace advtag;
using advtag::testing::slurp;
using advtag::testing::spit;
using advtag::testing::TempDir;

namespace {

bool same_pixels(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.items[i].label != b.items[i].label || a.items[i].pixels.values() != b.items[i].pixels.values()) return false;
  return true;
}

std::vector<int> histogram(const Dataset& d) {
  std::vector<int> h(d.num_classes);
  for (const LabeledImage& it : d.items) ++h[static_cast<std::size_t>(it.label)];
  return h;
}

double mean_intensity(const Tensor& t) {
  return std::accumulate(t.values().begin(), t.values().end(), 0.0) / static_cast<double>(t.size());
}

}  // namespace

TEST(Synthetic, TexturesAreSeededAndCoverAllClasses) {
  const Dataset a = make_textures_dataset(400, 5);
  const Dataset b = make_textures_dataset(400, 5);
  const Dataset c = make_textures_dataset(400, 6);
  EXPECT_NO_THROW(a.validate());
  EXPECT_TRUE(same_pixels(a, b));
  EXPECT_FALSE(same_pixels(a, c));
  EXPECT_EQ(a.image_size, 32u);
  EXPECT_EQ(a.num_classes, 10u);
  EXPECT_EQ(a.class_names.size(), 10u);
  for (int n : histogram(a)) EXPECT_GT(n, 20);
}

TEST(Synthetic, TexturesResizeFromBaseResolution) {
  const Dataset small = make_textures_dataset(10, 2);
  const Dataset big = make_textures_dataset(10, 2, 64);
  EXPECT_EQ(big.image_size, 64u);
  EXPECT_NO_THROW(big.validate());
  EXPECT_TRUE(same_pixels(big, resize_dataset(small, 64)));
  EXPECT_THROW(make_textures_dataset(1, 1, 8), ContractViolation);
}

TEST(Synthetic, ShapesAreSeededAndBalancedEnough) {
  const Dataset a = make_shapes_dataset(300, 1);
  EXPECT_TRUE(same_pixels(a, make_shapes_dataset(300, 1)));
  EXPECT_NO_THROW(a.validate());
  for (int n : histogram(a)) EXPECT_GT(n, 10);
  EXPECT_THROW(make_shapes_dataset(1, 1, 8), ContractViolation);
}

TEST(Synthetic, ToyClassesSeparateByMeanIntensity) {
  const Dataset d = make_toy_dataset(200, 3);
  EXPECT_EQ(histogram(d), (std::vector<int>{100, 100}));
  for (const LabeledImage& it : d.items) {
    const double m = mean_intensity(it.pixels);
    if (it.label == 0)
      EXPECT_LT(m, 0.4);
    else
      EXPECT_GT(m, 0.6);
  }
}

TEST(Synthetic, PixelsAreEightBitLevels) {
  for (const Dataset& d : {make_textures_dataset(5, 1, 48), make_shapes_dataset(5, 1), make_toy_dataset(5, 1)})
    for (const LabeledImage& it : d.items)
      for (float v : it.pixels.values()) ASSERT_EQ(std::round(v * 255.0f) / 255.0f, v);
}

TEST(Holdout, SplitsTrailingFraction) {
  const Dataset d = make_toy_dataset(20, 1);
  const auto [train, held] = split_holdout(d, 0.25);
  EXPECT_EQ(train.size(), 15u);
  EXPECT_EQ(held.size(), 5u);
  EXPECT_EQ(held.items[0].pixels.values(), d.items[15].pixels.values());
  EXPECT_EQ(split_holdout(d, 0.0).second.size(), 0u);
  EXPECT_THROW(split_holdout(d, 1.0), ConfigError);
  EXPECT_THROW(split_holdout(d, -0.1), ConfigError);
}

TEST(PackedFormat, RoundTripWithLabels) {
  TempDir tmp;
  const Dataset d = make_textures_dataset(12, 4);
  save_packed(d, tmp / "d.atds");
  const Dataset back = load_dataset(tmp / "d.atds");
  EXPECT_TRUE(same_pixels(d, back));
  EXPECT_EQ(back.class_names, d.class_names);
  EXPECT_EQ(back.image_size, 32u);

  // Layout: 20-byte header, then (label, s*s*3 bytes) per record.
  EXPECT_EQ(slurp(tmp / "d.atds").size(), 20u + 12u * (4u + 32u * 32u * 3u));
}

TEST(PackedFormat, CorruptFilesRejected) {
  TempDir tmp;
  save_packed(make_toy_dataset(3, 1, 16), tmp / "d.atds");
  const std::string good = slurp(tmp / "d.atds");

  spit(tmp / "bad.atds", "XTDS" + good.substr(4));
  EXPECT_THROW(load_packed(tmp / "bad.atds"), VersionError);
  std::string v2 = good;
  v2[4] = 2;
  spit(tmp / "bad.atds", v2);
  EXPECT_THROW(load_packed(tmp / "bad.atds"), VersionError);
  spit(tmp / "bad.atds", good.substr(0, good.size() - 1));
  EXPECT_THROW(load_packed(tmp / "bad.atds"), FormatError);
  std::string label = good;
  label[20] = 9;
  spit(tmp / "bad.atds", label);
  EXPECT_THROW(load_packed(tmp / "bad.atds"), FormatError);
  EXPECT_THROW(load_dataset(tmp / "missing.atds"), IoError);
}

TEST(PngDirectory, RoundTrip) {
  TempDir tmp;
  const Dataset d = make_shapes_dataset(6, 2);
  save_png_dir(d, tmp / "pngs");
  const Dataset back = load_dataset(tmp / "pngs");
  EXPECT_TRUE(same_pixels(d, back));
  EXPECT_EQ(back.class_names, d.class_names);
  EXPECT_EQ(back.num_classes, 10u);
}

TEST(PngDirectory, ManifestErrors) {
  TempDir tmp;
  save_png_dir(make_toy_dataset(2, 1, 16), tmp / "p");
  spit(tmp / "p" / "manifest.csv", "file,class\n");
  EXPECT_THROW(load_png_dir(tmp / "p"), FormatError);
  spit(tmp / "p" / "manifest.csv", "path,label\nimg_00000.png,x\n");
  EXPECT_THROW(load_png_dir(tmp / "p"), FormatError);
  spit(tmp / "p" / "manifest.csv", "path,label\nimg_00000.png,5\n");
  EXPECT_THROW(load_png_dir(tmp / "p"), FormatError);  // labels.txt has 2 names
  spit(tmp / "p" / "manifest.csv", "path,label\nmissing.png,0\n");
  EXPECT_THROW(load_png_dir(tmp / "p"), IoError);
}

TEST(Labels, RoundTripIgnoresBlankLinesAndCarriageReturns) {
  TempDir tmp;
  spit(tmp / "l.txt", "sky\r\n\ngrass\nwater");
  EXPECT_EQ(read_labels(tmp / "l.txt"), (std::vector<std::string>{"sky", "grass", "water"}));
  write_labels({"a", "b"}, tmp / "m.txt");
  EXPECT_EQ(read_labels(tmp / "m.txt"), (std::vector<std::string>{"a", "b"}));
  Dataset d = make_toy_dataset(2, 1);
  EXPECT_EQ(d.class_name(1), "bright");
  d.class_names.clear();
  EXPECT_EQ(d.class_name(1), "class1");
}
