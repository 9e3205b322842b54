#include "fixmatch/transforms.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "fixmatch/image.hpp"
#include "fixmatch/rng.hpp"
#include "test_util.hpp"

using namespace fixmatch;
using testutil::random_image;

namespace {

RngStream test_stream(std::uint64_t idx) {
  return RngStream(99, {StreamPurpose::kScratch, 0, idx});
}

}  // namespace

// Each transform at its identity parameter must return the input bit-exactly.
TEST(Transforms, IdentityParameterSuite) {
  RngStream rng = test_stream(1);
  const struct {
    TransformKind kind;
    double magnitude;
  } cases[] = {
      {TransformKind::kIdentity, 0.0},
      {TransformKind::kRotate, 0.0},
      {TransformKind::kTranslateX, 0.0},
      {TransformKind::kTranslateY, 0.0},
      {TransformKind::kShearX, 0.0},
      {TransformKind::kShearY, 0.0},
      {TransformKind::kPosterize, 8.0},
      {TransformKind::kSharpness, 1.0},
      {TransformKind::kBrightness, 1.0},
      {TransformKind::kColor, 1.0},
      {TransformKind::kContrast, 1.0},
      {TransformKind::kSmooth, 1.0},
      {TransformKind::kAutocontrast, 0.0},  // blend ratio 0
      {TransformKind::kEqualize, 0.0},
      {TransformKind::kInvert, 0.0},
      {TransformKind::kSolarize, 1.0},
  };
  for (int trial = 0; trial < 20; ++trial) {
    const int ch = (trial % 2 == 0) ? 1 : 3;
    ImageU8 img = random_image(rng, 17, 23, ch);
    for (const auto& c : cases) {
      ImageU8 out = apply_transform(img, {c.kind, c.magnitude});
      EXPECT_EQ(out, img) << transform_kind_name(c.kind) << " at magnitude "
                          << c.magnitude;
    }
  }
}

TEST(Transforms, RescaleFullCropIsIdentityForAllMethods) {
  RngStream rng = test_stream(2);
  ImageU8 img = random_image(rng, 24, 24, 1);
  for (int m = 0; m < kRescaleMethodCount; ++m) {
    TransformSpec spec{TransformKind::kRescale, 1.0,
                       static_cast<RescaleMethod>(m)};
    EXPECT_EQ(apply_transform(img, spec), img)
        << rescale_method_name(static_cast<RescaleMethod>(m));
  }
}

TEST(Transforms, FlipIsInvolution) {
  RngStream rng = test_stream(3);
  for (int trial = 0; trial < 10; ++trial) {
    ImageU8 img = random_image(rng, 11, 16, 3);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  }
}

TEST(Transforms, FullInvertIsInvolution) {
  RngStream rng = test_stream(4);
  ImageU8 img = random_image(rng, 9, 9, 1);
  ImageU8 once = apply_transform(img, {TransformKind::kInvert, 1.0});
  ImageU8 twice = apply_transform(once, {TransformKind::kInvert, 1.0});
  EXPECT_EQ(twice, img);
  EXPECT_NE(once, img);  // random image will not be its own inverse
}

TEST(Transforms, SolarizeStrictThreshold) {
  ImageU8 img(1, 4, 1);
  img.pixels = {0, 100, 200, 255};
  // T = 200/255: pixels strictly above 200 invert
  ImageU8 out = apply_transform(img, {TransformKind::kSolarize, 200.0 / 255.0});
  EXPECT_EQ(out.pixels[0], 0);
  EXPECT_EQ(out.pixels[1], 100);
  EXPECT_EQ(out.pixels[2], 200);   // equal to threshold: untouched
  EXPECT_EQ(out.pixels[3], 0);     // 255 inverts
  // T = 0: every nonzero pixel inverts
  ImageU8 zero = apply_transform(img, {TransformKind::kSolarize, 0.0});
  EXPECT_EQ(zero.pixels[0], 0);
  EXPECT_EQ(zero.pixels[1], 155);
}

TEST(Transforms, PosterizeKeepsHighBits) {
  ImageU8 img(1, 2, 1);
  img.pixels = {0b10110111, 0b01001111};
  ImageU8 out = apply_transform(img, {TransformKind::kPosterize, 4.0});
  EXPECT_EQ(out.pixels[0], 0b10110000);
  EXPECT_EQ(out.pixels[1], 0b01000000);
}

TEST(Transforms, BrightnessScales) {
  ImageU8 img(1, 2, 1);
  img.pixels = {100, 200};
  ImageU8 out = apply_transform(img, {TransformKind::kBrightness, 0.5});
  EXPECT_EQ(out.pixels[0], 50);
  EXPECT_EQ(out.pixels[1], 100);
  ImageU8 black = apply_transform(img, {TransformKind::kBrightness, 0.0});
  EXPECT_EQ(black.pixels[0], 0);
  EXPECT_EQ(black.pixels[1], 0);
}

TEST(Transforms, ContrastZeroIsFlatGray) {
  RngStream rng = test_stream(5);
  ImageU8 img = random_image(rng, 8, 8, 1);
  ImageU8 out = apply_transform(img, {TransformKind::kContrast, 0.0});
  for (std::size_t i = 1; i < out.size(); ++i)
    EXPECT_EQ(out.pixels[i], out.pixels[0]);
}

TEST(Transforms, ColorZeroIsGrayscale) {
  ImageU8 img(1, 1, 3);
  img.pixels = {250, 10, 30};
  ImageU8 out = apply_transform(img, {TransformKind::kColor, 0.0});
  EXPECT_EQ(out.pixels[0], out.pixels[1]);
  EXPECT_EQ(out.pixels[1], out.pixels[2]);
}

TEST(Transforms, ColorIsNoOpOnGrayscaleImages) {
  RngStream rng = test_stream(6);
  ImageU8 img = random_image(rng, 6, 6, 1);
  EXPECT_EQ(apply_transform(img, {TransformKind::kColor, 0.37}), img);
}

TEST(Transforms, AutocontrastStretchesToFullRange) {
  ImageU8 img(1, 3, 1);
  img.pixels = {50, 125, 150};
  ImageU8 out = apply_transform(img, {TransformKind::kAutocontrast, 1.0});
  EXPECT_EQ(out.pixels[0], 0);
  EXPECT_EQ(out.pixels[1], 191);  // (125-50)*255/100 = 191.25
  EXPECT_EQ(out.pixels[2], 255);
}

TEST(Transforms, AutocontrastConstantImageIsIdentity) {
  ImageU8 img(5, 5, 1, 77);
  EXPECT_EQ(apply_transform(img, {TransformKind::kAutocontrast, 1.0}), img);
}

TEST(Transforms, EqualizeConstantImageIsIdentity) {
  ImageU8 img(5, 5, 3, 13);
  EXPECT_EQ(apply_transform(img, {TransformKind::kEqualize, 1.0}), img);
}

TEST(Transforms, TranslateMovesContent) {
  ImageU8 img(5, 5, 1, 0);
  img.at(2, 2, 0) = 255;
  // lambda * width = 0.2 * 5 = 1 pixel right
  ImageU8 out = apply_transform(img, {TransformKind::kTranslateX, 0.2});
  EXPECT_EQ(out.at(2, 3, 0), 255);
  EXPECT_EQ(out.at(2, 2, 0), 0);
  // exposed column filled with gray
  EXPECT_EQ(out.at(0, 0, 0), kGrayFill);
}

TEST(Transforms, RotateQuarterRangeMovesCorners) {
  ImageU8 img(9, 9, 1, 0);
  img.at(0, 4, 0) = 255;  // top center
  ImageU8 out = apply_transform(img, {TransformKind::kRotate, 45.0});
  EXPECT_NE(out, img);
  // original bright pixel position now sampled from elsewhere
  EXPECT_EQ(out.at(4, 4, 0), 0);  // center fixed point keeps its value
}

TEST(Transforms, CutoutZeroIsIdentity) {
  RngStream rng = test_stream(7);
  ImageU8 img = random_image(rng, 12, 12, 1);
  RngStream draw = test_stream(8);
  EXPECT_EQ(cutout(img, 0.0, draw), img);
}

TEST(Transforms, CutoutHalfMakesExpectedPatch) {
  ImageU8 img(32, 32, 1, 0);
  // find a key whose patch lands fully interior, then check its size
  for (std::uint64_t k = 0; k < 64; ++k) {
    RngStream rng = test_stream(100 + k);
    ImageU8 out = cutout(img, 0.5, rng);
    long gray = 0;
    for (auto p : out.pixels) gray += (p == kGrayFill);
    EXPECT_LE(gray, 16L * 16L);
    if (gray == 16L * 16L) return;  // unclipped patch observed
  }
  FAIL() << "no interior 16x16 patch over 64 keys";
}

TEST(Transforms, CutoutPatchPixelsAreGray) {
  RngStream rng = test_stream(9);
  ImageU8 img(16, 16, 1, 255);
  RngStream draw = test_stream(10);
  ImageU8 out = cutout(img, 0.4, draw);
  for (auto p : out.pixels) EXPECT_TRUE(p == 255 || p == kGrayFill);
  EXPECT_NE(out, img);
}

TEST(Transforms, OutOfRangeMagnitudeThrows) {
  ImageU8 img(4, 4, 1, 0);
  EXPECT_THROW(apply_transform(img, {TransformKind::kBrightness, 1.5}),
               std::invalid_argument);
  EXPECT_THROW(apply_transform(img, {TransformKind::kRotate, 90.0}),
               std::invalid_argument);
  EXPECT_THROW(apply_transform(img, {TransformKind::kPosterize, 0.5}),
               std::invalid_argument);
}

TEST(Transforms, CutoutViaApplyTransformNeedsRng) {
  ImageU8 img(4, 4, 1, 0);
  EXPECT_THROW(apply_transform(img, {TransformKind::kCutout, 0.3}),
               std::invalid_argument);
}

// 10^4 randomized applications: outputs keep dimensions and never throw.
TEST(Transforms, RandomizedApplicationsStayValid) {
  RngStream rng = test_stream(11);
  const auto& catalog = cta_catalog();
  ImageU8 img = random_image(rng, 24, 24, 1);
  for (int i = 0; i < 10000; ++i) {
    const auto& entry = catalog[rng.next_below(catalog.size())];
    TransformSpec spec;
    spec.kind = entry.kind;
    spec.magnitude =
        entry.has_magnitude ? rng.next_range(entry.lo, entry.hi) : entry.lo;
    spec.method = static_cast<RescaleMethod>(rng.next_below(kRescaleMethodCount));
    ImageU8 out = apply_transform(img, spec, &rng);
    ASSERT_EQ(out.height, img.height);
    ASSERT_EQ(out.width, img.width);
    ASSERT_EQ(out.channels, img.channels);
    ASSERT_EQ(out.size(), img.size());
  }
}

TEST(Transforms, RescaleZoomsCenter) {
  ImageU8 img(16, 16, 1, 0);
  for (int y = 6; y < 10; ++y)
    for (int x = 6; x < 10; ++x) img.at(y, x, 0) = 200;
  TransformSpec spec{TransformKind::kRescale, 0.5, RescaleMethod::kNearest};
  ImageU8 out = apply_transform(img, spec);
  // the center 4x4 block doubles to roughly 8x8
  long bright = 0;
  for (auto p : out.pixels) bright += (p == 200);
  EXPECT_NEAR(static_cast<double>(bright), 64.0, 8.0);
}

TEST(PnmIo, RoundTripP5AndP6) {
  namespace fs = std::filesystem;
  RngStream rng = test_stream(12);
  const fs::path dir = fs::temp_directory_path() / "fixmatch_pnm_test";
  fs::create_directories(dir);
  for (int ch : {1, 3}) {
    ImageU8 img = random_image(rng, 7, 5, ch);
    const std::string path = (dir / (ch == 1 ? "t.pgm" : "t.ppm")).string();
    write_pnm(img, path);
    EXPECT_EQ(read_pnm(path), img);
  }
  fs::remove_all(dir);
}

TEST(PnmIo, RejectsBadMagic) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fixmatch_pnm_test2";
  fs::create_directories(dir);
  const std::string path = (dir / "bad.ppm").string();
  std::ofstream(path) << "P4\n1 1\n255\n";
  EXPECT_THROW(read_pnm(path), std::runtime_error);
  fs::remove_all(dir);
}
