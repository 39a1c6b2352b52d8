#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "slidekit/augment.hpp"
#include "slidekit/color.hpp"
#include "slidekit/errors.hpp"
#include "slidekit/features.hpp"
#include "slidekit/stain.hpp"
#include "support.hpp"

using namespace slidekit;
using doctest::Approx;

namespace {

// Reference values from scikit-image rgb2lab / rgb2hsv.
struct ColorOracle {
  int r, g, b;
  double L, A, B;
  double h, s, v;
};

const ColorOracle kOracle[] = {
    {230, 140, 170, 68.376388, 37.955178, -1.090474, 0.944444, 0.391304, 0.901961},
    {12, 200, 77, 70.815745, -66.543544, 48.873178, 0.390957, 0.94, 0.784314},
    {255, 255, 255, 100.0, -0.002455, 0.004653, 0.0, 0.0, 1.0},
    {0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
    {128, 128, 128, 53.585013, -0.001473, 0.002791, 0.0, 0.0, 0.501961},
    {90, 30, 160, 28.485039, 52.091135, -58.662679, 0.74359, 0.8125, 0.627451},
};

// Cramer's rule on the 3x3 system c * M = od, independent of Eigen's inverse.
Vec3<double> solve_row_system(const Mat3<double>& m, const Vec3<double>& od) {
  auto det3 = [](const Mat3<double>& a) {
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  };
  const Mat3<double> mt = m.transpose();  // mt * c = od
  const double d = det3(mt);
  Vec3<double> c;
  for (int k = 0; k < 3; ++k) {
    Mat3<double> a = mt;
    a.col(k) = od;
    c[k] = det3(a) / d;
  }
  return c;
}

RgbImage checkerboard(int n, const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
  RgbImage img(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = ((x + y) % 2 ? b : a)[static_cast<std::size_t>(c)];
  return img;
}

}  // namespace

TEST_CASE("color conversions against reference values") {
  for (const auto& o : kOracle) {
    CAPTURE(o.r);
    CAPTURE(o.g);
    CAPTURE(o.b);
    const Vec3<double> rgb(o.r / 255.0, o.g / 255.0, o.b / 255.0);
    const auto lab = color::rgb_to_lab(rgb);
    CHECK(std::abs(lab[0] - o.L) < 0.01);
    CHECK(std::abs(lab[1] - o.A) < 0.01);
    CHECK(std::abs(lab[2] - o.B) < 0.01);
    const auto hsv = color::rgb_to_hsv(rgb);
    CHECK(std::abs(hsv[0] - o.h) < 1e-5);
    CHECK(std::abs(hsv[1] - o.s) < 1e-5);
    CHECK(std::abs(hsv[2] - o.v) < 1e-5);
  }
  const auto white = color::rgb_to_lab(Vec3<double>(1, 1, 1));
  CHECK(white[0] == Approx(100.0));
  CHECK(std::abs(white[1]) < 1e-9);
  CHECK(std::abs(white[2]) < 1e-9);
  CHECK(color::rgb_to_hsv(Vec3<double>(Vec3<double>(128, 128, 128) / 255.0))[1] == 0.0);
}

TEST_CASE("color round trips stay within 2/255") {
  for (int trial = 0; trial < 10; ++trial) {
    const RgbImage img = testing::random_image(64, 64, 100 + trial);
    for (ColorSpace space : {ColorSpace::LAB, ColorSpace::HSV, ColorSpace::LAlphaBeta, ColorSpace::RGB}) {
      const RgbImage back = to_rgb(convert_color(img, space), space);
      int worst = 0;
      for (std::size_t i = 0; i < img.pixels.size(); ++i) worst = std::max(worst, std::abs(img.pixels[i] - back.pixels[i]));
      CHECK(worst <= 2);
    }
  }
}

TEST_CASE("stain matrix") {
  const StainMatrix hed = StainMatrix::hed_default();
  for (int r = 0; r < 3; ++r) CHECK(hed.rows().row(r).norm() == Approx(1.0).epsilon(1e-12));
  CHECK(hed.rows()(0, 0) == Approx(0.65 / std::sqrt(0.65 * 0.65 + 0.70 * 0.70 + 0.29 * 0.29)));

  slidekit::Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    Mat3<double> m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = rng.uniform() * 3.0 + 0.01 * (r == c);
    try {
      const StainMatrix s = StainMatrix::from_rows(m);
      for (int r = 0; r < 3; ++r) CHECK(s.rows().row(r).norm() == Approx(1.0).epsilon(1e-12));
    } catch (const Error&) {
      // near-singular draws are rejected
    }
  }
  CHECK_THROWS_AS(StainMatrix::from_rows(Mat3<double>::Zero()), Error);
  CHECK_THROWS_AS(StainMatrix::from_rows((Mat3<double>() << 1, 0, 0, 1, 0, 0, 0, 0, 1).finished()), Error);
}

TEST_CASE("stain deconvolution") {
  const StainMatrix hed = StainMatrix::hed_default();
  const DeconvolutionParams p;

  SUBCASE("white is zero concentration") {
    const ChannelImage c = stain_deconvolve(testing::solid_image(2, 2, 255, 255, 255), hed);
    CHECK(c.pixels.cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("black stays finite") {
    CHECK(optical_density(0.0) == Approx(std::log10(256.0)));
    const ChannelImage c = stain_deconvolve(testing::solid_image(1, 1, 0, 0, 0), hed);
    CHECK(c.pixels.allFinite());
  }
  SUBCASE("forward model of (0.7, 0, 0) inverts") {
    const Vec3<double> rgb = stain_synthesize(Vec3<double>(0.7, 0, 0), hed, p);
    ChannelImage in{1, 1, PixelMatrix<double>(1, 3)};
    in.pixels.row(0) = rgb.transpose();
    const ChannelImage c = stain_deconvolve(in, hed, p);
    CHECK(std::abs(c.pixels(0, 0) - 0.7) < 1e-3);
    CHECK(std::abs(c.pixels(0, 1)) < 1e-3);
    CHECK(std::abs(c.pixels(0, 2)) < 1e-3);
  }
  SUBCASE("8-bit path matches an independent linear solve") {
    const RgbImage img = testing::random_image(16, 16, 9);
    const ChannelImage c = stain_deconvolve(img, hed, p);
    for (Eigen::Index i = 0; i < c.pixels.rows(); ++i) {
      Vec3<double> od;
      for (int k = 0; k < 3; ++k) {
        const double v = img.pixels[static_cast<std::size_t>(i) * 3 + k];
        od[k] = -std::log10((v + 1.0) / 256.0);
      }
      const Vec3<double> ref = solve_row_system(hed.rows(), od);
      for (int k = 0; k < 3; ++k) REQUIRE(std::abs(c.pixels(i, k) - ref[k]) < 1e-9);
    }
  }
}

TEST_CASE("features_36") {
  SUBCASE("constant image") {
    const FeatureVector f = features_36(testing::solid_image(32, 32, 180, 90, 140));
    for (int space = 0; space < 4; ++space)
      for (int ch = 0; ch < 3; ++ch) {
        CHECK(f[feature_index(space, ch, FeatureStat::Std)] == Approx(0.0));
        CHECK(std::abs(f[feature_index(space, ch, FeatureStat::Mean)] - f[feature_index(space, ch, FeatureStat::Median)]) <
              1e-9);
      }
    CHECK(f[feature_index(0, 0, FeatureStat::Mean)] == 180.0);
  }
  SUBCASE("checkerboard means are the two-color average") {
    const FeatureVector f = features_36(checkerboard(32, {200, 40, 90}, {20, 160, 250}));
    CHECK(f[feature_index(0, 0, FeatureStat::Mean)] == Approx(110.0));
    CHECK(f[feature_index(0, 1, FeatureStat::Mean)] == Approx(100.0));
    CHECK(f[feature_index(0, 2, FeatureStat::Mean)] == Approx(170.0));
    CHECK(f[feature_index(0, 0, FeatureStat::Std)] == Approx(90.0));
    CHECK(f[feature_index(0, 0, FeatureStat::Median)] == 20.0);
  }
  SUBCASE("deterministic across calls and threads") {
    const RgbImage img = testing::random_image(256, 256, 77);
    const FeatureVector a = features_36(img);
    FeatureVector b, c;
    std::thread t1([&] { b = features_36(img); });
    std::thread t2([&] { c = features_36(img); });
    t1.join();
    t2.join();
    CHECK(a == b);
    CHECK(a == c);
    CHECK(a.allFinite());
  }
  SUBCASE("dihedral invariance") {
    const RgbImage img = testing::random_image(64, 64, 78);
    const FeatureVector base = features_36(img);
    for (int code = 0; code < 8; ++code) {
      const FeatureVector f = features_36(dihedral_augment(img, code));
      CHECK((f - base).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("slide staining statistics") {
  testing::TempDir dir("stats");
  const RgbImage img = testing::random_image(512, 512, 4);
  write_ppm((dir / "s.ppm").string(), img);
  write_ppm((dir / "c.ppm").string(), testing::solid_image(256, 256, 200, 120, 160));
  testing::write_file(dir / "m.jsonl", R"({"slide_id":"s","image_path":"s.ppm","mpp":0.5})"
                                       "\n"
                                       R"({"slide_id":"c","image_path":"c.ppm","mpp":0.5})"
                                       "\n");
  const Catalog catalog = load_manifest(dir / "m.jsonl");
  const TileSource source(catalog);
  const std::vector<TileRef> tiles = {{"s", 0, 0, 256}, {"s", 256, 0, 256}, {"s", 0, 256, 256}, {"s", 256, 256, 256}};

  const StainStats a = slide_stain_stats(source, "s", tiles, 2, 42);
  const StainStats b = slide_stain_stats(source, "s", tiles, 2, 42);
  CHECK(a.mean == b.mean);
  CHECK(a.std == b.std);
  CHECK(a.patch_count == 2);

  const StainStats all = slide_stain_stats(source, "s", tiles, 4, 1);
  const StainStats capped = slide_stain_stats(source, "s", tiles, 500, 2);
  const StainStats whole = image_stain_stats(img);
  CHECK((all.mean - capped.mean).norm() < 1e-12);
  CHECK((all.std - capped.std).norm() < 1e-12);
  CHECK((all.mean - whole.mean).norm() < 1e-9);
  CHECK((all.std - whole.std).norm() < 1e-9);

  const std::vector<TileRef> one = {{"c", 0, 0, 256}};
  const StainStats flat = slide_stain_stats(source, "c", one);
  CHECK(flat.std.norm() < 1e-9);
  const auto expect = color::rgb_to_lalphabeta(Vec3<double>(Vec3<double>(200, 120, 160) / 255.0));
  CHECK((flat.mean - expect).norm() < 1e-9);

  CHECK_THROWS_AS(slide_stain_stats(source, "c", std::vector<TileRef>{}), Error);

  StainStatsTable table{{"s", a}, {"c", flat}};
  save_stain_stats(table, dir / "stats.csv");
  const StainStatsTable loaded = load_stain_stats(dir / "stats.csv");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("s").mean == a.mean);
  CHECK(loaded.at("s").std == a.std);
}

TEST_CASE("feature table format") {
  FeatureTable t;
  t.keys = {{0, 0, 0}, {1, 256, 512}};
  t.values.resize(2, kFeatureDim);
  for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = static_cast<float>(i) * 0.5f;
  const std::string bytes = t.serialize();
  const FeatureTable back = FeatureTable::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.keys == t.keys);

  std::string bad = bytes;
  bad[0] = 'X';
  try {
    FeatureTable::deserialize(bad, "feat.rvfv");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
  }
  CHECK_THROWS_AS(FeatureTable::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
}
