#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "msw/imaging.hpp"
#include "msw/rng.hpp"

using namespace msw;
namespace fs = std::filesystem;

namespace {

// hue/saturation read back from an RGB triple with V = max = 1
double rgb_hue_degrees(const std::array<double, 3>& c) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  const double d = mx - mn;
  REQUIRE(d > 0.0);
  double h;
  if (mx == c[0]) {
    h = std::fmod((c[1] - c[2]) / d, 6.0);
  } else if (mx == c[1]) {
    h = (c[2] - c[0]) / d + 2.0;
  } else {
    h = (c[0] - c[1]) / d + 4.0;
  }
  h *= 60.0;
  if (h < 0) h += 360.0;
  return h;
}

double rgb_saturation(const std::array<double, 3>& c) {
  return std::max({c[0], c[1], c[2]}) - std::min({c[0], c[1], c[2]});
}

}  // namespace

TEST_CASE("srgb_to_lab reference points") {
  auto white = srgb_to_lab(255, 255, 255);
  CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(std::abs(white[1]) < 0.01);
  CHECK(std::abs(white[2]) < 0.01);

  auto black = srgb_to_lab(0, 0, 0);
  CHECK(black[0] == 0.0);
  CHECK(black[1] == 0.0);
  CHECK(black[2] == 0.0);
}

TEST_CASE("srgb_to_lab neutral axis is neutral, monotone, injective") {
  double prev = -1.0;
  for (int g = 0; g < 256; ++g) {
    auto lab = srgb_to_lab(static_cast<uint8_t>(g), static_cast<uint8_t>(g),
                           static_cast<uint8_t>(g));
    CHECK(std::abs(lab[1]) < 0.01);
    CHECK(std::abs(lab[2]) < 0.01);
    CHECK(lab[0] > prev);  // strictly increasing L
    prev = lab[0];
  }
}

TEST_CASE("srgb_to_lab whole-image conversion") {
  ImageU8 img = ImageU8::filled(3, 2, 40, 90, 200);
  auto lab = srgb_to_lab(img);
  REQUIRE(lab.width == 3);
  REQUIRE(lab.height == 2);
  auto ref = srgb_to_lab(40, 90, 200);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) {
      CHECK(lab.at(r, c)[0] == ref[0]);
      CHECK(lab.at(r, c)[1] == ref[1]);
      CHECK(lab.at(r, c)[2] == ref[2]);
    }
  }
}

TEST_CASE("flow color wheel: zero flow is white") {
  FlowField flow = FlowField::zero(4, 3);
  auto img = flow_to_rgb(flow);
  for (size_t i = 0; i < img.rgb.size(); ++i) CHECK(img.rgb[i] == 1.0);
}

TEST_CASE("flow color wheel: full rotation leaves colors unchanged") {
  const double mag = 2.0;
  for (int k = 0; k < 12; ++k) {
    const double angle = k * 3.14159265358979323846 / 6.0;
    auto a = flow_vector_color(mag * std::cos(angle), mag * std::sin(angle), 4.0);
    const double full = angle + 2.0 * 3.14159265358979323846;
    auto b = flow_vector_color(mag * std::cos(full), mag * std::sin(full), 4.0);
    for (int c = 0; c < 3; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
  }
}

TEST_CASE("flow color wheel: opposite vectors -> complementary hue, equal saturation") {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const double u = rng.uniform(-3.0, 3.0);
    const double v = rng.uniform(-3.0, 3.0);
    if (std::hypot(u, v) < 1e-3) continue;
    auto a = flow_vector_color(u, v, 5.0);
    auto b = flow_vector_color(-u, -v, 5.0);
    const double dh = std::fmod(std::abs(rgb_hue_degrees(a) - rgb_hue_degrees(b)), 360.0);
    CHECK(std::min(dh, 360.0 - dh) == doctest::Approx(180.0).epsilon(1e-9));
    CHECK(rgb_saturation(a) == doctest::Approx(rgb_saturation(b)).epsilon(1e-12));
  }
}

TEST_CASE("flow color wheel: saturation monotone in magnitude up to max") {
  double prev = -1.0;
  for (int k = 0; k <= 20; ++k) {
    const double mag = 0.3 * k;  // beyond max at 4.0 -> clamped
    auto c = flow_vector_color(mag, 0.0, 4.0);
    const double sat = rgb_saturation(c);
    CHECK(sat >= prev);
    CHECK(sat <= 1.0 + 1e-12);
    prev = sat;
  }
}

TEST_CASE("flow 99th percentile magnitude") {
  FlowField flow = FlowField::zero(10, 10);
  // one large outlier among unit vectors
  for (int i = 0; i < 100; ++i) flow.uv[2 * i] = 1.0f;
  flow.uv[0] = 100.0f;
  const double p99 = flow_percentile99_magnitude(flow);
  CHECK(p99 == doctest::Approx(1.0));
  FlowField zero = FlowField::zero(2, 2);
  CHECK(flow_percentile99_magnitude(zero) == 1e-6);  // floor
}

TEST_CASE(".flo round trip, magic and malformed inputs") {
  const auto dir = fs::temp_directory_path() / "msw_flo_test";
  fs::create_directories(dir);
  const auto path = (dir / "f.flo").string();

  Rng rng(9);
  FlowField flow = FlowField::zero(7, 5);
  for (auto& v : flow.uv) v = static_cast<float>(rng.uniform(-10.0, 10.0));
  write_flo(path, flow);

  {
    std::ifstream is(path, std::ios::binary);
    char tag[4];
    is.read(tag, 4);
    CHECK(std::string(tag, 4) == "PIEH");
  }

  auto rt = read_flo(path);
  CHECK(rt.width == 7);
  CHECK(rt.height == 5);
  for (size_t i = 0; i < flow.uv.size(); ++i) CHECK(rt.uv[i] == flow.uv[i]);

  {
    std::ofstream bad(dir / "bad.flo", std::ios::binary);
    bad << "XXXX";
    const int32_t w = 2, h = 2;
    bad.write(reinterpret_cast<const char*>(&w), 4);
    bad.write(reinterpret_cast<const char*>(&h), 4);
  }
  CHECK_THROWS_AS(read_flo((dir / "bad.flo").string()), std::runtime_error);

  {
    std::ofstream trunc(dir / "trunc.flo", std::ios::binary);
    trunc << "PIEH";
    const int32_t w = 4, h = 4;
    trunc.write(reinterpret_cast<const char*>(&w), 4);
    trunc.write(reinterpret_cast<const char*>(&h), 4);
    const float one = 1.0f;
    trunc.write(reinterpret_cast<const char*>(&one), 4);
  }
  CHECK_THROWS_AS(read_flo((dir / "trunc.flo").string()), std::runtime_error);

  {
    std::ofstream neg(dir / "neg.flo", std::ios::binary);
    neg << "PIEH";
    const int32_t w = -1, h = 4;
    neg.write(reinterpret_cast<const char*>(&w), 4);
    neg.write(reinterpret_cast<const char*>(&h), 4);
  }
  CHECK_THROWS_AS(read_flo((dir / "neg.flo").string()), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("png round trip and promotion") {
  const auto dir = fs::temp_directory_path() / "msw_png_test";
  fs::create_directories(dir);

  Rng rng(21);
  ImageU8 img;
  img.width = 9;
  img.height = 6;
  img.pixels.resize(3 * 9 * 6);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  const auto path = (dir / "img.png").string();
  write_png(path, img);
  auto rt = read_png(path);
  REQUIRE(rt.width == img.width);
  REQUIRE(rt.height == img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) CHECK(rt.pixels[i] == img.pixels[i]);

  ImageU8 red = ImageU8::filled(1, 1, 255, 0, 0);
  write_png((dir / "red.png").string(), red);
  auto red_rt = read_png((dir / "red.png").string());
  CHECK(red_rt.pixels[0] == 255);
  CHECK(red_rt.pixels[1] == 0);
  CHECK(red_rt.pixels[2] == 0);

  std::vector<uint8_t> gray(4 * 3);
  for (size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<uint8_t>(20 * i);
  write_png_gray((dir / "gray.png").string(), 4, 3, gray);
  auto promoted = read_png((dir / "gray.png").string());
  REQUIRE(promoted.width == 4);
  REQUIRE(promoted.height == 3);
  for (size_t i = 0; i < gray.size(); ++i) {
    CHECK(promoted.pixels[3 * i] == gray[i]);
    CHECK(promoted.pixels[3 * i + 1] == gray[i]);
    CHECK(promoted.pixels[3 * i + 2] == gray[i]);
  }

  {
    std::ofstream junk(dir / "junk.png", std::ios::binary);
    junk << "this is not a png at all";
  }
  CHECK_THROWS_AS(read_png((dir / "junk.png").string()), std::runtime_error);
  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("png writes are byte-identical across calls") {
  const auto dir = fs::temp_directory_path() / "msw_png_det";
  fs::create_directories(dir);
  Rng rng(31);
  ImageU8 img;
  img.width = 16;
  img.height = 16;
  img.pixels.resize(3 * 16 * 16);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  write_png((dir / "a.png").string(), img);
  write_png((dir / "b.png").string(), img);
  std::ifstream fa(dir / "a.png", std::ios::binary), fb(dir / "b.png", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
  fs::remove_all(dir);
}

TEST_CASE("nearest resize picks source pixel at target center") {
  LabImage src;
  src.width = 4;
  src.height = 4;
  src.values.resize(3 * 16);
  for (int i = 0; i < 16; ++i) src.values[3 * static_cast<size_t>(i)] = i;
  auto down = resize_nearest(src, 2, 2);
  REQUIRE(down.width == 2);
  REQUIRE(down.height == 2);
  // half-pixel centers land on source pixels (1,1), (1,3), (3,1), (3,3)
  CHECK(down.at(0, 0)[0] == 5.0);
  CHECK(down.at(0, 1)[0] == 7.0);
  CHECK(down.at(1, 0)[0] == 13.0);
  CHECK(down.at(1, 1)[0] == 15.0);
}
