#include "msw/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace msw {

ImageU8 ImageU8::filled(int width, int height, uint8_t r, uint8_t g, uint8_t b) {
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.pixels.resize(3 * static_cast<size_t>(width) * height);
  for (size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

FlowField FlowField::zero(int width, int height) {
  FlowField f;
  f.width = width;
  f.height = height;
  f.uv.assign(2 * static_cast<size_t>(width) * height, 0.0f);
  return f;
}

// ---------------------------------------------------------------------------
// sRGB -> Lab (D65, 2 degree observer)

namespace {

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  constexpr double delta3 = delta * delta * delta;
  return t > delta3 ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace

std::array<double, 3> srgb_to_lab(uint8_t r8, uint8_t g8, uint8_t b8) {
  const double r = srgb_to_linear(r8 / 255.0);
  const double g = srgb_to_linear(g8 / 255.0);
  const double b = srgb_to_linear(b8 / 255.0);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  // White point equals the matrix row sums, so neutral input lands on a=b=0.
  const double fx = lab_f(x / 0.95047);
  const double fy = lab_f(y / 1.0);
  const double fz = lab_f(z / 1.08883);
  // 116 fy - 16 written as a difference so black lands exactly on L = 0
  return {116.0 * (fy - 4.0 / 29.0), 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

LabImage srgb_to_lab(const ImageU8& image) {
  LabImage lab;
  lab.width = image.width;
  lab.height = image.height;
  lab.values.resize(3 * static_cast<size_t>(image.width) * image.height);
  for (size_t p = 0; p < lab.values.size() / 3; ++p) {
    const auto v = srgb_to_lab(image.pixels[3 * p], image.pixels[3 * p + 1],
                               image.pixels[3 * p + 2]);
    lab.values[3 * p] = v[0];
    lab.values[3 * p + 1] = v[1];
    lab.values[3 * p + 2] = v[2];
  }
  return lab;
}

double lab_delta_e(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dl = a[0] - b[0], da = a[1] - b[1], db = a[2] - b[2];
  return std::sqrt(dl * dl + da * da + db * db);
}

// ---------------------------------------------------------------------------
// Flow color wheel

std::array<double, 3> flow_vector_color(double u, double v, double max_magnitude) {
  const double mag = std::sqrt(u * u + v * v);
  const double sat = std::min(1.0, mag / std::max(max_magnitude, 1e-12));
  double hue = std::atan2(v, u) * (180.0 / 3.14159265358979323846);
  if (hue < 0.0) hue += 360.0;
  // HSV with V = 1: zero saturation is white.
  const double hp = hue / 60.0;
  const double x = sat * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0.0, g = 0.0, b = 0.0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = sat; g = x; break;
    case 1: r = x; g = sat; break;
    case 2: g = sat; b = x; break;
    case 3: g = x; b = sat; break;
    case 4: r = x; b = sat; break;
    default: r = sat; b = x; break;
  }
  const double m = 1.0 - sat;
  return {r + m, g + m, b + m};
}

double flow_percentile99_magnitude(const FlowField& flow) {
  const size_t n = static_cast<size_t>(flow.width) * flow.height;
  std::vector<double> mags(n);
  for (size_t i = 0; i < n; ++i) {
    const double u = flow.uv[2 * i], v = flow.uv[2 * i + 1];
    mags[i] = std::sqrt(u * u + v * v);
  }
  std::sort(mags.begin(), mags.end());
  const size_t k = n == 0 ? 0 : std::min(n - 1, static_cast<size_t>(std::ceil(0.99 * n)) - 1);
  return std::max(n == 0 ? 0.0 : mags[k], 1e-6);
}

FlowColorImage flow_to_rgb(const FlowField& flow,
                           std::optional<double> max_magnitude) {
  const double maxm =
      max_magnitude ? std::max(*max_magnitude, 1e-6) : flow_percentile99_magnitude(flow);
  FlowColorImage out;
  out.width = flow.width;
  out.height = flow.height;
  out.rgb.resize(3 * static_cast<size_t>(flow.width) * flow.height);
  for (size_t i = 0; i < out.rgb.size() / 3; ++i) {
    const auto c = flow_vector_color(flow.uv[2 * i], flow.uv[2 * i + 1], maxm);
    out.rgb[3 * i] = c[0];
    out.rgb[3 * i + 1] = c[1];
    out.rgb[3 * i + 2] = c[2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Middlebury .flo

namespace {
constexpr char kFloTag[4] = {'P', 'I', 'E', 'H'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

FlowField read_flo(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open flow file: " + path);
  char tag[4];
  if (std::fread(tag, 1, 4, f.get()) != 4 || std::memcmp(tag, kFloTag, 4) != 0) {
    throw std::runtime_error("bad .flo magic in " + path);
  }
  int32_t w = 0, h = 0;
  if (std::fread(&w, 4, 1, f.get()) != 1 || std::fread(&h, 4, 1, f.get()) != 1) {
    throw std::runtime_error("truncated .flo header in " + path);
  }
  if (w <= 0 || h <= 0) throw std::runtime_error("bad .flo extents in " + path);
  FlowField flow;
  flow.width = w;
  flow.height = h;
  flow.uv.resize(2 * static_cast<size_t>(w) * h);
  if (std::fread(flow.uv.data(), 4, flow.uv.size(), f.get()) != flow.uv.size()) {
    throw std::runtime_error("truncated .flo payload in " + path);
  }
  return flow;
}

void write_flo(const std::string& path, const FlowField& flow) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  const int32_t w = flow.width, h = flow.height;
  if (std::fwrite(kFloTag, 1, 4, f.get()) != 4 ||
      std::fwrite(&w, 4, 1, f.get()) != 1 || std::fwrite(&h, 4, 1, f.get()) != 1 ||
      std::fwrite(flow.uv.data(), 4, flow.uv.size(), f.get()) != flow.uv.size()) {
    throw std::runtime_error("write failed: " + path);
  }
}

// ---------------------------------------------------------------------------
// PNG

ImageU8 read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  ImageU8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("malformed PNG: " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG layout: " + path);
  }
  img.pixels.resize(3 * static_cast<size_t>(img.width) * img.height);
  rows.resize(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<size_t>(y)] = img.pixels.data() + 3 * static_cast<size_t>(y) * img.width;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace {

void write_png_impl(const std::string& path, int width, int height, int channels,
                    const uint8_t* data) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 6);  // pinned for byte-identical output
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    rows[static_cast<size_t>(y)] = const_cast<uint8_t*>(
        data + static_cast<size_t>(channels) * width * y);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const ImageU8& image) {
  if (image.pixels.size() != 3 * static_cast<size_t>(image.width) * image.height) {
    throw std::invalid_argument("write_png: pixel buffer does not match extents");
  }
  write_png_impl(path, image.width, image.height, 3, image.pixels.data());
}

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& gray) {
  if (gray.size() != static_cast<size_t>(width) * height) {
    throw std::invalid_argument("write_png_gray: buffer does not match extents");
  }
  write_png_impl(path, width, height, 1, gray.data());
}

// ---------------------------------------------------------------------------
// Nearest-neighbor resize

namespace {

template <typename T>
std::vector<T> resize_nearest_values(const std::vector<T>& src, int sw, int sh,
                                     int ow, int oh, int channels) {
  std::vector<T> out(static_cast<size_t>(channels) * ow * oh);
  for (int y = 0; y < oh; ++y) {
    const int sy = std::min(sh - 1, static_cast<int>((y + 0.5) * sh / oh));
    for (int x = 0; x < ow; ++x) {
      const int sx = std::min(sw - 1, static_cast<int>((x + 0.5) * sw / ow));
      for (int c = 0; c < channels; ++c) {
        out[(static_cast<size_t>(y) * ow + x) * channels + c] =
            src[(static_cast<size_t>(sy) * sw + sx) * channels + c];
      }
    }
  }
  return out;
}

}  // namespace

LabImage resize_nearest(const LabImage& src, int out_width, int out_height) {
  LabImage out;
  out.width = out_width;
  out.height = out_height;
  out.values = resize_nearest_values(src.values, src.width, src.height,
                                     out_width, out_height, 3);
  return out;
}

FlowColorImage resize_nearest(const FlowColorImage& src, int out_width,
                              int out_height) {
  FlowColorImage out;
  out.width = out_width;
  out.height = out_height;
  out.rgb = resize_nearest_values(src.rgb, src.width, src.height, out_width,
                                  out_height, 3);
  return out;
}

FlowField resize_nearest(const FlowField& src, int out_width, int out_height) {
  FlowField out;
  out.width = out_width;
  out.height = out_height;
  out.uv = resize_nearest_values(src.uv, src.width, src.height, out_width,
                                 out_height, 2);
  return out;
}

}  // namespace msw
