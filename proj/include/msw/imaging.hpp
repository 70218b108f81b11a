#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace msw {

/// Interleaved 8-bit sRGB image, row-major.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // 3 * width * height

  static ImageU8 filled(int width, int height, uint8_t r, uint8_t g, uint8_t b);
  uint8_t* at(int row, int col) { return &pixels[3 * (static_cast<size_t>(row) * width + col)]; }
  const uint8_t* at(int row, int col) const {
    return &pixels[3 * (static_cast<size_t>(row) * width + col)];
  }
};

/// CIE L*a*b* under D65, interleaved (L, a, b) per pixel.
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // 3 * width * height

  const double* at(int row, int col) const {
    return &values[3 * (static_cast<size_t>(row) * width + col)];
  }
};

/// Per-pixel (u, v) displacement from frame t to t+1, in pixels.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> uv;  // 2 * width * height, interleaved

  static FlowField zero(int width, int height);
  float* at(int row, int col) { return &uv[2 * (static_cast<size_t>(row) * width + col)]; }
  const float* at(int row, int col) const {
    return &uv[2 * (static_cast<size_t>(row) * width + col)];
  }
};

/// Color-wheel encoding of a flow field, RGB in [0, 1].
struct FlowColorImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // 3 * width * height

  const double* at(int row, int col) const {
    return &rgb[3 * (static_cast<size_t>(row) * width + col)];
  }
};

std::array<double, 3> srgb_to_lab(uint8_t r, uint8_t g, uint8_t b);
LabImage srgb_to_lab(const ImageU8& image);

/// Euclidean distance in Lab, the usual delta-E 76.
double lab_delta_e(const std::array<double, 3>& a, const std::array<double, 3>& b);

/// Color-wheel color for one vector: hue from atan2(v, u), saturation
/// |(u,v)| / max_magnitude clamped to 1, zero motion maps to white.
std::array<double, 3> flow_vector_color(double u, double v, double max_magnitude);

/// Encode a whole field. Without an explicit max_magnitude the 99th
/// percentile magnitude is used (never below 1e-6).
FlowColorImage flow_to_rgb(const FlowField& flow,
                           std::optional<double> max_magnitude = std::nullopt);

double flow_percentile99_magnitude(const FlowField& flow);

/// Middlebury .flo: "PIEH" tag, i32 width, i32 height, row-major f32 (u, v).
FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& flow);

/// 8-bit PNG. Reads promote grayscale/palette input to RGB and drop alpha;
/// writes are plain 8-bit RGB with fixed encoder settings.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& image);
/// Single-channel 8-bit PNG (used for instance masks).
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& gray);

/// Nearest-neighbor resampling (source pixel at the target pixel center).
LabImage resize_nearest(const LabImage& src, int out_width, int out_height);
FlowColorImage resize_nearest(const FlowColorImage& src, int out_width,
                              int out_height);
FlowField resize_nearest(const FlowField& src, int out_width, int out_height);

}  // namespace msw
