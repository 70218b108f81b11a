#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msw/geometry.hpp"
#include "msw/imaging.hpp"

namespace msw {

enum class ShapeKind { kRectangle, kEllipse, kTriangle };
enum class BackgroundMode { kFlat, kTexturedNoise };

struct SceneConfig {
  int width = 64;
  int height = 64;
  int min_instances = 1;
  int max_instances = 2;
  std::vector<ShapeKind> shapes = {ShapeKind::kRectangle, ShapeKind::kEllipse,
                                   ShapeKind::kTriangle};
  /// Integer per-frame translation; each instance moves with
  /// max(|vx|, |vy|) in [speed_min, speed_max] and never with the
  /// background velocity.
  int speed_min = 1;
  int speed_max = 3;
  BackgroundMode background = BackgroundMode::kTexturedNoise;
  bool camouflage = false;
  bool allow_occlusion = false;
  /// Background translation from t to t+1 (camera pan analog).
  int pan_x = 0;
  int pan_y = 0;
  double noise_sigma = 8.0 / 255.0;
  /// Shape half-extent range as a fraction of min(width, height).
  double size_min_frac = 0.16;
  double size_max_frac = 0.30;
  uint64_t seed = 1;

  void validate() const;
};

struct InstanceAnnotation {
  std::vector<uint8_t> mask;  // height x width, visible pixels at frame t, 0/1
  Box box;                    // tight bounds of the visible mask
  int category_id = 0;        // 1 rectangle, 2 ellipse, 3 triangle
  int velocity_x = 0;
  int velocity_y = 0;
};

struct SceneSample {
  ImageU8 frame_t;
  ImageU8 frame_t1;
  FlowField flow;  // exact, from the per-instance translations
  std::vector<InstanceAnnotation> instances;
};

/// Deterministic in (config.seed, index). Throws std::runtime_error when
/// placement constraints cannot be met within 100 attempts.
SceneSample generate_sample(const SceneConfig& config, int index);

struct SplitSummary {
  int images = 0;
  int instances = 0;
  /// Mean over instances of the Lab delta-E between the instance fill and
  /// the mean local background color (camouflage scenes keep this < 5).
  double mean_local_delta_e = 0.0;
};

/// Writes frames/{idx}_t.png, frames/{idx}_t1.png, flow/{idx}.flo,
/// masks/{idx}_{inst}.png and annotations.json under out_dir.
SplitSummary generate_split(const SceneConfig& config, int n,
                            const std::string& out_dir);

/// Lab delta-E between the instance's fill (mean color over the mask
/// interior of frame t) and the mean background color in a ring around its
/// box; recomputed from the rendered frame, so texture noise averages out.
double local_background_delta_e(const SceneSample& sample, size_t instance);

/// A split loaded back from disk.
struct Dataset {
  struct Sample {
    int id = 0;
    ImageU8 frame_t;
    FlowField flow;
    std::vector<InstanceAnnotation> instances;
  };
  int width = 0;
  int height = 0;
  std::vector<Sample> samples;

  static Dataset load(const std::string& dir);
};

}  // namespace msw
