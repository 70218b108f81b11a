#pragma once

#include <string>
#include <vector>

#include "msw/geometry.hpp"
#include "msw/model.hpp"
#include "msw/synthdata.hpp"

namespace msw {

/// |a n b| / |a u b| over equal-extent binary masks; two empty masks have
/// IoU 1 by convention.
double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

struct TaskMetrics {
  double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_s = -1.0;  // -1 when no ground truth falls in the area band
  double ap_m = -1.0;
  double ap_l = -1.0;
};

struct EvalResult {
  TaskMetrics mask;
  TaskMetrics box;

  std::string to_json() const;
  std::string to_table() const;
};

struct GroundTruthInstance {
  Box box;
  std::vector<uint8_t> mask;  // empty when only boxes are evaluated
  double area = 0.0;          // mask pixel count
};

struct PredictedInstance {
  BoxF box;
  std::vector<uint8_t> mask;
  double score = 0.0;
};

struct EvalImage {
  int width = 0;
  int height = 0;
  std::vector<GroundTruthInstance> ground_truth;
  std::vector<PredictedInstance> predictions;
};

/// COCO-style AP over IoU thresholds 0.50:0.05:0.95 with greedy per-image
/// matching (descending score, ties by input index) and 101-point
/// interpolated precision. Predictions tied in score enter the
/// precision-recall curve as one group, so their relative order cannot
/// change the result. Area bands for AP_S/M/L use the COCO 32^2 / 96^2
/// thresholds scaled by (image area / 640^2).
EvalResult evaluate_detections(const std::vector<EvalImage>& images);

/// Run the model over a dataset (frames + ground-truth flow), segment every
/// detection with the dynamic mask head at threshold 0.5, and score the
/// results. neutral_flow feeds the zero-motion encoding instead of the real
/// flow (the color-only configuration). Throws on an empty dataset.
EvalResult evaluate(const TwoStreamModel& model, const Dataset& dataset,
                    bool neutral_flow = false);

/// Bilinear upsampling with half-pixel centers, used to lift score maps
/// back to image resolution.
std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_h,
                                      int src_w, int dst_h, int dst_w);

}  // namespace msw
