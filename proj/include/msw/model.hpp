#pragma once

#include <string>
#include <vector>

#include "msw/geometry.hpp"
#include "msw/rng.hpp"
#include "msw/tensor.hpp"

namespace msw {

enum class DetectionFusion { kSum, kMax };
enum class MaskFusion { kSum, kMax, kConcat };

struct FusionSpec {
  DetectionFusion detection = DetectionFusion::kSum;
  MaskFusion mask = MaskFusion::kConcat;
};

struct ModelConfig {
  /// Per-stage backbone widths; stage s downsamples by 2 for s > 0, so the
  /// final feature map lives at stride 2^(stages-1).
  std::vector<int> widths = {8, 16, 32};
  int mask_branch_channels = 32;
  int c_mask = 8;
  FusionSpec fusion;
  /// Ablation switches: when off, the corresponding head sees the
  /// appearance stream only.
  bool motion_for_detection = true;
  bool motion_for_mask = true;
  double score_threshold = 0.3;
  double nms_iou = 0.6;

  void validate() const;
};

/// Two-stream encoder with a shared-parameter backbone, per-stream mask
/// branches, an instance-conditioned mask head and a single-level
/// detection head.
class TwoStreamModel {
 public:
  TwoStreamModel(ModelConfig config, Rng& rng);

  struct Features {
    ad::Tensor f_det;        // fused detection features, stride^2 downsampled
    ad::Tensor f_mask_img;   // appearance mask-branch output, C_mask channels
    ad::Tensor f_mask_flow;  // motion mask-branch output, C_mask channels
    ad::Tensor f_mask;       // fused mask-head input
  };

  /// image and flow_rgb are 3xHxW with H, W divisible by stride().
  Features forward(ad::Graph& g, const ad::Tensor& image,
                   const ad::Tensor& flow_rgb) const;

  struct HeadOutputs {
    ad::Tensor objectness;   // 1 x Hg x Wg logits
    ad::Tensor ltrb;         // 4 x Hg x Wg offsets in grid units
    ad::Tensor controllers;  // controller_length() x Hg x Wg
  };
  HeadOutputs detection_head(ad::Graph& g, const ad::Tensor& f_det) const;

  /// Controller vector emitted at one grid location.
  ad::Tensor controller_at(ad::Graph& g, const ad::Tensor& controllers, int row,
                           int col) const;

  /// Decode a controller into three 1x1 conv layers over f_mask plus
  /// relative-coordinate channels; returns the sigmoid score map 1xHgxWg.
  ad::Tensor mask_head(ad::Graph& g, const ad::Tensor& f_mask,
                       const ad::Tensor& controller, int center_row,
                       int center_col) const;

  struct Detection {
    BoxF box;  // image coordinates
    double score = 0.0;
    int grid_row = 0;
    int grid_col = 0;
  };
  /// Threshold objectness at score_threshold, decode boxes, greedy NMS.
  std::vector<Detection> detect(const ad::Tensor& objectness,
                                const ad::Tensor& ltrb) const;

  int stride() const { return 1 << (static_cast<int>(config_.widths.size()) - 1); }
  int mask_head_in_channels() const;
  int controller_length() const;
  const ModelConfig& config() const { return config_; }

  /// Every trainable tensor exactly once (shared backbone appears once).
  std::vector<ad::Tensor> parameters() const;
  std::vector<ad::Tensor> backbone_parameters() const;

  void save(const std::string& path) const;
  /// Rebuild from config and restore parameter data by name.
  void load(const std::string& path);

 private:
  struct Conv {
    ad::Tensor weight;
    ad::Tensor bias;
    int stride = 1;
    int padding = 1;
  };

  Conv make_conv(Rng& rng, const std::string& name, int in_ch, int out_ch,
                 int kernel, int stride, int padding);
  ad::Tensor apply(ad::Graph& g, const Conv& conv, const ad::Tensor& x) const;
  ad::Tensor backbone(ad::Graph& g, const ad::Tensor& x) const;
  ad::Tensor mask_branch(ad::Graph& g, const std::vector<Conv>& branch,
                         const ad::Tensor& x) const;
  void collect(std::vector<ad::Tensor>& out, const std::vector<Conv>& convs) const;

  ModelConfig config_;
  std::vector<Conv> backbone_convs_;
  std::vector<Conv> mask_branch_img_;
  std::vector<Conv> mask_branch_flow_;
  Conv det_tower_;
  Conv det_obj_;
  Conv det_ltrb_;
  Conv det_ctrl_;
};

}  // namespace msw
