#pragma once

#include <string>
#include <vector>

#include "msw/model.hpp"
#include "msw/pairwise.hpp"
#include "msw/synthdata.hpp"

namespace msw {

struct VisualizeResult {
  std::vector<std::string> files;
  /// Foreground/background mean-activation ratios of the two mask-branch
  /// heatmaps, measured against the ground-truth masks.
  double appearance_contrast = 0.0;
  double flow_contrast = 0.0;
};

/// Emits six PNGs for one sample: the input frame, the flow color image,
/// the channel-mean activation heatmaps of both mask branches (normalized
/// to [0, 1] per image), the predicted masks overlaid on the frame, and the
/// positive pseudo-label pairs drawn over the frame.
VisualizeResult visualize_sample(const TwoStreamModel& model,
                                 const Dataset::Sample& sample, int width,
                                 int height, const SupervisionParams& params,
                                 bool neutral_flow,
                                 const std::string& out_prefix,
                                 double explicit_flow_max = 0.0);

}  // namespace msw
