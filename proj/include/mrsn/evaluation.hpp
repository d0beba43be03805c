#pragma once

#include <string>
#include <vector>

#include "mrsn/boxes.hpp"

namespace mrsn {

struct Detection {
  std::string frame_id;
  ActorBox box;
  std::size_t class_id = 0;
  double confidence = 0;
};

struct GroundTruthBox {
  std::string frame_id;
  ActorBox box;
  std::size_t class_id = 0;
};

struct MapReport {
  std::vector<double> class_ap;           // NaN for classes without ground truth
  std::vector<std::size_t> class_gt_count;
  double mean_ap = 0;
};

inline constexpr double kFrameIouThreshold = 0.5;

/// Frame-level mAP: per class, detections sorted by confidence descending are
/// greedily matched to the best still-unmatched ground-truth box in the same
/// frame with IoU >= threshold; AP is the all-point interpolated area under
/// the precision/recall curve. mAP averages classes that have ground truth.
/// Throws DataError when no class has ground truth.
MapReport frame_map(const std::vector<Detection>& detections,
                    const std::vector<GroundTruthBox>& ground_truth, std::size_t num_classes,
                    double iou_threshold = kFrameIouThreshold);

}  // namespace mrsn
