#pragma once

#include <vector>

#include "mrsn/tokenization.hpp"

namespace mrsn {

/// A box with its multi-hot label vector (empty when unlabeled).
struct LabeledBox {
  ActorBox box;
  std::vector<float> labels;
  bool ground_truth = false;
};

double iou(const ActorBox& a, const ActorBox& b);

enum class FilterMode { Train, Infer };

inline constexpr double kTrainProposalIou = 0.75;
inline constexpr double kInferScore = 0.85;

/// Train: every ground-truth box plus proposals whose best IoU with a
/// ground-truth box exceeds 0.75 (labels taken from that box).
/// Infer: proposals scoring strictly above 0.85, unlabeled.
std::vector<LabeledBox> filter_boxes(const std::vector<ActorBox>& proposals,
                                     const std::vector<LabeledBox>& ground_truth, FilterMode mode);

}  // namespace mrsn
