#include "mrsn/boxes.hpp"

#include <algorithm>

namespace mrsn {

double iou(const ActorBox& a, const ActorBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<LabeledBox> filter_boxes(const std::vector<ActorBox>& proposals,
                                     const std::vector<LabeledBox>& ground_truth, FilterMode mode) {
  std::vector<LabeledBox> out;
  if (mode == FilterMode::Infer) {
    for (const auto& p : proposals) {
      if (p.score > kInferScore) out.push_back({p, {}, false});
    }
    return out;
  }
  out = ground_truth;
  for (auto& g : out) g.ground_truth = true;
  for (const auto& p : proposals) {
    double best = 0.0;
    const LabeledBox* match = nullptr;
    for (const auto& g : ground_truth) {
      const double v = iou(p, g.box);
      if (v > best) {
        best = v;
        match = &g;
      }
    }
    if (match && best > kTrainProposalIou) out.push_back({p, match->labels, false});
  }
  return out;
}

}  // namespace mrsn
