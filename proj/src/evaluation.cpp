#include "mrsn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mrsn {

namespace {

double class_average_precision(const std::vector<const Detection*>& dets,
                               const std::vector<const GroundTruthBox*>& gts, double threshold) {
  std::map<std::string, std::vector<std::pair<const GroundTruthBox*, bool>>> by_frame;
  for (const auto* g : gts) by_frame[g->frame_id].push_back({g, false});

  std::vector<const Detection*> order = dets;
  std::stable_sort(order.begin(), order.end(),
                   [](const Detection* a, const Detection* b) { return a->confidence > b->confidence; });

  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto* d : order) {
    auto it = by_frame.find(d->frame_id);
    std::pair<const GroundTruthBox*, bool>* best = nullptr;
    double best_iou = -1.0;
    if (it != by_frame.end()) {
      for (auto& cand : it->second) {
        if (cand.second) continue;
        const double v = iou(d->box, cand.first->box);
        if (v > best_iou) {
          best_iou = v;
          best = &cand;
        }
      }
    }
    if (best && best_iou >= threshold) {
      best->second = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }

  // All-point interpolation over the monotone precision envelope.
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

}  // namespace

MapReport frame_map(const std::vector<Detection>& detections,
                    const std::vector<GroundTruthBox>& ground_truth, std::size_t num_classes,
                    double iou_threshold) {
  std::vector<std::vector<const Detection*>> dets(num_classes);
  std::vector<std::vector<const GroundTruthBox*>> gts(num_classes);
  for (const auto& d : detections) {
    if (d.class_id >= num_classes) throw RangeError("detection class out of range");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw RangeError("detection confidence outside [0, 1]");
    dets[d.class_id].push_back(&d);
  }
  for (const auto& g : ground_truth) {
    if (g.class_id >= num_classes) throw RangeError("ground-truth class out of range");
    gts[g.class_id].push_back(&g);
  }

  MapReport report;
  report.class_ap.assign(num_classes, std::nan(""));
  report.class_gt_count.assign(num_classes, 0);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    report.class_gt_count[c] = gts[c].size();
    if (gts[c].empty()) continue;
    report.class_ap[c] = class_average_precision(dets[c], gts[c], iou_threshold);
    sum += report.class_ap[c];
    ++counted;
  }
  if (counted == 0) throw DataError("frame_map: no ground truth, mAP is undefined");
  report.mean_ap = sum / static_cast<double>(counted);
  return report;
}

}  // namespace mrsn
