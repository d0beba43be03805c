#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrsn/dataset.hpp"
#include "mrsn/evaluation.hpp"
#include "mrsn/model.hpp"

namespace mrsn {

struct TrainConfig {
  double learning_rate = 0.04;
  double momentum = 0.9;
  double weight_decay = 1e-7;
  std::size_t batch_size = 4;  // clips per optimizer step
  std::size_t warmup_steps = 0;
  std::vector<double> milestones;  // fractional epochs
  double decay_factor = 0.1;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;
  bool eval_each_epoch = true;
  std::string eval_split = "eval";  // falls back to "train" when absent

  void validate() const;
};

/// Linear warmup over the first `warmup_steps` steps, then the base rate
/// scaled by decay_factor once per milestone reached. `epoch` is fractional.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, double epoch);

/// SGD with momentum and L2 weight decay folded into the gradient:
/// v = m*v + g + wd*p; p -= lr*v. Parameters without requires_grad are skipped.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParamStore<float>& params, double lr);

 private:
  double momentum_, weight_decay_;
  std::map<std::string, std::vector<float>> velocity_;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_map;  // NaN where not evaluated
  std::size_t steps = 0;
};

/// Per-clip training boxes: ground truth plus matching proposals.
std::vector<LabeledBox> training_boxes(const ClipSample& clip);
/// Inference boxes: proposals above the score threshold.
std::vector<ActorBox> inference_boxes(const ClipSample& clip);

/// Trains the backbone, tokenizer, encoder and short-term head. Throws
/// NumericError when the loss becomes non-finite.
TrainResult train_short(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                        const MetricsSink& sink = {});

/// Freezes everything except the long-term head and trains it against the
/// bank's windows.
TrainResult train_long(Model<float>& model, const Dataset& data, const Bank& bank,
                       const TrainConfig& cfg, const MetricsSink& sink = {});

struct EvalResult {
  MapReport report;
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> ground_truth;
};

/// Runs inference over one split. With a bank the long-term head is used.
EvalResult evaluate(const Model<float>& model, const Dataset& data, const std::string& split,
                    const Bank* bank = nullptr);

/// Consensus features for every clip of every video in `data`, from the
/// frozen short-term model on inference boxes.
Bank build_model_bank(const Model<float>& model, const Dataset& data, std::uint64_t config_hash,
                      std::vector<std::string>* warnings = nullptr);

}  // namespace mrsn
