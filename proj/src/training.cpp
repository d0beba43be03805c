#include "mrsn/training.hpp"

#include <cmath>
#include <numeric>

namespace mrsn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("lr must be a non-negative number");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must lie in (0, 1]");
  double prev = 0.0;
  for (double m : milestones) {
    if (!(m > prev) || m > static_cast<double>(epochs)) {
      throw ConfigError("milestones must be strictly increasing within (0, epochs]");
    }
    prev = m;
  }
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, double epoch) {
  double lr = cfg.learning_rate;
  if (step < cfg.warmup_steps) {
    lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  for (double m : cfg.milestones) {
    if (epoch >= m) lr *= cfg.decay_factor;
  }
  return lr;
}

void Sgd::step(ParamStore<float>& params, double lr) {
  for (auto& e : params.entries()) {
    auto& node = *e.var.node();
    if (!node.requires_grad) continue;
    auto& value = node.value;
    auto& v = velocity_[e.name];
    if (v.empty()) v.assign(value.size(), 0.0f);
    const bool has_grad = node.has_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = (has_grad ? node.grad[i] : 0.0f) + weight_decay_ * value[i];
      v[i] = static_cast<float>(momentum_ * v[i] + g);
      value[i] = static_cast<float>(value[i] - lr * v[i]);
    }
  }
}

std::vector<LabeledBox> training_boxes(const ClipSample& clip) {
  return filter_boxes(clip.proposals, clip.ground_truth, FilterMode::Train);
}

std::vector<ActorBox> inference_boxes(const ClipSample& clip) {
  std::vector<ActorBox> out;
  for (const auto& b : filter_boxes(clip.proposals, {}, FilterMode::Infer)) out.push_back(b.box);
  return out;
}

namespace {

std::vector<const ClipSample*> require_split(const Dataset& data, const std::string& name) {
  auto clips = data.split(name);
  if (clips.empty()) throw DataError("dataset has no clips in split '" + name + "'");
  return clips;
}

DenseArray target_matrix(const std::vector<LabeledBox>& boxes, std::size_t classes) {
  DenseArray out({boxes.size(), classes});
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    if (boxes[n].labels.size() != classes) {
      throw DataError("box label vector has " + std::to_string(boxes[n].labels.size()) +
                      " entries, model has " + std::to_string(classes) + " classes");
    }
    for (std::size_t c = 0; c < classes; ++c) out.at(n, c) = boxes[n].labels[c];
  }
  return out;
}

std::vector<ActorBox> plain_boxes(const std::vector<LabeledBox>& boxes) {
  std::vector<ActorBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(b.box);
  return out;
}

std::string eval_split_name(const Dataset& data, const TrainConfig& cfg) {
  return data.split(cfg.eval_split).empty() ? "train" : cfg.eval_split;
}

/// Shared epoch/batch loop. `batch_loss` builds the loss of a batch of clip
/// indices (or returns an empty Var when no clip has boxes).
template <typename LossFn, typename EvalFn>
TrainResult run_sgd(ParamStore<float>& params, std::size_t clip_count, const TrainConfig& cfg,
                    const std::string& phase, const MetricsSink& sink, LossFn batch_loss,
                    EvalFn eval_map) {
  cfg.validate();
  Rng rng(cfg.seed);
  Sgd sgd(cfg.momentum, cfg.weight_decay);
  const std::size_t per_epoch = (clip_count + cfg.batch_size - 1) / cfg.batch_size;
  TrainResult result;
  std::vector<std::size_t> order(clip_count);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = clip_count; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    for (std::size_t b = 0; b < per_epoch; ++b) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, clip_count);
      std::vector<std::size_t> batch(order.begin() + begin, order.begin() + end);

      params.zero_grad();
      Var<float> loss = batch_loss(batch);
      const double epoch_pos = static_cast<double>(result.steps) / static_cast<double>(per_epoch);
      const double lr = scheduled_lr(cfg, result.steps, epoch_pos);
      double loss_value = 0.0;
      if (loss.node()) {
        loss_value = loss.value()[0];
        if (!std::isfinite(loss_value)) {
          throw NumericError(phase + " training diverged: loss is " + std::to_string(loss_value) +
                             " at step " + std::to_string(result.steps));
        }
        backward(loss);
        sgd.step(params, lr);
      }
      result.step_losses.push_back(loss_value);
      if (sink) {
        sink({{"phase", phase}, {"step", result.steps}, {"epoch", epoch_pos}, {"loss", loss_value}, {"lr", lr}});
      }
      ++result.steps;
    }

    double map = std::nan("");
    if (cfg.eval_each_epoch) {
      map = eval_map();
      if (sink) sink({{"phase", phase}, {"epoch", epoch + 1}, {"map", map}});
    }
    result.epoch_map.push_back(map);
    if (cfg.max_steps && result.steps >= cfg.max_steps) break;
  }
  return result;
}

}  // namespace

TrainResult train_short(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                        const MetricsSink& sink) {
  const auto clips = require_split(data, "train");
  const std::size_t classes = model.config().num_classes;
  if (data.num_classes != classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(classes));
  }
  model.params().set_trainable(true);
  model.params().set_trainable("long_head", false);

  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    std::vector<Var<float>> logits;
    std::vector<LabeledBox> boxes;
    for (std::size_t idx : batch) {
      const ClipSample& clip = *clips[idx];
      auto kept = training_boxes(clip);
      if (kept.empty()) continue;
      logits.push_back(model.forward_short(clip.frames, plain_boxes(kept)).logits);
      boxes.insert(boxes.end(), kept.begin(), kept.end());
    }
    if (logits.empty()) return Var<float>();
    return ops::sigmoid_bce(ops::concat_rows(logits), target_matrix(boxes, classes));
  };
  const std::string split = eval_split_name(data, cfg);
  auto eval_map = [&] { return evaluate(model, data, split).report.mean_ap; };
  auto result = run_sgd(model.params(), clips.size(), cfg, "short", sink, batch_loss, eval_map);
  model.params().set_trainable(true);
  return result;
}

TrainResult train_long(Model<float>& model, const Dataset& data, const Bank& bank,
                       const TrainConfig& cfg, const MetricsSink& sink) {
  const auto clips = require_split(data, "train");
  const std::size_t classes = model.config().num_classes;
  if (bank.meta().model_dim != model.config().mrse.model_dim) {
    throw ConfigError("bank model_dim " + std::to_string(bank.meta().model_dim) +
                      " does not match checkpoint model_dim " + std::to_string(model.config().mrse.model_dim));
  }
  const int window = model.config().window;

  // The short-term path is frozen, so its features are computed once.
  struct Cached {
    DenseArray features;
    DenseArray targets;
    std::vector<SupportFeature> support;
  };
  std::vector<Cached> cache(clips.size());
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const ClipSample& clip = *clips[i];
      auto kept = training_boxes(clip);
      if (kept.empty()) continue;
      cache[i].features = model.forward_short(clip.frames, plain_boxes(kept)).features.value();
      cache[i].targets = target_matrix(kept, classes);
      cache[i].support = bank.window_query(clip.video_id, clip.keyframe_time_s, window);
    }
  }

  model.params().set_trainable(false);
  model.params().set_trainable("long_head", true);
  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    std::vector<Var<float>> logits;
    std::vector<float> targets;
    std::size_t rows = 0;
    for (std::size_t idx : batch) {
      const Cached& c = cache[idx];
      if (c.features.empty()) continue;
      logits.push_back(model.forward_long(Var<float>::constant(c.features), c.support));
      targets.insert(targets.end(), c.targets.data().begin(), c.targets.data().end());
      rows += c.targets.rows();
    }
    if (logits.empty()) return Var<float>();
    return ops::sigmoid_bce(ops::concat_rows(logits), DenseArray({rows, classes}, std::move(targets)));
  };
  const std::string split = eval_split_name(data, cfg);
  auto eval_map = [&] { return evaluate(model, data, split, &bank).report.mean_ap; };
  auto result = run_sgd(model.params(), clips.size(), cfg, "long", sink, batch_loss, eval_map);
  model.params().set_trainable(true);
  return result;
}

EvalResult evaluate(const Model<float>& model, const Dataset& data, const std::string& split,
                    const Bank* bank) {
  const std::size_t classes = model.config().num_classes;
  if (data.num_classes != classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(classes));
  }
  NoGradGuard no_grad;
  EvalResult out;
  for (const ClipSample* clip : require_split(data, split)) {
    const std::string frame = clip->frame_id();
    for (const auto& g : clip->ground_truth) {
      for (std::size_t c = 0; c < classes; ++c) {
        if (g.labels.at(c) > 0.5f) out.ground_truth.push_back({frame, g.box, c});
      }
    }
    const auto boxes = inference_boxes(*clip);
    if (boxes.empty()) continue;
    auto fwd = model.forward_short(clip->frames, boxes);
    Var<float> logits = fwd.logits;
    if (bank) {
      logits = model.forward_long(
          fwd.features, bank->window_query(clip->video_id, clip->keyframe_time_s, model.config().window));
    }
    for (std::size_t n = 0; n < boxes.size(); ++n) {
      const auto row = std::span<const float>(logits.value().ptr() + n * classes, classes);
      const auto probs = classify(row);
      for (std::size_t c = 0; c < classes; ++c) out.detections.push_back({frame, boxes[n], c, probs[c]});
    }
  }
  out.report = frame_map(out.detections, out.ground_truth, classes);
  return out;
}

Bank build_model_bank(const Model<float>& model, const Dataset& data, std::uint64_t config_hash,
                      std::vector<std::string>* warnings) {
  BankMeta meta{static_cast<std::uint32_t>(model.config().mrse.model_dim),
                static_cast<std::uint32_t>(model.config().window), config_hash};
  std::vector<VideoSource> sources;
  for (const auto& video : data.videos) {
    VideoSource src;
    src.video_id = video.video_id;
    src.duration_s = video.duration_s;
    src.features_at = [&model, &data, id = video.video_id](std::int64_t t) {
      std::vector<std::vector<float>> feats;
      const ClipSample* clip = data.find(id, t);
      if (!clip) return feats;
      const auto boxes = inference_boxes(*clip);
      if (boxes.empty()) return feats;
      NoGradGuard no_grad;
      const auto value = model.forward_short(clip->frames, boxes).features.value();
      const std::size_t width = value.cols();
      for (std::size_t n = 0; n < value.rows(); ++n) {
        feats.emplace_back(value.ptr() + n * width, value.ptr() + (n + 1) * width);
      }
      return feats;
    };
    sources.push_back(std::move(src));
  }
  return build_bank(sources, meta, warnings);
}

}  // namespace mrsn
