#include "mrsn/config.hpp"

#include <set>

#include "mrsn/binary_io.hpp"

namespace mrsn {

namespace {

using nlohmann::json;

/// Reads known keys from one JSON object and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where_);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& cfg) {
  return {
      {"backbone",
       {{"enabled", cfg.backbone.enabled},
        {"in_channels", cfg.backbone.in_channels},
        {"hidden_channels", cfg.backbone.hidden_channels},
        {"out_channels", cfg.backbone.out_channels},
        {"kernel", cfg.backbone.kernel}}},
      {"grid", {{"pooled_side", cfg.grid.pooled_side}, {"patch_side", cfg.grid.patch_side}}},
      {"mrse",
       {{"model_dim", cfg.mrse.model_dim},
        {"ffn_hidden", cfg.mrse.ffn_hidden},
        {"heads", cfg.mrse.heads},
        {"acre_layers", cfg.mrse.acre_layers},
        {"aare_layers", cfg.mrse.aare_layers},
        {"rse_layers", cfg.mrse.rse_layers},
        {"num_stacks", cfg.mrse.num_stacks},
        {"actor_positions", cfg.mrse.actor_positions}}},
      {"long_heads", cfg.long_heads},
      {"window", cfg.window},
      {"num_classes", cfg.num_classes},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  StrictObject top(j, "model");
  if (const json* b = top.child("backbone")) {
    StrictObject o(*b, "model.backbone");
    o.read("enabled", cfg.backbone.enabled);
    o.read("in_channels", cfg.backbone.in_channels);
    o.read("hidden_channels", cfg.backbone.hidden_channels);
    o.read("out_channels", cfg.backbone.out_channels);
    o.read("kernel", cfg.backbone.kernel);
    o.finish();
  }
  if (const json* g = top.child("grid")) {
    StrictObject o(*g, "model.grid");
    o.read("pooled_side", cfg.grid.pooled_side);
    o.read("patch_side", cfg.grid.patch_side);
    o.finish();
  }
  if (const json* m = top.child("mrse")) {
    StrictObject o(*m, "model.mrse");
    o.read("model_dim", cfg.mrse.model_dim);
    o.read("ffn_hidden", cfg.mrse.ffn_hidden);
    o.read("heads", cfg.mrse.heads);
    o.read("acre_layers", cfg.mrse.acre_layers);
    o.read("aare_layers", cfg.mrse.aare_layers);
    o.read("rse_layers", cfg.mrse.rse_layers);
    o.read("num_stacks", cfg.mrse.num_stacks);
    o.read("actor_positions", cfg.mrse.actor_positions);
    o.finish();
  }
  top.read("long_heads", cfg.long_heads);
  top.read("window", cfg.window);
  top.read("num_classes", cfg.num_classes);
  top.finish();
  cfg.validate();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},
          {"warmup_steps", cfg.warmup_steps},
          {"milestones", cfg.milestones},
          {"decay_factor", cfg.decay_factor},
          {"epochs", cfg.epochs},
          {"max_steps", cfg.max_steps},
          {"seed", cfg.seed},
          {"eval_each_epoch", cfg.eval_each_epoch},
          {"eval_split", cfg.eval_split}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  StrictObject o(j, "train");
  o.read("lr", cfg.learning_rate);
  o.read("momentum", cfg.momentum);
  o.read("weight_decay", cfg.weight_decay);
  o.read("batch_size", cfg.batch_size);
  o.read("warmup_steps", cfg.warmup_steps);
  o.read("milestones", cfg.milestones);
  o.read("decay_factor", cfg.decay_factor);
  o.read("epochs", cfg.epochs);
  o.read("max_steps", cfg.max_steps);
  o.read("seed", cfg.seed);
  o.read("eval_each_epoch", cfg.eval_each_epoch);
  o.read("eval_split", cfg.eval_split);
  o.finish();
  cfg.validate();
  return cfg;
}

json to_json(const SyntheticSpec& s) {
  return {{"seed", s.seed},
          {"num_videos", s.num_videos},
          {"video_duration_s", s.video_duration_s},
          {"eval_fraction", s.eval_fraction},
          {"map_side", s.map_side},
          {"cells", s.cells},
          {"frames", s.frames},
          {"min_actors", s.min_actors},
          {"max_actors", s.max_actors},
          {"max_objects", s.max_objects},
          {"radius_cells", s.radius_cells},
          {"cluster_prob", s.cluster_prob},
          {"noise", s.noise},
          {"clutter", s.clutter},
          {"temporal", s.temporal},
          {"segment_s", s.segment_s},
          {"occlusion", s.occlusion},
          {"distractor_prob", s.distractor_prob}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  StrictObject o(j, "data");
  o.read("seed", s.seed);
  o.read("num_videos", s.num_videos);
  o.read("video_duration_s", s.video_duration_s);
  o.read("eval_fraction", s.eval_fraction);
  o.read("map_side", s.map_side);
  o.read("cells", s.cells);
  o.read("frames", s.frames);
  o.read("min_actors", s.min_actors);
  o.read("max_actors", s.max_actors);
  o.read("max_objects", s.max_objects);
  o.read("radius_cells", s.radius_cells);
  o.read("cluster_prob", s.cluster_prob);
  o.read("noise", s.noise);
  o.read("clutter", s.clutter);
  o.read("temporal", s.temporal);
  o.read("segment_s", s.segment_s);
  o.read("occlusion", s.occlusion);
  o.read("distractor_prob", s.distractor_prob);
  o.finish();
  return s;
}

std::uint64_t config_hash(const ModelConfig& cfg) { return io::fnv1a(to_json(cfg).dump()); }

}  // namespace mrsn
