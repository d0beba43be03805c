#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrsn/boxes.hpp"
#include "mrsn/consensus.hpp"

namespace mrsn {

/// Stand-in backbone: per frame conv -> GELU -> conv, then mean over time.
/// When disabled the clip is only averaged over time.
struct BackboneConfig {
  bool enabled = true;
  std::size_t in_channels = 4;
  std::size_t hidden_channels = 8;
  std::size_t out_channels = 8;
  std::size_t kernel = 3;

  std::size_t feature_channels() const { return enabled ? out_channels : in_channels; }
};

struct ModelConfig {
  BackboneConfig backbone;
  GridSpec grid;
  MrseConfig mrse;
  std::size_t long_heads = 8;
  int window = 10;
  std::size_t num_classes = 4;

  LongConsensusConfig long_term() const { return {3 * mrse.model_dim, long_heads, window}; }
  std::size_t feature_width() const { return 3 * mrse.model_dim; }
  void validate() const;
};

template <typename T>
struct BackboneWeights {
  Var<T> conv1_weight, conv1_bias, conv2_weight, conv2_bias;
};

template <typename T>
BackboneWeights<T> make_backbone(ParamStore<T>& store, const std::string& prefix,
                                 const BackboneConfig& cfg, Rng& rng);

/// frames: T x C_in x H x W -> C x H x W.
template <typename T>
Var<T> toy_backbone(const Var<T>& frames, const BackboneWeights<T>& w, const BackboneConfig& cfg);

template <typename T>
struct ClipForward {
  std::vector<RelationPair<T>> pairs;
  Var<T> features;  // N x 3d consensus features
  Var<T> logits;    // N x classes
};

/// The full network: backbone, tokenizer, stacked encoder, short-term and
/// long-term consensus heads. Parameter names are prefixed by component
/// ("backbone.", "tokenizer.", "mrse.", "short_head.", "long_head.").
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Var<T> feature_map(const BasicArray<T>& frames) const;
  MrseInput<T> tokenize(const Var<T>& feature, const std::vector<ActorBox>& boxes) const;
  std::vector<RelationPair<T>> encode(const MrseInput<T>& input) const;

  /// Short-term path for one clip. `boxes` must be non-empty.
  ClipForward<T> forward_short(const BasicArray<T>& frames, const std::vector<ActorBox>& boxes) const;
  /// Long-term head over consensus features of one clip and its support.
  Var<T> forward_long(const Var<T>& features, const std::vector<SupportFeature>& support) const;

  const TokenizerWeights<T>& tokenizer() const { return tokenizer_; }
  const MrseWeights<T>& mrse() const { return mrse_; }
  const MlpWeights<T>& short_head() const { return short_head_; }
  const LongConsensusWeights<T>& long_head() const { return long_head_; }

  /// Copies values by name; names and shapes must match exactly.
  void load_state(const std::map<std::string, DenseArray>& state);
  std::map<std::string, DenseArray> state() const;

 private:
  ModelConfig config_;
  ParamStore<T> params_;
  BackboneWeights<T> backbone_;
  TokenizerWeights<T> tokenizer_;
  MrseWeights<T> mrse_;
  MlpWeights<T> short_head_;
  LongConsensusWeights<T> long_head_;
};

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, DenseArray> params;
  std::vector<std::string> order;  // record order in the file
};

/// Header ("MRSN", version, config JSON) then one record per parameter:
/// name, rank, dims, little-endian float32 values.
std::string encode_checkpoint(const ModelConfig& config, const ParamStore<float>& params);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore<float>& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mrsn
