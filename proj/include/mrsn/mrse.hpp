#pragma once

#include <vector>

#include "mrsn/attention.hpp"
#include "mrsn/tokenization.hpp"

namespace mrsn {

/// Multi-relation support encoder configuration. Zero layer counts switch a
/// sub-encoder off; `actor_positions` controls whether grid embeddings are
/// added to actor tokens before the actor-actor encoder.
struct MrseConfig {
  std::size_t model_dim = 512;
  std::size_t ffn_hidden = 1024;
  std::size_t heads = 8;
  std::size_t acre_layers = 1;
  std::size_t aare_layers = 1;
  std::size_t rse_layers = 1;
  std::size_t num_stacks = 1;
  bool actor_positions = true;

  AttentionConfig attention() const { return {model_dim, heads, ffn_hidden}; }
  void validate() const;
};

/// Per-actor relation streams: X holds the actor token in row 0 followed by
/// L context tokens; Y is the actor-actor relation token.
template <typename T>
struct RelationPair {
  Var<T> x;  // (L+1) x d
  Var<T> y;  // 1 x d
};

template <typename T>
struct RseLayerWeights {
  AttentionWeights<T> cross_x;  // queries X, keys Y
  AttentionWeights<T> cross_y;  // queries Y, keys X
  NormWeights<T> cross_x_norm, cross_y_norm;
  FeedForwardWeights<T> ffn_x, ffn_y;
  NormWeights<T> ffn_x_norm, ffn_y_norm;
};

template <typename T>
struct MrseStackWeights {
  std::vector<EncoderLayerWeights<T>> acre;
  std::vector<EncoderLayerWeights<T>> aare;
  std::vector<RseLayerWeights<T>> rse;
};

template <typename T>
struct MrseWeights {
  std::vector<MrseStackWeights<T>> stacks;
};

template <typename T>
MrseWeights<T> make_mrse(ParamStore<T>& store, const std::string& prefix, const MrseConfig& cfg,
                         Rng& rng);

/// Runs each actor's (L+1)-token sequence through the same encoder stack.
template <typename T>
std::vector<Var<T>> acre_forward(const std::vector<Var<T>>& sequences,
                                 const std::vector<EncoderLayerWeights<T>>& layers,
                                 const AttentionConfig& cfg);

/// Adds E_{i,j} for each actor's box center to the N x d actor tokens.
template <typename T>
Var<T> add_actor_positions(const Var<T>& actor_tokens, const std::vector<ActorBox>& boxes,
                           const GridSpec& grid, const Var<T>& grid_positions);

/// Joint self-attention over the N actor tokens.
template <typename T>
Var<T> aare_forward(const Var<T>& actor_tokens, const std::vector<EncoderLayerWeights<T>>& layers,
                    const AttentionConfig& cfg);

/// Bidirectional cross-attention between each actor's X and Y. Both
/// directions of a round read the previous round's X and Y.
template <typename T>
std::vector<RelationPair<T>> rse_forward(const std::vector<RelationPair<T>>& pairs,
                                         const std::vector<RseLayerWeights<T>>& layers,
                                         const AttentionConfig& cfg);

/// Embedded clip ready for the encoder.
template <typename T>
struct MrseInput {
  std::vector<TokenSequence<T>> sequences;  // one per actor
  Var<T> actor_tokens;                      // N x d raw actor tokens (no E_A)
  std::vector<ActorBox> boxes;
};

/// ACRE and AARE, then RSE, repeated per stack with per-stack weights.
template <typename T>
std::vector<RelationPair<T>> mrse_forward(const MrseInput<T>& input, const MrseWeights<T>& weights,
                                          const MrseConfig& cfg, const GridSpec& grid,
                                          const Var<T>& grid_positions);

}  // namespace mrsn
