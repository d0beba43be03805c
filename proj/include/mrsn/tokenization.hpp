#pragma once

#include <utility>
#include <vector>

#include "mrsn/attention.hpp"

namespace mrsn {

/// Pooled side S, patch side p; grid side G = S/p and patch count L = G^2.
struct GridSpec {
  std::size_t pooled_side = 16;
  std::size_t patch_side = 2;

  std::size_t grid_side() const { return pooled_side / patch_side; }
  std::size_t patch_count() const { return grid_side() * grid_side(); }
  void validate() const;
};

/// Normalized actor box, corners in [0, 1]; x runs along feature-map
/// columns, y along rows (maps are stored C x H x W).
struct ActorBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 1.0;

  void validate() const;
  ops::NormalizedBox normalized() const { return {x1, y1, x2, y2}; }
};

/// One actor's embedded sequence: actor token followed by L context tokens.
template <typename T>
struct TokenSequence {
  Var<T> actor_token;     // 1 x d
  Var<T> context_tokens;  // L x d
  std::size_t actor_index = 0;

  std::size_t length() const { return 1 + context_tokens.rows(); }
  /// (L+1) x d with the actor token in row 0.
  Var<T> joined() const { return ops::concat_rows<T>({actor_token, context_tokens}); }
};

template <typename T>
struct TokenizerWeights {
  LinearWeights<T> patch_projection;  // C*p*p -> d
  LinearWeights<T> actor_projection;  // C*7*7 -> d
  Var<T> actor_embedding;             // 1 x d, E_A
  Var<T> context_positions;           // L x d, E_1..E_L
  Var<T> grid_positions;              // G^2 x d, E_{i,j} at row (j-1)*G + (i-1)
};

template <typename T>
TokenizerWeights<T> make_tokenizer(ParamStore<T>& store, const std::string& prefix,
                                   const GridSpec& grid, std::size_t channels,
                                   std::size_t width, Rng& rng);

inline constexpr std::size_t kRoiSide = 7;

/// Adaptive average pooling of a C x w x h map to C x S x S.
template <typename T>
Var<T> pool_to_grid(const Var<T>& feature, const GridSpec& grid);

/// L x d context tokens from a C x S x S map, row-major over the patch grid.
template <typename T>
Var<T> patch_embed(const Var<T>& pooled, const GridSpec& grid, const LinearWeights<T>& proj);

/// 1 x d actor token from a C x 7 x 7 RoI feature.
template <typename T>
Var<T> actor_embed(const Var<T>& roi, const LinearWeights<T>& proj);

/// Adds E_A to the actor token and E_i to context token i.
template <typename T>
TokenSequence<T> assemble_sequence(const Var<T>& actor_token, const Var<T>& context_tokens,
                                   const TokenizerWeights<T>& w, std::size_t actor_index);

/// 1-based (i, j) grid cell of the box center along x and y, clamped to [1, G].
std::pair<std::size_t, std::size_t> actor_position_index(const ActorBox& box, const GridSpec& grid);

/// Row of the distance table for a signed clip offset in [-window, window].
template <typename T>
Var<T> distance_embedding(int offset, const Var<T>& table, int window);

}  // namespace mrsn
