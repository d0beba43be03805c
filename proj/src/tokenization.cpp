#include "mrsn/tokenization.hpp"

#include <algorithm>
#include <cmath>

namespace mrsn {

void GridSpec::validate() const {
  if (pooled_side == 0 || patch_side == 0) throw ConfigError("grid: sides must be positive");
  if (pooled_side % patch_side != 0) {
    throw ConfigError("grid: patch side " + std::to_string(patch_side) +
                      " does not divide pooled side " + std::to_string(pooled_side));
  }
}

void ActorBox::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(x1) || !in_unit(y1) || !in_unit(x2) || !in_unit(y2) || x1 > x2 || y1 > y2) {
    throw RangeError("actor box must satisfy 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1");
  }
  if (!(score >= 0.0 && score <= 1.0)) throw RangeError("actor box score must be in [0, 1]");
}

template <typename T>
TokenizerWeights<T> make_tokenizer(ParamStore<T>& store, const std::string& prefix,
                                   const GridSpec& grid, std::size_t channels,
                                   std::size_t width, Rng& rng) {
  grid.validate();
  const std::size_t p = grid.patch_side;
  TokenizerWeights<T> w;
  w.patch_projection = make_linear(store, prefix + ".patch_proj", channels * p * p, width, rng);
  w.actor_projection =
      make_linear(store, prefix + ".actor_proj", channels * kRoiSide * kRoiSide, width, rng);
  w.actor_embedding = store.add(prefix + ".actor_embedding", init::normal<T>(rng, {1, width}, 0.02));
  w.context_positions =
      store.add(prefix + ".context_positions", init::normal<T>(rng, {grid.patch_count(), width}, 0.02));
  w.grid_positions =
      store.add(prefix + ".grid_positions", init::normal<T>(rng, {grid.patch_count(), width}, 0.02));
  return w;
}

template <typename T>
Var<T> pool_to_grid(const Var<T>& feature, const GridSpec& grid) {
  grid.validate();
  return ops::adaptive_avg_pool(feature, grid.pooled_side);
}

template <typename T>
Var<T> patch_embed(const Var<T>& pooled, const GridSpec& grid, const LinearWeights<T>& proj) {
  grid.validate();
  if (pooled.value().rank() != 3 || pooled.shape()[1] != grid.pooled_side) {
    throw DimensionError("patch_embed: expected C x " + std::to_string(grid.pooled_side) + " x " +
                         std::to_string(grid.pooled_side) + ", got " + shape_str(pooled.shape()));
  }
  return apply(proj, ops::patchify(pooled, grid.patch_side));
}

template <typename T>
Var<T> actor_embed(const Var<T>& roi, const LinearWeights<T>& proj) {
  const auto& s = roi.shape();
  if (s.size() != 3 || s[1] != kRoiSide || s[2] != kRoiSide) {
    throw DimensionError("actor_embed: RoI feature must be C x 7 x 7, got " + shape_str(s));
  }
  return apply(proj, ops::reshape(roi, {1, roi.value().size()}));
}

template <typename T>
TokenSequence<T> assemble_sequence(const Var<T>& actor_token, const Var<T>& context_tokens,
                                   const TokenizerWeights<T>& w, std::size_t actor_index) {
  TokenSequence<T> seq;
  seq.actor_token = ops::add(actor_token, w.actor_embedding);
  seq.context_tokens = ops::add(context_tokens, w.context_positions);
  seq.actor_index = actor_index;
  return seq;
}

std::pair<std::size_t, std::size_t> actor_position_index(const ActorBox& box, const GridSpec& grid) {
  box.validate();
  const auto side = static_cast<double>(grid.grid_side());
  auto cell = [side](double lo, double hi) {
    const double idx = std::ceil((lo + hi) / 2.0 * side);
    return static_cast<std::size_t>(std::clamp(idx, 1.0, side));
  };
  return {cell(box.x1, box.x2), cell(box.y1, box.y2)};
}

template <typename T>
Var<T> distance_embedding(int offset, const Var<T>& table, int window) {
  if (window < 0 || offset < -window || offset > window) {
    throw RangeError("distance offset " + std::to_string(offset) + " outside [-" +
                     std::to_string(window) + ", " + std::to_string(window) + "]");
  }
  if (table.rows() != static_cast<std::size_t>(2 * window + 1)) {
    throw DimensionError("distance table has " + std::to_string(table.rows()) +
                         " rows, window " + std::to_string(window) + " needs " +
                         std::to_string(2 * window + 1));
  }
  return ops::slice_rows(table, static_cast<std::size_t>(offset + window), 1);
}

#define MRSN_INSTANTIATE_TOKENIZATION(T)                                                      \
  template TokenizerWeights<T> make_tokenizer<T>(ParamStore<T>&, const std::string&,         \
                                                 const GridSpec&, std::size_t, std::size_t,  \
                                                 Rng&);                                      \
  template Var<T> pool_to_grid<T>(const Var<T>&, const GridSpec&);                           \
  template Var<T> patch_embed<T>(const Var<T>&, const GridSpec&, const LinearWeights<T>&);   \
  template Var<T> actor_embed<T>(const Var<T>&, const LinearWeights<T>&);                    \
  template TokenSequence<T> assemble_sequence<T>(const Var<T>&, const Var<T>&,               \
                                                 const TokenizerWeights<T>&, std::size_t);   \
  template Var<T> distance_embedding<T>(int, const Var<T>&, int);

MRSN_INSTANTIATE_TOKENIZATION(float)
MRSN_INSTANTIATE_TOKENIZATION(double)

}  // namespace mrsn
