#include "mrsn/mrse.hpp"

namespace mrsn {

void MrseConfig::validate() const {
  attention().validate();
  if (num_stacks < 1) throw ConfigError("mrse: num_stacks must be >= 1");
}

template <typename T>
MrseWeights<T> make_mrse(ParamStore<T>& store, const std::string& prefix, const MrseConfig& cfg,
                         Rng& rng) {
  cfg.validate();
  const AttentionConfig att = cfg.attention();
  MrseWeights<T> w;
  for (std::size_t s = 0; s < cfg.num_stacks; ++s) {
    const std::string sp = prefix + ".stack" + std::to_string(s);
    MrseStackWeights<T> stack;
    for (std::size_t k = 0; k < cfg.acre_layers; ++k) {
      stack.acre.push_back(make_encoder_layer(store, sp + ".acre" + std::to_string(k), att, rng));
    }
    for (std::size_t k = 0; k < cfg.aare_layers; ++k) {
      stack.aare.push_back(make_encoder_layer(store, sp + ".aare" + std::to_string(k), att, rng));
    }
    for (std::size_t k = 0; k < cfg.rse_layers; ++k) {
      const std::string lp = sp + ".rse" + std::to_string(k);
      RseLayerWeights<T> r;
      r.cross_x = make_attention(store, lp + ".mca_x", att.model_dim, rng);
      r.cross_y = make_attention(store, lp + ".mca_y", att.model_dim, rng);
      r.cross_x_norm = make_norm(store, lp + ".mca_x_norm", att.model_dim);
      r.cross_y_norm = make_norm(store, lp + ".mca_y_norm", att.model_dim);
      r.ffn_x = make_ffn(store, lp + ".ffn_x", att.model_dim, att.ffn_hidden, rng);
      r.ffn_y = make_ffn(store, lp + ".ffn_y", att.model_dim, att.ffn_hidden, rng);
      r.ffn_x_norm = make_norm(store, lp + ".ffn_x_norm", att.model_dim);
      r.ffn_y_norm = make_norm(store, lp + ".ffn_y_norm", att.model_dim);
      stack.rse.push_back(std::move(r));
    }
    w.stacks.push_back(std::move(stack));
  }
  return w;
}

template <typename T>
std::vector<Var<T>> acre_forward(const std::vector<Var<T>>& sequences,
                                 const std::vector<EncoderLayerWeights<T>>& layers,
                                 const AttentionConfig& cfg) {
  if (sequences.empty()) throw DataError("acre_forward: clip has no actors");
  std::vector<Var<T>> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    Var<T> x = seq;
    for (const auto& layer : layers) x = encoder_layer_postnorm(x, layer, cfg);
    out.push_back(std::move(x));
  }
  return out;
}

template <typename T>
Var<T> add_actor_positions(const Var<T>& actor_tokens, const std::vector<ActorBox>& boxes,
                           const GridSpec& grid, const Var<T>& grid_positions) {
  if (boxes.size() != actor_tokens.rows()) {
    throw DimensionError("add_actor_positions: " + std::to_string(boxes.size()) + " boxes for " +
                         std::to_string(actor_tokens.rows()) + " actor tokens");
  }
  const std::size_t side = grid.grid_side();
  std::vector<Var<T>> rows;
  rows.reserve(boxes.size());
  for (const auto& box : boxes) {
    const auto [i, j] = actor_position_index(box, grid);
    rows.push_back(ops::slice_rows(grid_positions, (j - 1) * side + (i - 1), 1));
  }
  return ops::add(actor_tokens, ops::concat_rows(rows));
}

template <typename T>
Var<T> aare_forward(const Var<T>& actor_tokens, const std::vector<EncoderLayerWeights<T>>& layers,
                    const AttentionConfig& cfg) {
  if (!actor_tokens.defined() || actor_tokens.value().empty()) {
    throw DataError("aare_forward: clip has no actors");
  }
  Var<T> y = actor_tokens;
  for (const auto& layer : layers) y = encoder_layer_postnorm(y, layer, cfg);
  return y;
}

template <typename T>
std::vector<RelationPair<T>> rse_forward(const std::vector<RelationPair<T>>& pairs,
                                         const std::vector<RseLayerWeights<T>>& layers,
                                         const AttentionConfig& cfg) {
  std::vector<RelationPair<T>> out = pairs;
  for (auto& pair : out) {
    for (const auto& layer : layers) {
      const Var<T> x_mid =
          ops::add(apply(layer.cross_x_norm, mca(pair.x, pair.y, layer.cross_x, cfg)), pair.x);
      const Var<T> y_mid =
          ops::add(apply(layer.cross_y_norm, mca(pair.y, pair.x, layer.cross_y, cfg)), pair.y);
      pair.x = ops::add(apply(layer.ffn_x_norm, ffn(x_mid, layer.ffn_x)), x_mid);
      pair.y = ops::add(apply(layer.ffn_y_norm, ffn(y_mid, layer.ffn_y)), y_mid);
    }
  }
  return out;
}

template <typename T>
std::vector<RelationPair<T>> mrse_forward(const MrseInput<T>& input, const MrseWeights<T>& weights,
                                          const MrseConfig& cfg, const GridSpec& grid,
                                          const Var<T>& grid_positions) {
  if (input.sequences.empty()) throw DataError("mrse_forward: clip has no actors");
  const AttentionConfig att = cfg.attention();

  std::vector<Var<T>> xs;
  xs.reserve(input.sequences.size());
  for (const auto& seq : input.sequences) xs.push_back(seq.joined());
  Var<T> y = cfg.actor_positions
                 ? add_actor_positions(input.actor_tokens, input.boxes, grid, grid_positions)
                 : input.actor_tokens;

  std::vector<RelationPair<T>> pairs;
  for (const auto& stack : weights.stacks) {
    xs = acre_forward(xs, stack.acre, att);
    y = aare_forward(y, stack.aare, att);
    pairs.clear();
    for (std::size_t n = 0; n < xs.size(); ++n) {
      pairs.push_back({xs[n], xs.size() == 1 ? y : ops::slice_rows(y, n, 1)});
    }
    pairs = rse_forward(pairs, stack.rse, att);
    std::vector<Var<T>> ys;
    for (std::size_t n = 0; n < pairs.size(); ++n) {
      xs[n] = pairs[n].x;
      ys.push_back(pairs[n].y);
    }
    y = ys.size() == 1 ? ys[0] : ops::concat_rows(ys);
  }
  return pairs;
}

#define MRSN_INSTANTIATE_MRSE(T)                                                              \
  template MrseWeights<T> make_mrse<T>(ParamStore<T>&, const std::string&, const MrseConfig&, \
                                       Rng&);                                                 \
  template std::vector<Var<T>> acre_forward<T>(const std::vector<Var<T>>&,                    \
                                               const std::vector<EncoderLayerWeights<T>>&,    \
                                               const AttentionConfig&);                       \
  template Var<T> add_actor_positions<T>(const Var<T>&, const std::vector<ActorBox>&,         \
                                         const GridSpec&, const Var<T>&);                     \
  template Var<T> aare_forward<T>(const Var<T>&, const std::vector<EncoderLayerWeights<T>>&,  \
                                  const AttentionConfig&);                                    \
  template std::vector<RelationPair<T>> rse_forward<T>(const std::vector<RelationPair<T>>&,   \
                                                       const std::vector<RseLayerWeights<T>>&, \
                                                       const AttentionConfig&);               \
  template std::vector<RelationPair<T>> mrse_forward<T>(const MrseInput<T>&,                  \
                                                        const MrseWeights<T>&,                \
                                                        const MrseConfig&, const GridSpec&,   \
                                                        const Var<T>&);

MRSN_INSTANTIATE_MRSE(float)
MRSN_INSTANTIATE_MRSE(double)

}  // namespace mrsn
