#include "mrsn/attention.hpp"

#include <cmath>
#include <vector>

namespace mrsn {

void AttentionConfig::validate() const {
  if (model_dim == 0 || heads == 0) throw ConfigError("attention: model_dim and heads must be positive");
  if (model_dim % heads != 0) {
    throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (ffn_hidden < 1) throw ConfigError("attention: ffn_hidden must be >= 1");
}

template <typename T>
LinearWeights<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                             std::size_t out, Rng& rng) {
  LinearWeights<T> w;
  w.weight = store.add(prefix + ".weight", init::uniform_fan_in<T>(rng, {in, out}, in));
  w.bias = store.add(prefix + ".bias", BasicArray<T>({out}));
  return w;
}

template <typename T>
NormWeights<T> make_norm(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
  return {store.add(prefix + ".gain", BasicArray<T>({width}, T(1))),
          store.add(prefix + ".shift", BasicArray<T>({width}))};
}

template <typename T>
AttentionWeights<T> make_attention(ParamStore<T>& store, const std::string& prefix,
                                   std::size_t width, Rng& rng) {
  AttentionWeights<T> w;
  w.query = store.add(prefix + ".wq", init::uniform_fan_in<T>(rng, {width, width}, width));
  w.key = store.add(prefix + ".wk", init::uniform_fan_in<T>(rng, {width, width}, width));
  w.value = store.add(prefix + ".wv", init::uniform_fan_in<T>(rng, {width, width}, width));
  w.output = store.add(prefix + ".wo", init::uniform_fan_in<T>(rng, {width, width}, width));
  return w;
}

template <typename T>
FeedForwardWeights<T> make_ffn(ParamStore<T>& store, const std::string& prefix,
                               std::size_t width, std::size_t hidden, Rng& rng) {
  return {make_linear(store, prefix + ".expand", width, hidden, rng),
          make_linear(store, prefix + ".contract", hidden, width, rng)};
}

template <typename T>
EncoderLayerWeights<T> make_encoder_layer(ParamStore<T>& store, const std::string& prefix,
                                          const AttentionConfig& cfg, Rng& rng) {
  EncoderLayerWeights<T> w;
  w.attention = make_attention(store, prefix + ".msa", cfg.model_dim, rng);
  w.attention_norm = make_norm(store, prefix + ".msa_norm", cfg.model_dim);
  w.ffn = make_ffn(store, prefix + ".ffn", cfg.model_dim, cfg.ffn_hidden, rng);
  w.ffn_norm = make_norm(store, prefix + ".ffn_norm", cfg.model_dim);
  return w;
}

template <typename T>
Var<T> mca(const Var<T>& x, const Var<T>& y, const AttentionWeights<T>& w,
           const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  if (x.cols() != d || y.cols() != d) {
    throw DimensionError("mca: inputs " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                         " must both have width " + std::to_string(d));
  }
  if (y.value().empty()) throw DimensionError("mca: empty key set");
  const std::size_t dk = cfg.head_dim();
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

  const Var<T> q = ops::matmul(x, w.query);
  const Var<T> k = ops::matmul(y, w.key);
  const Var<T> v = ops::matmul(y, w.value);

  std::vector<Var<T>> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto qh = ops::slice_cols(q, h * dk, dk);
    const auto kh = ops::slice_cols(k, h * dk, dk);
    const auto vh = ops::slice_cols(v, h * dk, dk);
    const auto weights = ops::softmax_rows(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_dk));
    heads.push_back(ops::matmul(weights, vh));
  }
  const Var<T> joined = cfg.heads == 1 ? heads[0] : ops::concat_cols(heads);
  return ops::matmul(joined, w.output);
}

template <typename T>
Var<T> msa(const Var<T>& x, const AttentionWeights<T>& w, const AttentionConfig& cfg) {
  return mca(x, x, w, cfg);
}

template <typename T>
Var<T> ffn(const Var<T>& x, const FeedForwardWeights<T>& w) {
  return apply(w.contract, ops::gelu(apply(w.expand, x)));
}

template <typename T>
Var<T> encoder_layer_postnorm(const Var<T>& x, const EncoderLayerWeights<T>& w,
                              const AttentionConfig& cfg) {
  const Var<T> mid = ops::add(apply(w.attention_norm, msa(x, w.attention, cfg)), x);
  return ops::add(apply(w.ffn_norm, ffn(mid, w.ffn)), mid);
}

#define MRSN_INSTANTIATE_ATTENTION(T)                                                        \
  template LinearWeights<T> make_linear<T>(ParamStore<T>&, const std::string&, std::size_t, \
                                           std::size_t, Rng&);                              \
  template NormWeights<T> make_norm<T>(ParamStore<T>&, const std::string&, std::size_t);    \
  template AttentionWeights<T> make_attention<T>(ParamStore<T>&, const std::string&,        \
                                                 std::size_t, Rng&);                        \
  template FeedForwardWeights<T> make_ffn<T>(ParamStore<T>&, const std::string&,            \
                                             std::size_t, std::size_t, Rng&);               \
  template EncoderLayerWeights<T> make_encoder_layer<T>(ParamStore<T>&, const std::string&, \
                                                        const AttentionConfig&, Rng&);      \
  template Var<T> mca<T>(const Var<T>&, const Var<T>&, const AttentionWeights<T>&,          \
                         const AttentionConfig&);                                           \
  template Var<T> msa<T>(const Var<T>&, const AttentionWeights<T>&, const AttentionConfig&); \
  template Var<T> ffn<T>(const Var<T>&, const FeedForwardWeights<T>&);                      \
  template Var<T> encoder_layer_postnorm<T>(const Var<T>&, const EncoderLayerWeights<T>&,   \
                                            const AttentionConfig&);

MRSN_INSTANTIATE_ATTENTION(float)
MRSN_INSTANTIATE_ATTENTION(double)

}  // namespace mrsn
