#pragma once

#include <string>

#include "mrsn/ops.hpp"
#include "mrsn/params.hpp"

namespace mrsn {

struct AttentionConfig {
  std::size_t model_dim = 512;
  std::size_t heads = 8;
  std::size_t ffn_hidden = 1024;

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;
};

template <typename T>
struct LinearWeights {
  Var<T> weight;  // in x out
  Var<T> bias;    // out
};

template <typename T>
struct NormWeights {
  Var<T> gain;
  Var<T> shift;
};

/// W^Q, W^K, W^V, W^O as d x d matrices; head i owns columns
/// [i*d_k, (i+1)*d_k) of the first three and rows of the same range of W^O.
template <typename T>
struct AttentionWeights {
  Var<T> query;
  Var<T> key;
  Var<T> value;
  Var<T> output;
};

template <typename T>
struct FeedForwardWeights {
  LinearWeights<T> expand;    // d -> hidden
  LinearWeights<T> contract;  // hidden -> d
};

template <typename T>
struct EncoderLayerWeights {
  AttentionWeights<T> attention;
  NormWeights<T> attention_norm;
  FeedForwardWeights<T> ffn;
  NormWeights<T> ffn_norm;
};

// Parameter factories: register under `prefix` with the standard init
// (uniform +-1/sqrt(fan_in) weights, zero biases, unit gains).
template <typename T>
LinearWeights<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                             std::size_t out, Rng& rng);
template <typename T>
NormWeights<T> make_norm(ParamStore<T>& store, const std::string& prefix, std::size_t width);
template <typename T>
AttentionWeights<T> make_attention(ParamStore<T>& store, const std::string& prefix,
                                   std::size_t width, Rng& rng);
template <typename T>
FeedForwardWeights<T> make_ffn(ParamStore<T>& store, const std::string& prefix,
                               std::size_t width, std::size_t hidden, Rng& rng);
template <typename T>
EncoderLayerWeights<T> make_encoder_layer(ParamStore<T>& store, const std::string& prefix,
                                          const AttentionConfig& cfg, Rng& rng);

template <typename T>
Var<T> apply(const LinearWeights<T>& w, const Var<T>& x) {
  return ops::linear(x, w.weight, w.bias);
}
template <typename T>
Var<T> apply(const NormWeights<T>& w, const Var<T>& x) {
  return ops::layer_norm(x, w.gain, w.shift);
}

/// Multi-head cross-attention: queries from x (n_q x d), keys/values from
/// y (n_k x d). Output is n_q x d.
template <typename T>
Var<T> mca(const Var<T>& x, const Var<T>& y, const AttentionWeights<T>& w,
           const AttentionConfig& cfg);

/// Multi-head self-attention, mca(x, x).
template <typename T>
Var<T> msa(const Var<T>& x, const AttentionWeights<T>& w, const AttentionConfig& cfg);

/// linear -> GELU -> linear.
template <typename T>
Var<T> ffn(const Var<T>& x, const FeedForwardWeights<T>& w);

/// x' = LN(MSA(x)) + x; out = LN(FFN(x')) + x'.
template <typename T>
Var<T> encoder_layer_postnorm(const Var<T>& x, const EncoderLayerWeights<T>& w,
                              const AttentionConfig& cfg);

}  // namespace mrsn
