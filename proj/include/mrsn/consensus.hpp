#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrsn/mrse.hpp"

namespace mrsn {

/// Two linear layers with GELU between; hidden width equals input width.
template <typename T>
struct MlpWeights {
  LinearWeights<T> hidden;
  LinearWeights<T> output;
};

template <typename T>
MlpWeights<T> make_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                       std::size_t classes, Rng& rng);

template <typename T>
Var<T> apply(const MlpWeights<T>& w, const Var<T>& x) {
  return apply(w.output, ops::gelu(apply(w.hidden, x)));
}

/// Concat(actor token, mean of context tokens, actor-actor token): 1 x 3d.
template <typename T>
Var<T> consensus_feature(const RelationPair<T>& pair);

template <typename T>
struct ShortConsensus {
  Var<T> feature;  // 1 x 3d
  Var<T> logits;   // 1 x classes
};

/// Short-term consensus for one actor: G and its multi-label logits.
template <typename T>
ShortConsensus<T> rcm_s(const RelationPair<T>& pair, const MlpWeights<T>& mlp);

struct LongConsensusConfig {
  std::size_t width = 1536;  // 3d
  std::size_t heads = 8;
  int window = 10;  // omega

  std::size_t table_rows() const { return static_cast<std::size_t>(2 * window + 1); }
  AttentionConfig attention() const { return {width, heads, width}; }
};

template <typename T>
struct LongConsensusWeights {
  AttentionWeights<T> attention;
  NormWeights<T> norm;
  Var<T> distance_table;  // (2*window+1) x width
  MlpWeights<T> mlp;
};

template <typename T>
LongConsensusWeights<T> make_long_consensus(ParamStore<T>& store, const std::string& prefix,
                                            const LongConsensusConfig& cfg, std::size_t classes,
                                            Rng& rng);

/// A bank feature tagged with its signed clip offset from the query clip.
struct SupportFeature {
  int offset = 0;
  std::vector<float> feature;
};

/// MLP(LN(MCA(G, H + E_dist)) + G). With an empty support set the clip's own
/// features act as support at offset 0.
template <typename T>
Var<T> rcm_l(const Var<T>& queries, const std::vector<SupportFeature>& support,
             const LongConsensusWeights<T>& w, const LongConsensusConfig& cfg);

/// Element-wise sigmoid of logits; classes are independent.
std::vector<float> classify(std::span<const float> logits);

struct BankEntry {
  std::string video_id;
  std::int64_t clip_time_s = 0;
  std::vector<std::vector<float>> features;  // one per retained actor box
};

struct BankMeta {
  std::uint32_t model_dim = 0;
  std::uint32_t window = 0;
  std::uint64_t config_hash = 0;

  std::size_t feature_width() const { return 3 * static_cast<std::size_t>(model_dim); }
  friend bool operator==(const BankMeta&, const BankMeta&) = default;
};

/// Long-term relation bank: per-clip consensus features keyed by
/// (video, clip time). Write-once, then read-only.
class Bank {
 public:
  Bank() = default;
  explicit Bank(BankMeta meta) : meta_(meta) {}

  const BankMeta& meta() const { return meta_; }
  std::size_t size() const { return entries_.size(); }
  bool has_video(const std::string& video_id) const;

  /// Throws DataError for a repeated (video, time) key or a feature of the
  /// wrong width.
  void insert(BankEntry entry);
  const BankEntry* find(const std::string& video_id, std::int64_t t) const;
  std::vector<const BankEntry*> entries() const;
  std::vector<const BankEntry*> video_entries(const std::string& video_id) const;

  /// All features of clips in [t - window, t + window], sorted by time.
  /// Throws RangeError when the video is absent.
  std::vector<SupportFeature> window_query(const std::string& video_id, std::int64_t t,
                                           int window) const;

  std::string serialize() const;
  static Bank deserialize(std::string_view bytes);
  /// Binary search over the serialized offset index without decoding the
  /// whole file.
  static std::optional<BankEntry> lookup(std::string_view bytes, const std::string& video_id,
                                         std::int64_t t);
  void save(const std::string& path) const;
  static Bank load(const std::string& path);

 private:
  BankMeta meta_;
  std::map<std::pair<std::string, std::int64_t>, BankEntry> entries_;
};

/// Clip centers (integer seconds) whose 2 s window fits inside the video.
std::vector<std::int64_t> clip_centers(double duration_s);

struct VideoSource {
  std::string video_id;
  double duration_s = 0;
  /// Consensus features of the retained boxes of the clip centered at t.
  std::function<std::vector<std::vector<float>>(std::int64_t t)> features_at;
};

/// Runs the frozen extractor over every clip of every video. Videos too
/// short for a single clip contribute nothing and add a warning.
Bank build_bank(const std::vector<VideoSource>& videos, const BankMeta& meta,
                std::vector<std::string>* warnings = nullptr);

}  // namespace mrsn
