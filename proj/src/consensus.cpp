#include "mrsn/consensus.hpp"

#include <cmath>

#include "mrsn/binary_io.hpp"

namespace mrsn {

namespace {
constexpr char kBankMagic[4] = {'M', 'R', 'L', 'B'};
constexpr std::uint32_t kBankVersion = 1;
}  // namespace

template <typename T>
MlpWeights<T> make_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                       std::size_t classes, Rng& rng) {
  return {make_linear(store, prefix + ".hidden", width, width, rng),
          make_linear(store, prefix + ".output", width, classes, rng)};
}

template <typename T>
Var<T> consensus_feature(const RelationPair<T>& pair) {
  const std::size_t rows = pair.x.rows();
  if (rows < 2) throw DimensionError("consensus_feature: X needs an actor row and context rows");
  const Var<T> actor = ops::slice_rows(pair.x, 0, 1);
  const Var<T> context = ops::mean_rows(pair.x, 1, rows - 1);
  return ops::concat_cols<T>({actor, context, pair.y});
}

template <typename T>
ShortConsensus<T> rcm_s(const RelationPair<T>& pair, const MlpWeights<T>& mlp) {
  ShortConsensus<T> out;
  out.feature = consensus_feature(pair);
  out.logits = apply(mlp, out.feature);
  return out;
}

template <typename T>
LongConsensusWeights<T> make_long_consensus(ParamStore<T>& store, const std::string& prefix,
                                            const LongConsensusConfig& cfg, std::size_t classes,
                                            Rng& rng) {
  cfg.attention().validate();
  LongConsensusWeights<T> w;
  w.attention = make_attention(store, prefix + ".mca", cfg.width, rng);
  w.norm = make_norm(store, prefix + ".norm", cfg.width);
  w.distance_table = store.add(prefix + ".distance_table",
                               init::normal<T>(rng, {cfg.table_rows(), cfg.width}, 0.02));
  w.mlp = make_mlp(store, prefix + ".mlp", cfg.width, classes, rng);
  return w;
}

template <typename T>
Var<T> rcm_l(const Var<T>& queries, const std::vector<SupportFeature>& support,
             const LongConsensusWeights<T>& w, const LongConsensusConfig& cfg) {
  const std::size_t width = cfg.width;
  if (queries.cols() != width) {
    throw DimensionError("rcm_l: queries " + shape_str(queries.shape()) + " must have width " +
                         std::to_string(width));
  }
  Var<T> keys;
  if (support.empty()) {
    const Var<T> self_offset = distance_embedding(0, w.distance_table, cfg.window);
    std::vector<Var<T>> rows(queries.rows(), self_offset);
    keys = ops::add(queries, rows.size() == 1 ? rows[0] : ops::concat_rows(rows));
  } else {
    BasicArray<T> bank({support.size(), width});
    std::vector<Var<T>> distance_rows;
    distance_rows.reserve(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
      const auto& f = support[i].feature;
      if (f.size() != width) {
        throw DimensionError("rcm_l: support feature of width " + std::to_string(f.size()) +
                             ", expected " + std::to_string(width));
      }
      for (std::size_t j = 0; j < width; ++j) bank[i * width + j] = static_cast<T>(f[j]);
      distance_rows.push_back(distance_embedding(support[i].offset, w.distance_table, cfg.window));
    }
    const Var<T> distances =
        distance_rows.size() == 1 ? distance_rows[0] : ops::concat_rows(distance_rows);
    keys = ops::add(Var<T>::constant(std::move(bank)), distances);
  }
  const Var<T> attended = mca(queries, keys, w.attention, cfg.attention());
  return apply(w.mlp, ops::add(apply(w.norm, attended), queries));
}

std::vector<float> classify(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    out[i] = static_cast<float>(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
  return out;
}

bool Bank::has_video(const std::string& video_id) const {
  auto it = entries_.lower_bound({video_id, INT64_MIN});
  return it != entries_.end() && it->first.first == video_id;
}

void Bank::insert(BankEntry entry) {
  for (const auto& f : entry.features) {
    if (f.size() != meta_.feature_width()) {
      throw DataError("bank entry feature width " + std::to_string(f.size()) + ", expected " +
                      std::to_string(meta_.feature_width()));
    }
  }
  auto key = std::make_pair(entry.video_id, entry.clip_time_s);
  if (entries_.count(key)) {
    throw DataError("duplicate bank entry for " + entry.video_id + " at t=" +
                    std::to_string(entry.clip_time_s));
  }
  entries_.emplace(std::move(key), std::move(entry));
}

const BankEntry* Bank::find(const std::string& video_id, std::int64_t t) const {
  auto it = entries_.find({video_id, t});
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<const BankEntry*> Bank::entries() const {
  std::vector<const BankEntry*> out;
  out.reserve(entries_.size());
  for (const auto& [key, e] : entries_) out.push_back(&e);
  return out;
}

std::vector<const BankEntry*> Bank::video_entries(const std::string& video_id) const {
  std::vector<const BankEntry*> out;
  for (auto it = entries_.lower_bound({video_id, INT64_MIN});
       it != entries_.end() && it->first.first == video_id; ++it) {
    out.push_back(&it->second);
  }
  return out;
}

std::vector<SupportFeature> Bank::window_query(const std::string& video_id, std::int64_t t,
                                               int window) const {
  if (window < 0) throw RangeError("window_query: window must be >= 0");
  if (!has_video(video_id)) throw RangeError("window_query: video not in bank: " + video_id);
  std::vector<SupportFeature> out;
  const auto end = entries_.upper_bound({video_id, t + window});
  for (auto it = entries_.lower_bound({video_id, t - window}); it != end; ++it) {
    const int offset = static_cast<int>(it->first.second - t);
    for (const auto& f : it->second.features) out.push_back({offset, f});
  }
  return out;
}

std::string Bank::serialize() const {
  io::ByteWriter w;
  w.bytes(std::string_view(kBankMagic, 4));
  w.u32(kBankVersion);
  w.u32(meta_.model_dim);
  w.u32(meta_.window);
  w.u64(entries_.size());
  w.u64(meta_.config_hash);
  std::vector<std::uint64_t> offsets;
  offsets.reserve(entries_.size());
  for (const auto& [key, e] : entries_) {
    offsets.push_back(w.size());
    w.str(e.video_id);
    w.i64(e.clip_time_s);
    w.u32(static_cast<std::uint32_t>(e.features.size()));
    for (const auto& f : e.features)
      for (float v : f) w.f32(v);
  }
  const std::uint64_t index_at = w.size();
  for (auto off : offsets) w.u64(off);
  w.u64(index_at);
  return w.take();
}

Bank Bank::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != std::string_view(kBankMagic, 4)) throw DataError("bank: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kBankVersion) throw DataError("bank: unsupported version " + std::to_string(version));
  BankMeta meta;
  meta.model_dim = r.u32();
  meta.window = r.u32();
  const std::uint64_t count = r.u64();
  meta.config_hash = r.u64();
  Bank bank(meta);
  const std::size_t width = meta.feature_width();
  for (std::uint64_t i = 0; i < count; ++i) {
    BankEntry e;
    e.video_id = r.str();
    e.clip_time_s = r.i64();
    const std::uint32_t n = r.u32();
    if (static_cast<std::uint64_t>(n) * width * 4 > r.remaining()) throw DataError("bank: truncated entry");
    e.features.assign(n, std::vector<float>(width));
    for (auto& f : e.features)
      for (auto& v : f) v = r.f32();
    bank.insert(std::move(e));
  }
  // Index must agree with the entries just read.
  const std::size_t index_at = r.position();
  for (std::uint64_t i = 0; i < count; ++i) r.u64();
  if (r.u64() != index_at || r.remaining() != 0) throw DataError("bank: corrupt offset index");
  return bank;
}

std::optional<BankEntry> Bank::lookup(std::string_view bytes, const std::string& video_id,
                                      std::int64_t t) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != std::string_view(kBankMagic, 4)) throw DataError("bank: bad magic");
  if (r.u32() != kBankVersion) throw DataError("bank: unsupported version");
  const std::uint32_t model_dim = r.u32();
  r.u32();
  const std::uint64_t count = r.u64();
  const std::size_t width = 3 * static_cast<std::size_t>(model_dim);
  if (bytes.size() < 8) throw DataError("bank: truncated footer");
  io::ByteReader footer(bytes.substr(bytes.size() - 8));
  const std::uint64_t index_at = footer.u64();
  if (index_at > bytes.size() || (bytes.size() - 8 - index_at) / 8 != count) {
    throw DataError("bank: corrupt offset index");
  }
  auto offset_of = [&](std::uint64_t i) {
    io::ByteReader ir(bytes);
    ir.seek(index_at + 8 * i);
    return ir.u64();
  };
  const std::pair<std::string_view, std::int64_t> key{video_id, t};
  std::uint64_t lo = 0, hi = count;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    io::ByteReader er(bytes);
    er.seek(offset_of(mid));
    const std::string vid = er.str();
    const std::int64_t time = er.i64();
    const std::pair<std::string_view, std::int64_t> here{vid, time};
    if (here < key) {
      lo = mid + 1;
    } else if (key < here) {
      hi = mid;
    } else {
      BankEntry e{vid, time, {}};
      const std::uint32_t n = er.u32();
      if (static_cast<std::uint64_t>(n) * width * 4 > er.remaining()) throw DataError("bank: truncated entry");
      e.features.assign(n, std::vector<float>(width));
      for (auto& f : e.features)
        for (auto& v : f) v = er.f32();
      return e;
    }
  }
  return std::nullopt;
}

void Bank::save(const std::string& path) const { io::write_file(path, serialize()); }

Bank Bank::load(const std::string& path) {
  const std::string bytes = io::read_file(path);
  return deserialize(bytes);
}

std::vector<std::int64_t> clip_centers(double duration_s) {
  std::vector<std::int64_t> out;
  for (std::int64_t t = 1; static_cast<double>(t + 1) <= duration_s; ++t) out.push_back(t);
  return out;
}

Bank build_bank(const std::vector<VideoSource>& videos, const BankMeta& meta,
                std::vector<std::string>* warnings) {
  Bank bank(meta);
  for (const auto& video : videos) {
    const auto centers = clip_centers(video.duration_s);
    if (centers.empty() && warnings) {
      warnings->push_back("video " + video.video_id + " is shorter than one 2 s clip; skipped");
    }
    for (std::int64_t t : centers) {
      bank.insert({video.video_id, t, video.features_at(t)});
    }
  }
  if (bank.size() == 0 && warnings) warnings->push_back("bank is empty");
  return bank;
}

#define MRSN_INSTANTIATE_CONSENSUS(T)                                                          \
  template MlpWeights<T> make_mlp<T>(ParamStore<T>&, const std::string&, std::size_t,         \
                                     std::size_t, Rng&);                                      \
  template Var<T> consensus_feature<T>(const RelationPair<T>&);                                \
  template ShortConsensus<T> rcm_s<T>(const RelationPair<T>&, const MlpWeights<T>&);          \
  template LongConsensusWeights<T> make_long_consensus<T>(ParamStore<T>&, const std::string&, \
                                                          const LongConsensusConfig&,         \
                                                          std::size_t, Rng&);                 \
  template Var<T> rcm_l<T>(const Var<T>&, const std::vector<SupportFeature>&,                  \
                           const LongConsensusWeights<T>&, const LongConsensusConfig&);

MRSN_INSTANTIATE_CONSENSUS(float)
MRSN_INSTANTIATE_CONSENSUS(double)

}  // namespace mrsn
