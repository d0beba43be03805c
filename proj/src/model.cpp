#include "mrsn/model.hpp"

#include "mrsn/binary_io.hpp"
#include "mrsn/config.hpp"

namespace mrsn {

namespace {
constexpr char kCheckpointMagic[4] = {'M', 'R', 'S', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void ModelConfig::validate() const {
  grid.validate();
  mrse.validate();
  if (backbone.enabled) {
    if (backbone.in_channels == 0 || backbone.hidden_channels == 0 || backbone.out_channels == 0) {
      throw ConfigError("backbone channel counts must be positive");
    }
    if (backbone.kernel % 2 == 0) throw ConfigError("backbone kernel must be odd");
  } else if (backbone.in_channels == 0) {
    throw ConfigError("backbone in_channels must be positive");
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (window < 0) throw ConfigError("window must be non-negative");
  long_term().attention().validate();
}

template <typename T>
BackboneWeights<T> make_backbone(ParamStore<T>& store, const std::string& prefix,
                                 const BackboneConfig& cfg, Rng& rng) {
  BackboneWeights<T> w;
  if (!cfg.enabled) return w;
  const std::size_t k = cfg.kernel;
  w.conv1_weight = store.add(prefix + ".conv1.weight",
                             init::uniform_fan_in<T>(rng, {cfg.hidden_channels, cfg.in_channels, k, k},
                                                     cfg.in_channels * k * k));
  w.conv1_bias = store.add(prefix + ".conv1.bias", BasicArray<T>({cfg.hidden_channels}));
  w.conv2_weight = store.add(prefix + ".conv2.weight",
                             init::uniform_fan_in<T>(rng, {cfg.out_channels, cfg.hidden_channels, k, k},
                                                     cfg.hidden_channels * k * k));
  w.conv2_bias = store.add(prefix + ".conv2.bias", BasicArray<T>({cfg.out_channels}));
  return w;
}

template <typename T>
Var<T> toy_backbone(const Var<T>& frames, const BackboneWeights<T>& w, const BackboneConfig& cfg) {
  if (frames.value().rank() != 4) {
    throw DimensionError("toy_backbone: expected T x C x H x W frames, got " + shape_str(frames.shape()));
  }
  const Shape& s = frames.shape();
  if (s[1] != cfg.in_channels) {
    throw DimensionError("toy_backbone: frames have " + std::to_string(s[1]) +
                         " channels, backbone expects " + std::to_string(cfg.in_channels));
  }
  if (!cfg.enabled) return ops::mean_leading(frames);

  const std::size_t t_count = s[0], c = s[1], h = s[2], wd = s[3];
  const Var<T> flat = ops::reshape(frames, {t_count, c * h * wd});
  std::vector<Var<T>> per_frame;
  per_frame.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    Var<T> x = ops::reshape(ops::slice_rows(flat, t, 1), {c, h, wd});
    x = ops::gelu(ops::conv2d(x, w.conv1_weight, w.conv1_bias));
    x = ops::conv2d(x, w.conv2_weight, w.conv2_bias);
    per_frame.push_back(ops::reshape(x, {1, cfg.out_channels * h * wd}));
  }
  const Var<T> stacked = ops::concat_rows(per_frame);
  return ops::reshape(ops::mean_rows(stacked, 0, t_count), {cfg.out_channels, h, wd});
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.mrse.model_dim;
  backbone_ = make_backbone(params_, "backbone", config_.backbone, rng);
  tokenizer_ = make_tokenizer(params_, "tokenizer", config_.grid, config_.backbone.feature_channels(), d, rng);
  mrse_ = make_mrse(params_, "mrse", config_.mrse, rng);
  short_head_ = make_mlp(params_, "short_head", config_.feature_width(), config_.num_classes, rng);
  long_head_ = make_long_consensus(params_, "long_head", config_.long_term(), config_.num_classes, rng);
}

template <typename T>
Var<T> Model<T>::feature_map(const BasicArray<T>& frames) const {
  return toy_backbone(Var<T>::constant(frames), backbone_, config_.backbone);
}

template <typename T>
MrseInput<T> Model<T>::tokenize(const Var<T>& feature, const std::vector<ActorBox>& boxes) const {
  if (boxes.empty()) throw DataError("tokenize: clip has no actor boxes");
  MrseInput<T> input;
  input.boxes = boxes;
  const Var<T> pooled = pool_to_grid(feature, config_.grid);
  const Var<T> context = patch_embed(pooled, config_.grid, tokenizer_.patch_projection);
  std::vector<Var<T>> raw;
  raw.reserve(boxes.size());
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    boxes[n].validate();
    const Var<T> roi = ops::roi_align(feature, boxes[n].normalized(), kRoiSide, 2);
    const Var<T> token = actor_embed(roi, tokenizer_.actor_projection);
    raw.push_back(token);
    input.sequences.push_back(assemble_sequence(token, context, tokenizer_, n));
  }
  input.actor_tokens = ops::concat_rows(raw);
  return input;
}

template <typename T>
std::vector<RelationPair<T>> Model<T>::encode(const MrseInput<T>& input) const {
  return mrse_forward(input, mrse_, config_.mrse, config_.grid, tokenizer_.grid_positions);
}

template <typename T>
ClipForward<T> Model<T>::forward_short(const BasicArray<T>& frames,
                                       const std::vector<ActorBox>& boxes) const {
  ClipForward<T> out;
  out.pairs = encode(tokenize(feature_map(frames), boxes));
  std::vector<Var<T>> features, logits;
  for (const auto& pair : out.pairs) {
    auto s = rcm_s(pair, short_head_);
    features.push_back(s.feature);
    logits.push_back(s.logits);
  }
  out.features = ops::concat_rows(features);
  out.logits = ops::concat_rows(logits);
  return out;
}

template <typename T>
Var<T> Model<T>::forward_long(const Var<T>& features, const std::vector<SupportFeature>& support) const {
  return rcm_l(features, support, long_head_, config_.long_term());
}

template <typename T>
void Model<T>::load_state(const std::map<std::string, DenseArray>& state) {
  for (const auto& e : params_.entries()) {
    auto it = state.find(e.name);
    if (it == state.end()) throw ConfigError("checkpoint is missing parameter " + e.name);
    if (it->second.shape() != e.var.shape()) {
      throw ConfigError("parameter " + e.name + ": checkpoint has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(e.var.shape()));
    }
  }
  if (state.size() != params_.size()) {
    for (const auto& [name, value] : state) {
      if (!params_.contains(name)) throw ConfigError("checkpoint has unexpected parameter " + name);
    }
  }
  for (const auto& e : params_.entries()) params_.assign(e.name, state.at(e.name).template cast<T>());
}

template <typename T>
std::map<std::string, DenseArray> Model<T>::state() const {
  std::map<std::string, DenseArray> out;
  for (const auto& e : params_.entries()) out.emplace(e.name, e.var.value().template cast<float>());
  return out;
}

template class Model<float>;
template class Model<double>;
template BackboneWeights<float> make_backbone<float>(ParamStore<float>&, const std::string&,
                                                     const BackboneConfig&, Rng&);
template BackboneWeights<double> make_backbone<double>(ParamStore<double>&, const std::string&,
                                                       const BackboneConfig&, Rng&);
template Var<float> toy_backbone<float>(const Var<float>&, const BackboneWeights<float>&, const BackboneConfig&);
template Var<double> toy_backbone<double>(const Var<double>&, const BackboneWeights<double>&,
                                          const BackboneConfig&);

std::string encode_checkpoint(const ModelConfig& config, const ParamStore<float>& params) {
  io::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(to_json(config).dump());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    const auto& v = e.var.value();
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(v.rank()));
    for (std::size_t dim : v.shape()) w.u32(static_cast<std::uint32_t>(dim));
    for (float x : v.data()) w.f32(x);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw DataError("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) throw DataError("checkpoint parameter " + name + " has bad rank");
    Shape shape(rank);
    for (auto& dim : shape) {
      dim = r.u32();
      if (dim == 0) throw DataError("checkpoint parameter " + name + " has a zero dimension");
    }
    if (shape_numel(shape) > r.remaining() / 4) throw DataError("truncated checkpoint at " + name);
    DenseArray value(shape);
    for (auto& x : value.data()) x = r.f32();
    if (!ck.params.emplace(name, std::move(value)).second) {
      throw DataError("checkpoint repeats parameter " + name);
    }
    ck.order.push_back(std::move(name));
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore<float>& params) {
  io::write_file(path, encode_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace mrsn
