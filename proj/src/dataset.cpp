#include "mrsn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"

#include "mrsn/binary_io.hpp"
#include "mrsn/consensus.hpp"
#include "mrsn/params.hpp"

namespace mrsn {

namespace {

using json = nlohmann::json;

struct Entity {
  long cx = 0, cy = 0;
  bool actor = false;
  double pose = 1.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Entity> sample_layout(Rng& rng, const SyntheticSpec& spec) {
  const long cells = static_cast<long>(spec.cells);
  const std::size_t n_actors =
      spec.min_actors + rng.index(spec.max_actors - spec.min_actors + 1);
  const std::size_t n_objects = rng.index(spec.max_objects + 1);
  std::vector<Entity> out;
  auto occupied = [&](long x, long y) {
    return std::any_of(out.begin(), out.end(), [&](const Entity& e) { return e.cx == x && e.cy == y; });
  };
  auto place = [&](bool actor) {
    Entity e;
    e.actor = actor;
    bool placed = false;
    if (!out.empty() && rng.bernoulli(spec.cluster_prob)) {
      const Entity& anchor = out[rng.index(out.size())];
      std::vector<std::pair<long, long>> free;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long x = anchor.cx + dx, y = anchor.cy + dy;
          if ((dx || dy) && x >= 0 && y >= 0 && x < cells && y < cells && !occupied(x, y)) {
            free.emplace_back(x, y);
          }
        }
      if (!free.empty()) {
        std::tie(e.cx, e.cy) = free[rng.index(free.size())];
        placed = true;
      }
    }
    while (!placed) {
      e.cx = static_cast<long>(rng.index(spec.cells));
      e.cy = static_cast<long>(rng.index(spec.cells));
      placed = !occupied(e.cx, e.cy);
    }
    e.pose = rng.bernoulli(0.5) ? 1.0 : -1.0;
    out.push_back(e);
  };
  for (std::size_t i = 0; i < n_actors; ++i) place(true);
  for (std::size_t i = 0; i < n_objects; ++i) place(false);
  return out;
}

std::vector<float> relation_labels(const std::vector<Entity>& layout, std::size_t index,
                                   double radius) {
  const Entity& self = layout[index];
  bool near_object = false, near_actor = false;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (k == index) continue;
    const double dx = static_cast<double>(layout[k].cx - self.cx);
    const double dy = static_cast<double>(layout[k].cy - self.cy);
    if (std::sqrt(dx * dx + dy * dy) > radius) continue;
    (layout[k].actor ? near_actor : near_object) = true;
  }
  std::vector<float> labels(kSyntheticClassCount, 0.0f);
  labels[kPoseClass] = self.pose > 0 ? 1.0f : 0.0f;
  labels[kNearObjectClass] = near_object ? 1.0f : 0.0f;
  labels[kNearActorClass] = near_actor ? 1.0f : 0.0f;
  labels[kJointClass] = (near_object && near_actor) ? 1.0f : 0.0f;
  return labels;
}

ClipSample render_clip(Rng& rng, const SyntheticSpec& spec, const std::vector<Entity>& layout,
                       const std::string& video_id, std::int64_t t, const std::string& split) {
  const std::size_t side = spec.map_side;
  const std::size_t cell_px = side / spec.cells;
  const std::size_t C = kSyntheticChannelCount;
  ClipSample clip;
  clip.video_id = video_id;
  clip.keyframe_time_s = t;
  clip.split = split;
  clip.frames = DenseArray({spec.frames, C, side, side});

  std::vector<bool> visible(layout.size(), true);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (!layout[k].actor && spec.occlusion > 0) visible[k] = !rng.bernoulli(spec.occlusion);
  }

  const std::size_t lo = cell_px / 4, hi = cell_px - cell_px / 4;
  auto* data = clip.frames.ptr();
  for (std::size_t f = 0; f < spec.frames; ++f) {
    float* frame = data + f * C * side * side;
    for (std::size_t i = 0; i < C * side * side; ++i) {
      frame[i] = static_cast<float>(spec.noise * rng.normal());
    }
    float* clutter = frame + kClutterChannel * side * side;
    for (std::size_t i = 0; i < side * side; ++i) {
      if (rng.bernoulli(spec.clutter)) clutter[i] += 1.0f;
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
      if (!visible[k]) continue;
      const Entity& e = layout[k];
      for (std::size_t y = lo; y < hi; ++y)
        for (std::size_t x = lo; x < hi; ++x) {
          const std::size_t py = static_cast<std::size_t>(e.cy) * cell_px + y;
          const std::size_t px = static_cast<std::size_t>(e.cx) * cell_px + x;
          if (e.actor) {
            frame[(kActorChannel * side + py) * side + px] += 1.0f;
            frame[(kPoseChannel * side + py) * side + px] += static_cast<float>(e.pose);
          } else {
            frame[(kObjectChannel * side + py) * side + px] += 1.0f;
          }
        }
    }
  }

  const double cell = 1.0 / static_cast<double>(spec.cells);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const Entity& e = layout[k];
    if (!e.actor) continue;
    LabeledBox gt;
    gt.box = {e.cx * cell, e.cy * cell, (e.cx + 1) * cell, (e.cy + 1) * cell, 1.0};
    gt.labels = relation_labels(layout, k, spec.radius_cells);
    gt.ground_truth = true;
    clip.ground_truth.push_back(gt);

    ActorBox p = gt.box;
    auto jitter = [&](double v) { return std::clamp(v + 0.008 * rng.normal(), 0.0, 1.0); };
    p.x1 = jitter(p.x1);
    p.y1 = jitter(p.y1);
    p.x2 = std::max(jitter(p.x2), p.x1 + 0.25 * cell);
    p.y2 = std::max(jitter(p.y2), p.y1 + 0.25 * cell);
    p.x2 = std::min(p.x2, 1.0);
    p.y2 = std::min(p.y2, 1.0);
    p.score = rng.uniform(0.88, 1.0);
    clip.proposals.push_back(p);
  }
  if (rng.bernoulli(spec.distractor_prob)) {
    long cx = 0, cy = 0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      cx = static_cast<long>(rng.index(spec.cells));
      cy = static_cast<long>(rng.index(spec.cells));
      const bool taken = std::any_of(layout.begin(), layout.end(),
                                     [&](const Entity& e) { return e.cx == cx && e.cy == cy; });
      if (!taken) break;
    }
    clip.proposals.push_back({cx * cell, cy * cell, (cx + 1) * cell, (cy + 1) * cell,
                              rng.uniform(0.2, 0.8)});
  }
  return clip;
}

json box_json(const ActorBox& b) {
  return json{{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"score", b.score}};
}

ActorBox box_from_json(const json& j) {
  ActorBox b{j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
             j.at("y2").get<double>(), j.value("score", 1.0)};
  b.validate();
  return b;
}

}  // namespace

std::vector<std::string> synthetic_class_names() {
  return {"pose", "near_object", "near_actor", "joint"};
}

std::vector<const ClipSample*> Dataset::split(const std::string& name) const {
  std::vector<const ClipSample*> out;
  for (const auto& c : clips) {
    if (c.split == name) out.push_back(&c);
  }
  return out;
}

const ClipSample* Dataset::find(const std::string& video_id, std::int64_t t) const {
  for (const auto& c : clips) {
    if (c.video_id == video_id && c.keyframe_time_s == t) return &c;
  }
  return nullptr;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.cells == 0 || spec.map_side % spec.cells != 0 || spec.map_side / spec.cells < 2) {
    throw ConfigError("synthetic: map_side must be a multiple (>= 2x) of cells");
  }
  if (spec.min_actors < 1 || spec.max_actors < spec.min_actors) {
    throw ConfigError("synthetic: need 1 <= min_actors <= max_actors");
  }
  if (spec.max_actors + spec.max_objects > spec.cells * spec.cells) {
    throw ConfigError("synthetic: more entities than cells");
  }
  Dataset ds;
  ds.num_classes = kSyntheticClassCount;
  ds.class_names = synthetic_class_names();
  const auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(spec.num_videos) * (1.0 - spec.eval_fraction)));
  for (std::size_t v = 0; v < spec.num_videos; ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "vid%04zu", v);
    const std::string split = v < n_train ? "train" : "eval";
    ds.videos.push_back({name, spec.video_duration_s, split});
    Rng rng(mix_seed(spec.seed, v));
    std::vector<Entity> layout;
    for (std::int64_t t : clip_centers(spec.video_duration_s)) {
      const bool new_segment =
          layout.empty() || !spec.temporal ||
          (spec.segment_s > 0 && (t - 1) % static_cast<std::int64_t>(spec.segment_s) == 0);
      if (new_segment) layout = sample_layout(rng, spec);
      ds.clips.push_back(render_clip(rng, spec, layout, name, t, split));
    }
  }
  return ds;
}

std::string encode_array(const DenseArray& array) {
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(array.rank()));
  for (std::size_t d : array.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : array.data()) w.f32(v);
  return w.take();
}

DenseArray decode_array(std::string_view bytes) {
  io::ByteReader r(bytes);
  const std::uint32_t rank = r.u32();
  if (rank < 1 || rank > 4) throw DataError("array file: bad rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = r.f32();
  if (r.remaining() != 0) throw DataError("array file: trailing bytes");
  return DenseArray(std::move(shape), std::move(data));
}

DenseArray resize_shorter_side(const DenseArray& frames, std::size_t shorter_side) {
  if (frames.rank() != 4) throw DimensionError("resize: expected T x C x H x W frames");
  if (shorter_side == 0) throw ConfigError("resize: shorter side must be positive");
  const std::size_t t = frames.shape()[0], c = frames.shape()[1], h = frames.shape()[2], w = frames.shape()[3];
  const double scale = static_cast<double>(shorter_side) / static_cast<double>(std::min(h, w));
  const auto oh = h <= w ? shorter_side : static_cast<std::size_t>(std::lround(h * scale));
  const auto ow = w < h ? shorter_side : static_cast<std::size_t>(std::lround(w * scale));
  if (oh == h && ow == w) return frames;
  DenseArray out({t, c, oh, ow});
  // Source coordinate of an output pixel center, clamped to the valid range.
  auto source = [](std::size_t o, std::size_t in, std::size_t n_out, std::size_t& lo, std::size_t& hi, double& frac) {
    double x = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(n_out) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(x);
    hi = std::min(lo + 1, in - 1);
    frac = x - static_cast<double>(lo);
  };
  const float* src = frames.ptr();
  float* dst = out.ptr();
  for (std::size_t plane = 0; plane < t * c; ++plane) {
    const float* p = src + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      std::size_t y0, y1;
      double fy;
      source(y, h, oh, y0, y1, fy);
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t x0, x1;
        double fx;
        source(x, w, ow, x0, x1, fx);
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bottom = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        dst[(plane * oh + y) * ow + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "clips");
  json manifest;
  manifest["format"] = "mrsn-dataset";
  manifest["version"] = 1;
  manifest["num_classes"] = dataset.num_classes;
  manifest["class_names"] = dataset.class_names;
  manifest["videos"] = json::array();
  for (const auto& v : dataset.videos) {
    manifest["videos"].push_back({{"video_id", v.video_id}, {"duration_s", v.duration_s}, {"split", v.split}});
  }
  manifest["clips"] = json::array();
  for (const auto& c : dataset.clips) {
    const std::string rel = "clips/" + c.video_id + "_t" + std::to_string(c.keyframe_time_s) + ".f32";
    io::write_file((fs::path(dir) / rel).string(), encode_array(c.frames));
    json boxes = json::array();
    for (const auto& b : c.ground_truth) {
      json jb = box_json(b.box);
      jb["labels"] = b.labels;
      boxes.push_back(jb);
    }
    json proposals = json::array();
    for (const auto& p : c.proposals) proposals.push_back(box_json(p));
    manifest["clips"].push_back({{"video_id", c.video_id},
                                 {"time", c.keyframe_time_s},
                                 {"split", c.split},
                                 {"frames", rel},
                                 {"boxes", boxes},
                                 {"proposals", proposals}});
  }
  io::write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(1) + "\n");
}

Dataset load_dataset(const std::string& dir, const FrameTransform& transform) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  if (!fs::exists(manifest_path)) throw ConfigError("dataset not found: " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError("dataset manifest: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    if (manifest.at("format") != "mrsn-dataset") throw DataError("dataset manifest: unknown format");
    ds.num_classes = manifest.at("num_classes").get<std::size_t>();
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    for (const auto& v : manifest.at("videos")) {
      ds.videos.push_back({v.at("video_id").get<std::string>(), v.at("duration_s").get<double>(),
                           v.at("split").get<std::string>()});
    }
    for (const auto& jc : manifest.at("clips")) {
      ClipSample c;
      c.video_id = jc.at("video_id").get<std::string>();
      c.keyframe_time_s = jc.at("time").get<std::int64_t>();
      c.split = jc.at("split").get<std::string>();
      c.frames = decode_array(io::read_file((fs::path(dir) / jc.at("frames").get<std::string>()).string()));
      if (transform) c.frames = transform(c.frames);
      for (const auto& jb : jc.at("boxes")) {
        LabeledBox b;
        b.box = box_from_json(jb);
        b.labels = jb.at("labels").get<std::vector<float>>();
        b.ground_truth = true;
        if (b.labels.size() != ds.num_classes) throw DataError("dataset: label vector has wrong length");
        for (float l : b.labels) {
          if (l != 0.0f && l != 1.0f) throw DataError("dataset: labels must be multi-hot");
        }
        c.ground_truth.push_back(std::move(b));
      }
      for (const auto& jp : jc.at("proposals")) c.proposals.push_back(box_from_json(jp));
      ds.clips.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw DataError("dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace mrsn
