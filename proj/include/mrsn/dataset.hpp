#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrsn/boxes.hpp"

namespace mrsn {

/// Synthetic relation classes.
enum SyntheticClass : std::size_t {
  kPoseClass = 0,        // readable from the actor's own RoI
  kNearObjectClass = 1,  // an object lies within the radius
  kNearActorClass = 2,   // another actor lies within the radius
  kJointClass = 3,       // both of the above
  kSyntheticClassCount = 4,
};

/// Feature-map channels written by the generator.
enum SyntheticChannel : std::size_t {
  kActorChannel = 0,
  kObjectChannel = 1,
  kPoseChannel = 2,
  kClutterChannel = 3,
  kSyntheticChannelCount = 4,
};

struct ClipSample {
  std::string video_id;
  std::int64_t keyframe_time_s = 0;
  std::string split = "train";
  DenseArray frames;  // T x C x H x W
  std::vector<LabeledBox> ground_truth;
  std::vector<ActorBox> proposals;

  std::string frame_id() const { return video_id + "@" + std::to_string(keyframe_time_s); }
};

struct VideoInfo {
  std::string video_id;
  double duration_s = 0;
  std::string split = "train";
};

struct Dataset {
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<VideoInfo> videos;
  std::vector<ClipSample> clips;

  std::vector<const ClipSample*> split(const std::string& name) const;
  const ClipSample* find(const std::string& video_id, std::int64_t t) const;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t num_videos = 10;
  double video_duration_s = 21;
  double eval_fraction = 0.0;   // trailing share of videos assigned to "eval"
  std::size_t map_side = 24;    // H = W
  std::size_t cells = 6;        // placement grid side
  std::size_t frames = 2;       // T
  std::size_t min_actors = 1;
  std::size_t max_actors = 3;
  std::size_t max_objects = 2;
  double radius_cells = 1.5;    // relation radius, in cell units
  double cluster_prob = 0.5;    // chance a new entity lands next to an existing one
  double noise = 0.1;
  double clutter = 0.02;        // per-pixel probability of a clutter speck
  bool temporal = false;        // layouts persist across the clips of a segment
  double segment_s = 6;
  double occlusion = 0.0;       // per-clip probability an object is not rendered
  double distractor_prob = 0.5; // chance of one low-score proposal per clip
};

/// Deterministic in spec (byte-identical arrays for a fixed seed).
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

std::vector<std::string> synthetic_class_names();

/// Manifest (manifest.json) plus one shape-prefixed little-endian float32
/// array file per clip under `dir`.
void save_dataset(const Dataset& dataset, const std::string& dir);

/// Applied to every clip's frames on load. Boxes are normalized, so a
/// transform that rescales H and W needs no box adjustment.
using FrameTransform = std::function<DenseArray(const DenseArray&)>;

Dataset load_dataset(const std::string& dir, const FrameTransform& transform = {});

/// Bilinear (half-pixel centers) resize of a T x C x H x W volume so that
/// min(H, W) == shorter_side, keeping the aspect ratio. Returns the input
/// unchanged when it already has that size; synthetic maps never need it.
DenseArray resize_shorter_side(const DenseArray& frames, std::size_t shorter_side);

std::string encode_array(const DenseArray& array);
DenseArray decode_array(std::string_view bytes);

}  // namespace mrsn
