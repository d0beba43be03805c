#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "mrsn/binary_io.hpp"
#include "mrsn/config.hpp"
#include "mrsn/training.hpp"
#include "mrsn/verify.hpp"

using namespace mrsn;
using testing::max_abs_diff;
using testing::random_array;

namespace {

ModelConfig small_model() {
  ModelConfig mc;
  mc.backbone = {true, 4, 6, 6, 3};
  mc.grid = {4, 2};
  mc.mrse.model_dim = 16;
  mc.mrse.heads = 2;
  mc.mrse.ffn_hidden = 32;
  mc.long_heads = 2;
  mc.window = 2;
  mc.num_classes = kSyntheticClassCount;
  return mc;
}

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.num_videos = 3;
  spec.video_duration_s = 5;
  spec.map_side = 16;
  spec.cells = 4;
  spec.eval_fraction = 0.34;
  return spec;
}

}  // namespace

// ---- roi_align --------------------------------------------------------------

TEST_CASE("roi_align: constant map gives the constant for any box") {
  DenseArray f({2, 9, 13}, 2.5f);
  for (const auto& b : std::vector<ops::NormalizedBox>{{0, 0, 1, 1}, {0.1, 0.3, 0.4, 0.9}, {0.5, 0.5, 0.52, 0.6}}) {
    const auto out = ops::roi_align(Var<float>::constant(f), b).value();
    CHECK(out.shape() == Shape{2, 7, 7});
    for (float v : out.data()) CHECK(v == doctest::Approx(2.5f).epsilon(1e-6));
  }
}

TEST_CASE("roi_align: linear ramp along x is reproduced at cell centers") {
  const std::size_t H = 12, W = 20;
  DenseArray f({1, H, W});
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) f.at(0, i, j) = static_cast<float>(j);
  }
  // Box interior to the pixel-center hull so no sample is clamped.
  const ops::NormalizedBox box{0.2, 0.25, 0.8, 0.75};
  const auto out = ops::roi_align(Var<float>::constant(f), box).value();
  const double x1 = box.x1 * W, x2 = box.x2 * W;
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      // Sample coordinate in pixel space is x - 0.5 relative to pixel-center values.
      const double cx = x1 + (double(j) + 0.5) * (x2 - x1) / 7.0 - 0.5;
      CHECK(out.at(0, i, j) == doctest::Approx(cx).epsilon(1e-5));
    }
  }
}

TEST_CASE("roi_align: full-image box over a 7x7 map samples each pixel's neighbourhood") {
  const auto f = random_array({1, 7, 7}, 1);
  const auto out = ops::roi_align(Var<float>::constant(f), {0, 0, 1, 1}).value();
  // Each bin's four quarter-point samples straddle the pixel center
  // symmetrically, so interior outputs are the pixel blended with its
  // neighbours; along the border clamping pulls it toward the pixel itself.
  for (std::size_t i = 1; i < 6; ++i) {
    for (std::size_t j = 1; j < 6; ++j) {
      double want = 0;
      for (double dy : {-0.25, 0.25}) {
        for (double dx : {-0.25, 0.25}) {
          const double y = double(i) + dy, x = double(j) + dx;
          const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
          const double ly = y - double(y0), lx = x - double(x0);
          want += (1 - ly) * (1 - lx) * f.at(0, y0, x0) + (1 - ly) * lx * f.at(0, y0, x0 + 1) +
                  ly * (1 - lx) * f.at(0, y0 + 1, x0) + ly * lx * f.at(0, y0 + 1, x0 + 1);
        }
      }
      CHECK(out.at(0, i, j) == doctest::Approx(want / 4).epsilon(1e-5));
    }
  }
}

TEST_CASE("roi_align: zero-area box is rejected") {
  DenseArray f({1, 8, 8}, 1.0f);
  CHECK_THROWS_AS(ops::roi_align(Var<float>::constant(f), {0.3, 0.3, 0.3, 0.6}), DimensionError);
}

// ---- backbone ----------------------------------------------------------------

TEST_CASE("toy backbone: T=1 equals the per-frame stack; temporal mean over frames") {
  Rng rng(2);
  ParamStore<float> s;
  const BackboneConfig cfg{true, 2, 3, 3, 3};
  auto w = make_backbone(s, "bb", cfg, rng);
  const auto a = random_array({1, 2, 6, 7}, 3), b = random_array({1, 2, 6, 7}, 4);
  const auto fa = toy_backbone(Var<float>::constant(a), w, cfg).value();
  const auto fb = toy_backbone(Var<float>::constant(b), w, cfg).value();
  CHECK(fa.shape() == Shape{3, 6, 7});
  DenseArray both({2, 2, 6, 7});
  std::copy(a.values().begin(), a.values().end(), both.ptr());
  std::copy(b.values().begin(), b.values().end(), both.ptr() + a.size());
  const auto mean = toy_backbone(Var<float>::constant(both), w, cfg).value();
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == doctest::Approx((fa[i] + fb[i]) / 2).epsilon(1e-6));
  CHECK_THROWS_AS(toy_backbone(Var<float>::constant(random_array({1, 3, 6, 7}, 5)), w, cfg), DimensionError);
}

TEST_CASE("toy backbone: constant input gives a constant map away from the zero padding") {
  Rng rng(6);
  for (std::size_t k : {1u, 3u}) {
    ParamStore<float> s;
    const BackboneConfig cfg{true, 2, 3, 3, k};
    auto w = make_backbone(s, "bb", cfg, rng);
    testing::zero_var(w.conv1_bias);
    testing::zero_var(w.conv2_bias);
    const auto out = toy_backbone(Var<float>::constant(DenseArray({2, 2, 9, 9}, 0.7f)), w, cfg).value();
    const std::size_t margin = k == 1 ? 0 : 2;  // two stacked convs
    for (std::size_t c = 0; c < 3; ++c) {
      const float ref = out.at(c, 4, 4);
      for (std::size_t i = margin; i < 9 - margin; ++i) {
        for (std::size_t j = margin; j < 9 - margin; ++j) CHECK(out.at(c, i, j) == doctest::Approx(ref).epsilon(1e-6));
      }
    }
  }
}

// ---- boxes -------------------------------------------------------------------

TEST_CASE("iou: identical, disjoint and the 1/7 example") {
  const ActorBox a{0.1, 0.2, 0.5, 0.7};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou({0, 0, 0.2, 0.2}, {0.5, 0.5, 0.9, 0.9}) == 0.0);
  CHECK(std::abs(iou({0, 0, 0.2, 0.2}, {0.1, 0.1, 0.3, 0.3}) - 1.0 / 7.0) < 1e-9);
}

TEST_CASE("filter_boxes: train threshold, labels inherited, GT always kept") {
  const LabeledBox gt{{0, 0, 1, 1}, {1, 0, 1, 0}, true};
  // IoU of (0,0,1,0.76) with the unit box is 0.76.
  const ActorBox close{0, 0, 1, 0.76, 0.3};
  const ActorBox far{0, 0, 1, 0.74, 0.99};
  auto kept = filter_boxes({close, far}, {gt}, FilterMode::Train);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].ground_truth);
  CHECK_FALSE(kept[1].ground_truth);
  CHECK(kept[1].box.y2 == doctest::Approx(0.76));
  CHECK(kept[1].labels == gt.labels);

  CHECK(filter_boxes({}, {gt}, FilterMode::Train).size() == 1);

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabeledBox> gts;
    std::vector<ActorBox> props;
    for (int k = 0; k < 3; ++k) {
      const double x = rng.uniform(0, 0.5), y = rng.uniform(0, 0.5);
      gts.push_back({{x, y, x + 0.3, y + 0.3}, {1, 0, 0, 0}, true});
      props.push_back({x + rng.uniform(-0.05, 0.05), y, x + 0.3, y + 0.3, rng.uniform()});
    }
    for (auto& p : props) p.x1 = std::max(0.0, p.x1);
    const auto out = filter_boxes(props, gts, FilterMode::Train);
    std::size_t gt_count = 0;
    for (const auto& b : out) gt_count += b.ground_truth;
    CHECK(gt_count == 3);
  }
}

TEST_CASE("filter_boxes: inference keeps scores strictly above 0.85") {
  const auto kept = filter_boxes({{0, 0, 0.5, 0.5, 0.85}, {0, 0, 0.5, 0.5, 0.8500001}, {0, 0, 0.5, 0.5, 0.9}}, {},
                                 FilterMode::Infer);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].box.score > 0.85);
  CHECK(kept[0].labels.empty());
}

// ---- loss -------------------------------------------------------------------

TEST_CASE("bce: ln 2 at zero logits, stable saturation, invalid targets") {
  auto zero = Var<float>::constant(DenseArray({2, 3}));
  CHECK(ops::sigmoid_bce(zero, DenseArray({2, 3}, 1.0f)).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  auto big = Var<float>::constant(DenseArray({1, 2}, std::vector<float>{40, -40}));
  const float sat = ops::sigmoid_bce(big, DenseArray({1, 2}, std::vector<float>{1, 0})).value()[0];
  CHECK(std::isfinite(sat));
  CHECK(sat < 1e-15f);
  const float wrong = ops::sigmoid_bce(big, DenseArray({1, 2}, std::vector<float>{0, 1})).value()[0];
  CHECK(wrong == doctest::Approx(40.0f));
  CHECK_THROWS_AS(ops::sigmoid_bce(zero, DenseArray({2, 3}, 0.5f)), DataError);
  CHECK_THROWS_AS(ops::sigmoid_bce(zero, DenseArray({3, 2}, 1.0f)), DimensionError);
}

TEST_CASE("bce: gradient matches finite differences") {
  auto x = Var<double>::leaf(random_array<double>({3, 4}, 8, -3, 3));
  BasicArray<double> t({3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i % 2);
  CHECK(verify::gradient_error([&] { return ops::sigmoid_bce(x, t); }, {x}) < 1e-4);
}

// ---- schedule and optimizer ---------------------------------------------------

TEST_CASE("lr schedule: 0.04 -> 0.004 -> 0.0004 at epochs 5.6 and 5.8") {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.milestones = {5.6, 5.8};
  CHECK_NOTHROW(cfg.validate());
  CHECK(scheduled_lr(cfg, 100, 5.59) == doctest::Approx(0.04));
  CHECK(scheduled_lr(cfg, 100, 5.6) == doctest::Approx(0.004));
  CHECK(scheduled_lr(cfg, 100, 5.79) == doctest::Approx(0.004));
  CHECK(scheduled_lr(cfg, 100, 5.8) == doctest::Approx(0.0004));
}

TEST_CASE("lr schedule: linear warmup") {
  TrainConfig cfg;
  cfg.warmup_steps = 4;
  CHECK(scheduled_lr(cfg, 0, 0) == doctest::Approx(0.01));
  CHECK(scheduled_lr(cfg, 3, 0) == doctest::Approx(0.04));
  CHECK(scheduled_lr(cfg, 4, 0) == doctest::Approx(0.04));
}

TEST_CASE("train config: milestones strictly increasing within (0, epochs]") {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.milestones = {5.8, 5.6};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.milestones = {0.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.milestones = {6.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.milestones = {6.0};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sgd: momentum and weight decay update") {
  ParamStore<float> s;
  auto p = s.add("p", DenseArray({2}, std::vector<float>{1.0f, -2.0f}));
  Sgd opt(0.9, 0.1);
  backward(ops::sum_all(ops::scale(p, 3.0f)));  // grad 3
  opt.step(s, 0.5);
  // v = 3 + 0.1 p; p -= 0.5 v
  CHECK(p.value()[0] == doctest::Approx(1.0 - 0.5 * 3.1));
  CHECK(p.value()[1] == doctest::Approx(-2.0 - 0.5 * 2.8));
  const float v0 = 3.1f, p1 = p.value()[0];
  opt.step(s, 0.5);  // same gradient buffer still present
  CHECK(p.value()[0] == doctest::Approx(p1 - 0.5 * (0.9 * v0 + 3.0 + 0.1 * p1)));
}

// ---- synthetic data ----------------------------------------------------------

TEST_CASE("synthetic data: deterministic, labels consistent") {
  const auto a = make_synthetic_dataset(small_spec()), b = make_synthetic_dataset(small_spec());
  REQUIRE(a.clips.size() == b.clips.size());
  CHECK(a.clips.size() == 3 * 4);
  for (std::size_t i = 0; i < a.clips.size(); ++i) {
    CHECK(encode_array(a.clips[i].frames) == encode_array(b.clips[i].frames));
    for (const auto& g : a.clips[i].ground_truth) {
      REQUIRE(g.labels.size() == kSyntheticClassCount);
      for (float v : g.labels) CHECK((v == 0.0f || v == 1.0f));
      CHECK((g.labels[kJointClass] == 1.0f) == (g.labels[kNearObjectClass] == 1.0f && g.labels[kNearActorClass] == 1.0f));
    }
  }
  CHECK(a.class_names == synthetic_class_names());
  CHECK(make_synthetic_dataset(small_spec(2)).clips[0].frames != a.clips[0].frames);
}

TEST_CASE("synthetic data: label (d) is the AND of (b) and (c) on a large sample") {
  auto spec = small_spec(9);
  spec.num_videos = 30;
  spec.max_actors = 4;
  spec.max_objects = 3;
  std::size_t joint = 0, boxes = 0;
  for (const auto& clip : make_synthetic_dataset(spec).clips) {
    for (const auto& g : clip.ground_truth) {
      ++boxes;
      joint += g.labels[kJointClass] == 1.0f;
      CHECK((g.labels[kJointClass] == 1.0f) == (g.labels[kNearObjectClass] == 1.0f && g.labels[kNearActorClass] == 1.0f));
    }
  }
  CHECK(boxes > 100);
  CHECK(joint > 0);
}

TEST_CASE("synthetic data: a lone actor without objects can only be positive for pose") {
  auto spec = small_spec(3);
  spec.min_actors = spec.max_actors = 1;
  spec.max_objects = 0;
  for (const auto& clip : make_synthetic_dataset(spec).clips) {
    REQUIRE(clip.ground_truth.size() == 1);
    const auto& l = clip.ground_truth[0].labels;
    CHECK(l[kNearObjectClass] == 0.0f);
    CHECK(l[kNearActorClass] == 0.0f);
    CHECK(l[kJointClass] == 0.0f);
  }
}

TEST_CASE("synthetic data: splits and save/load round trip") {
  const auto data = make_synthetic_dataset(small_spec());
  CHECK(data.split("eval").size() == 4);
  CHECK(data.split("train").size() == 8);
  const auto dir = (std::filesystem::temp_directory_path() / "mrsn_unit_dataset").string();
  std::filesystem::remove_all(dir);
  save_dataset(data, dir);
  const auto back = load_dataset(dir);
  REQUIRE(back.clips.size() == data.clips.size());
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    CHECK(back.clips[i].frames == data.clips[i].frames);
    CHECK(back.clips[i].frame_id() == data.clips[i].frame_id());
    CHECK(back.clips[i].ground_truth.size() == data.clips[i].ground_truth.size());
    CHECK(back.clips[i].proposals.size() == data.clips[i].proposals.size());
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(decode_array("abc"), DataError);
}

TEST_CASE("resize hook: identity at target size, exact on constant and linear maps") {
  const auto a = random_array({2, 3, 8, 12}, 21);
  CHECK(resize_shorter_side(a, 8) == a);
  const auto up = resize_shorter_side(a, 16);
  CHECK(up.shape() == Shape{2, 3, 16, 24});
  CHECK(resize_shorter_side(a, 4).shape() == Shape{2, 3, 4, 6});

  const DenseArray c({1, 1, 6, 6}, 2.5f);
  const auto cr = resize_shorter_side(c, 9);
  for (float v : cr.data()) CHECK(v == doctest::Approx(2.5f));

  // A horizontal ramp stays a ramp in source coordinates away from the clamped border.
  DenseArray ramp({1, 1, 4, 8});
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 8; ++x) ramp.data()[y * 8 + x] = float(x);
  }
  const auto r = resize_shorter_side(ramp, 8);
  REQUIRE(r.shape() == Shape{1, 1, 8, 16});
  for (std::size_t x = 1; x < 15; ++x) CHECK(r.data()[3 * 16 + x] == doctest::Approx((x + 0.5) / 2 - 0.5));
  CHECK_THROWS_AS(resize_shorter_side(DenseArray({4, 4}), 2), DimensionError);
}

TEST_CASE("load_dataset applies the frame transform to every clip") {
  const auto data = make_synthetic_dataset(small_spec());
  const auto dir = (std::filesystem::temp_directory_path() / "mrsn_unit_dataset_resize").string();
  std::filesystem::remove_all(dir);
  save_dataset(data, dir);
  const auto back = load_dataset(dir, [](const DenseArray& f) { return resize_shorter_side(f, 32); });
  REQUIRE(back.clips.size() == data.clips.size());
  for (const auto& c : back.clips) CHECK(c.frames.shape() == Shape{2, kSyntheticChannelCount, 32, 32});
  std::filesystem::remove_all(dir);
}

// ---- frame mAP ---------------------------------------------------------------

TEST_CASE("frame_map: worked examples") {
  const ActorBox gt_box{0, 0, 0.5, 0.5};
  const ActorBox d06{0, 0, 0.5, 0.3};   // IoU 0.6
  const ActorBox d055{0, 0, 0.5, 0.275}; // IoU 0.55
  const std::vector<GroundTruthBox> gt{{"f", gt_box, 0}};
  CHECK(frame_map({{"f", d06, 0, 0.9}}, gt, 1).mean_ap == doctest::Approx(1.0));
  CHECK(frame_map({}, gt, 1).mean_ap == 0.0);
  CHECK(frame_map({{"f", d06, 0, 0.9}, {"f", d055, 0, 0.8}}, gt, 1).mean_ap == doctest::Approx(1.0));
  // The duplicate ranked first is the one that matches; the other is a false positive.
  CHECK(frame_map({{"f", d06, 0, 0.7}, {"f", d055, 0, 0.8}}, gt, 1).mean_ap == doctest::Approx(1.0));
  CHECK_THROWS_AS(frame_map({{"f", d06, 0, 0.9}}, {}, 1), DataError);
}

TEST_CASE("frame_map: classes without ground truth are excluded from the mean") {
  const std::vector<GroundTruthBox> gt{{"f", {0, 0, 0.5, 0.5}, 0}};
  const auto r = frame_map({{"f", {0, 0, 0.5, 0.5}, 0, 0.9}, {"f", {0, 0, 0.5, 0.5}, 1, 0.9}}, gt, 2);
  CHECK(std::isnan(r.class_ap[1]));
  CHECK(r.mean_ap == doctest::Approx(1.0));
}

TEST_CASE("frame_map: agrees with the brute-force oracle") {
  for (const auto& f : verify::map_fixtures()) {
    CHECK_MESSAGE(std::abs(frame_map(f.detections, f.ground_truth, f.num_classes).mean_ap -
                           verify::brute_force_map(f.detections, f.ground_truth, f.num_classes)) < 1e-9,
                  f.name);
  }
  // Random fixtures too.
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Detection> det;
    std::vector<GroundTruthBox> gt;
    for (int k = 0; k < 4; ++k) {
      const double x = rng.uniform(0, 0.6), y = rng.uniform(0, 0.6);
      gt.push_back({"f" + std::to_string(k % 2), {x, y, x + 0.3, y + 0.3}, rng.index(2)});
    }
    for (int k = 0; k < 6; ++k) {
      const auto& g = gt[rng.index(gt.size())];
      const double j = rng.uniform(-0.1, 0.1);
      det.push_back({g.frame_id, {std::max(0.0, g.box.x1 + j), g.box.y1, g.box.x2, g.box.y2}, rng.index(2),
                     rng.uniform()});
    }
    bool any0 = false, any1 = false;
    for (const auto& g : gt) (g.class_id ? any1 : any0) = true;
    if (!any0 && !any1) continue;
    CHECK(std::abs(frame_map(det, gt, 2).mean_ap - verify::brute_force_map(det, gt, 2)) < 1e-9);
  }
}

// ---- model, checkpoints, training --------------------------------------------

TEST_CASE("checkpoint: bit-exact round trip") {
  Model<float> model(small_model(), 3);
  const std::string bytes = encode_checkpoint(model.config(), model.params());
  const auto ck = decode_checkpoint(bytes);
  CHECK(to_json(ck.config) == to_json(model.config()));
  REQUIRE(ck.order.size() == model.params().size());
  Model<float> other(ck.config, 99);
  other.load_state(ck.params);
  CHECK(encode_checkpoint(other.config(), other.params()) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), DataError);
}

TEST_CASE("checkpoint: load_state reports missing, extra and mis-shaped parameters") {
  Model<float> model(small_model(), 3);
  auto state = model.state();
  auto missing = state;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(model.load_state(missing), ConfigError);
  auto extra = state;
  extra["bogus"] = DenseArray({1});
  CHECK_THROWS_AS(model.load_state(extra), ConfigError);
  auto bad = state;
  bad.begin()->second = DenseArray({1, 1, 1});
  try {
    model.load_state(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("[1x1x1]") != std::string::npos);
  }
}

TEST_CASE("model: empty box list is rejected") {
  Model<float> model(small_model(), 3);
  CHECK_THROWS_AS(model.forward_short(random_array({2, 4, 16, 16}, 1), {}), DataError);
}

TEST_CASE("training: zero learning rate leaves every parameter unchanged") {
  const auto data = make_synthetic_dataset(small_spec());
  Model<float> model(small_model(), 4);
  const auto before = encode_checkpoint(model.config(), model.params());
  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.weight_decay = 1e-7;
  cfg.max_steps = 3;
  cfg.eval_each_epoch = false;
  train_short(model, data, cfg);
  CHECK(encode_checkpoint(model.config(), model.params()) == before);
}

TEST_CASE("training: identical seeds give identical loss trajectories and weights") {
  const auto data = make_synthetic_dataset(small_spec());
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.epochs = 2;
  cfg.seed = 7;
  cfg.eval_each_epoch = false;
  Model<float> a(small_model(), 5), b(small_model(), 5);
  std::vector<std::string> log_a, log_b;
  const auto ra = train_short(a, data, cfg, [&](const nlohmann::json& j) { log_a.push_back(j.dump()); });
  const auto rb = train_short(b, data, cfg, [&](const nlohmann::json& j) { log_b.push_back(j.dump()); });
  CHECK(ra.step_losses == rb.step_losses);
  CHECK(log_a == log_b);
  CHECK(encode_checkpoint(a.config(), a.params()) == encode_checkpoint(b.config(), b.params()));
  CHECK(ra.steps == 6);  // 8 train clips, batches of 3, 2 epochs
}

TEST_CASE("training: divergence aborts with a numeric error") {
  const auto data = make_synthetic_dataset(small_spec());
  Model<float> model(small_model(), 6);
  TrainConfig cfg;
  cfg.learning_rate = 1e12;
  cfg.momentum = 0;
  cfg.max_steps = 20;
  cfg.eval_each_epoch = false;
  CHECK_THROWS_AS(train_short(model, data, cfg), NumericError);
}

TEST_CASE("training: a single clip is memorized (loss < 0.05 within 300 steps)") {
  auto spec = small_spec(4);
  spec.num_videos = 1;
  spec.video_duration_s = 2;
  spec.eval_fraction = 0;
  const auto data = make_synthetic_dataset(spec);
  REQUIRE(data.clips.size() == 1);
  Model<float> model(small_model(), 7);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 1;
  cfg.epochs = 300;
  cfg.max_steps = 300;
  cfg.eval_each_epoch = false;
  const auto r = train_short(model, data, cfg);
  double best = 1e9;
  for (double l : r.step_losses) best = std::min(best, l);
  CHECK(r.steps <= 300);
  CHECK(best < 0.05);
  CHECK(r.step_losses.back() < 0.05);
}

TEST_CASE("training: long phase only moves the long-term head") {
  const auto data = make_synthetic_dataset(small_spec());
  Model<float> model(small_model(), 8);
  const auto bank = build_model_bank(model, data, config_hash(model.config()));
  const auto before = model.state();
  TrainConfig cfg;
  cfg.max_steps = 3;
  cfg.eval_each_epoch = false;
  train_long(model, data, bank, cfg);
  const auto after = model.state();
  bool long_moved = false;
  for (const auto& [name, value] : before) {
    if (name.rfind("long_head", 0) == 0) {
      long_moved = long_moved || value != after.at(name);
    } else {
      CHECK_MESSAGE(value == after.at(name), name);
    }
  }
  CHECK(long_moved);
}

TEST_CASE("evaluate: class-count mismatch is a configuration error; repeat runs agree") {
  const auto data = make_synthetic_dataset(small_spec());
  Model<float> model(small_model(), 9);
  const auto a = evaluate(model, data, "eval"), b = evaluate(model, data, "eval");
  CHECK(a.report.mean_ap == b.report.mean_ap);
  auto mc = small_model();
  mc.num_classes = 3;
  Model<float> wrong(mc, 9);
  CHECK_THROWS_AS(evaluate(wrong, data, "eval"), ConfigError);
}

TEST_CASE("bank from a model: one entry per clip center, features of width 3d") {
  auto spec = small_spec();
  spec.num_videos = 1;
  spec.video_duration_s = 60;
  spec.eval_fraction = 0;
  const auto data = make_synthetic_dataset(spec);
  Model<float> model(small_model(), 10);
  const auto bank = build_model_bank(model, data, config_hash(model.config()));
  CHECK(bank.size() == 59);
  for (const auto* e : bank.entries()) {
    for (const auto& f : e->features) CHECK(f.size() == 48);
  }
  CHECK(build_model_bank(model, data, config_hash(model.config())).serialize() == bank.serialize());
}

TEST_CASE("evaluate: random-init models score near chance") {
  auto spec = small_spec(4);
  spec.num_videos = 12;
  spec.video_duration_s = 8;
  spec.eval_fraction = 0.5;
  const auto data = make_synthetic_dataset(spec);
  // Chance: the same detections with uniformly random confidences.
  double chance = 0, model_mean = 0;
  const std::uint64_t seeds[] = {1, 2, 3, 4, 5};
  for (std::uint64_t seed : seeds) {
    Model<float> model(small_model(), seed);
    const auto r = evaluate(model, data, "eval");
    model_mean += r.report.mean_ap / 5;
    Rng rng(100 + seed);
    for (int k = 0; k < 20; ++k) {
      auto shuffled = r.detections;
      for (auto& d : shuffled) d.confidence = rng.uniform();
      chance += frame_map(shuffled, r.ground_truth, data.num_classes).mean_ap / 100;
    }
  }
  MESSAGE("random-init mean mAP " << model_mean << ", random-score mAP " << chance);
  CHECK(std::abs(model_mean - chance) < 0.1);
}
