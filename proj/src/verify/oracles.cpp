#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <set>

#include "mrsn/binary_io.hpp"
#include "mrsn/verify.hpp"

namespace mrsn::verify {

namespace {

double max_abs_diff(const BasicArray<double>& a, const BasicArray<double>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (!std::isfinite(d)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, d);
  }
  return worst;
}

double max_abs_diff(const DenseArray& a, const DenseArray& b) {
  return max_abs_diff(a.cast<double>(), b.cast<double>());
}

template <typename Fn>
SuiteReport timed(const std::string& name, Fn body) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report{name, {}, 0};
  body(report.checks);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace

bool SuiteReport::passed() const {
  if (checks.empty()) return false;
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

double SuiteReport::worst() const {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.error);
  return w;
}

// ---- attention --------------------------------------------------------------

BasicArray<double> naive_attention(const BasicArray<double>& x, const BasicArray<double>& y,
                                   const BasicArray<double>& wq, const BasicArray<double>& wk,
                                   const BasicArray<double>& wv, const BasicArray<double>& wo,
                                   std::size_t heads) {
  const std::size_t nq = x.rows(), nk = y.rows(), d = x.cols();
  const std::size_t dk = d / heads;
  auto project = [d](const BasicArray<double>& in, const BasicArray<double>& w) {
    BasicArray<double> out({in.rows(), d});
    for (std::size_t i = 0; i < in.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += in.at(i, p) * w.at(p, j);
        out.at(i, j) = s;
      }
    return out;
  };
  const auto q = project(x, wq), k = project(y, wk), v = project(y, wv);
  BasicArray<double> concat({nq, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> score(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q.at(i, off + c) * k.at(j, off + c);
        score[j] = s / std::sqrt(static_cast<double>(dk));
      }
      const double top = *std::max_element(score.begin(), score.end());
      double total = 0.0;
      for (auto& s : score) total += (s = std::exp(s - top));
      for (std::size_t c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < nk; ++j) acc += score[j] / total * v.at(j, off + c);
        concat.at(i, off + c) = acc;
      }
    }
  }
  return project(concat, wo);
}

SuiteReport attention_oracle_suite(std::uint64_t seed, std::size_t fixtures) {
  return timed("attention_oracle", [&](std::vector<CheckResult>& checks) {
    Rng rng(seed);
    const std::size_t head_options[] = {1, 2, 4};
    for (std::size_t f = 0; f < fixtures; ++f) {
      const std::size_t heads = head_options[rng.index(3)];
      const std::size_t dk = 2 + rng.index(3);
      const std::size_t d = heads * dk;
      const bool self = f % 2 == 0;
      const std::size_t nq = 1 + rng.index(6);
      const std::size_t nk = self ? nq : 1 + rng.index(6);
      ParamStore<float> store;
      const auto w = make_attention(store, "att", d, rng);
      const auto x = init::normal<float>(rng, {nq, d}, 1.0);
      const auto y = self ? x : init::normal<float>(rng, {nk, d}, 1.0);
      const AttentionConfig cfg{d, heads, 2 * d};

      NoGradGuard no_grad;
      const Var<float> xv = Var<float>::constant(x), yv = Var<float>::constant(y);
      const DenseArray got = self ? msa(xv, w, cfg).value() : mca(xv, yv, w, cfg).value();
      const auto want = naive_attention(x.cast<double>(), y.cast<double>(), w.query.value().cast<double>(),
                                        w.key.value().cast<double>(), w.value.value().cast<double>(),
                                        w.output.value().cast<double>(), heads);
      checks.push_back({std::string(self ? "msa" : "mca") + "_fixture_" + std::to_string(f),
                        max_abs_diff(got.cast<double>(), want), kAttentionTolerance});
    }
  });
}

// ---- permutations ------------------------------------------------------------

SuiteReport equivariance_suite(std::uint64_t seed) {
  return timed("equivariance", [&](std::vector<CheckResult>& checks) {
    Rng rng(seed);
    MrseConfig cfg;
    cfg.model_dim = 16;
    cfg.ffn_hidden = 32;
    cfg.heads = 2;
    const GridSpec grid{8, 2};
    const std::size_t L = grid.patch_count(), d = cfg.model_dim, n_actors = 3;
    ParamStore<float> store;
    const auto weights = make_mrse(store, "mrse", cfg, rng);
    const Var<float> grid_pos = Var<float>::constant(init::normal<float>(rng, {L, d}, 0.5));
    const std::vector<ActorBox> boxes = {
        {0.05, 0.1, 0.35, 0.6, 0.9}, {0.5, 0.2, 0.95, 0.7, 0.9}, {0.3, 0.55, 0.6, 0.98, 0.9}};
    std::vector<DenseArray> actor(n_actors), context(n_actors);
    for (std::size_t n = 0; n < n_actors; ++n) {
      actor[n] = init::normal<float>(rng, {1, d}, 1.0);
      context[n] = init::normal<float>(rng, {L, d}, 1.0);
    }
    const std::vector<std::size_t> perm = {2, 0, 1};
    NoGradGuard no_grad;

    auto build = [&](const std::vector<std::size_t>& order) {
      MrseInput<float> in;
      std::vector<Var<float>> tokens;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto a = Var<float>::constant(actor[order[k]]);
        in.sequences.push_back({a, Var<float>::constant(context[order[k]]), k});
        tokens.push_back(a);
        in.boxes.push_back(boxes[order[k]]);
      }
      in.actor_tokens = ops::concat_rows(tokens);
      return in;
    };
    const std::vector<std::size_t> identity = {0, 1, 2};

    {
      const auto base_in = build(identity), perm_in = build(perm);
      const auto att = cfg.attention();
      const auto a = aare_forward(base_in.actor_tokens, weights.stacks[0].aare, att).value();
      const auto b = aare_forward(perm_in.actor_tokens, weights.stacks[0].aare, att).value();
      double err = 0.0;
      for (std::size_t k = 0; k < n_actors; ++k)
        for (std::size_t c = 0; c < d; ++c) err = std::max(err, double(std::abs(b.at(k, c) - a.at(perm[k], c))));
      checks.push_back({"aare_actor_permutation", err, kEquivarianceTolerance});
    }
    {
      const auto base = mrse_forward(build(identity), weights, cfg, grid, grid_pos);
      const auto moved = mrse_forward(build(perm), weights, cfg, grid, grid_pos);
      double err = 0.0;
      for (std::size_t k = 0; k < n_actors; ++k) {
        err = std::max(err, max_abs_diff(moved[k].x.value(), base[perm[k]].x.value()));
        err = std::max(err, max_abs_diff(moved[k].y.value(), base[perm[k]].y.value()));
      }
      checks.push_back({"mrse_actor_permutation", err, kEquivarianceTolerance});
    }
    {
      const LongConsensusConfig lcfg{3 * d, 4, 10};
      ParamStore<float> lstore;
      const auto lw = make_long_consensus(lstore, "long", lcfg, 4, rng);
      const auto queries = Var<float>::constant(init::normal<float>(rng, {n_actors, lcfg.width}, 1.0));
      std::vector<SupportFeature> support;
      for (int i = 0; i < 9; ++i) {
        SupportFeature s{static_cast<int>(rng.index(21)) - 10, {}};
        for (std::size_t j = 0; j < lcfg.width; ++j) s.feature.push_back(static_cast<float>(rng.normal()));
        support.push_back(std::move(s));
      }
      auto shuffled = support;
      for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
      std::reverse(shuffled.begin(), shuffled.end());
      const auto a = rcm_l(queries, support, lw, lcfg).value();
      const auto b = rcm_l(queries, shuffled, lw, lcfg).value();
      checks.push_back({"rcm_l_support_order", max_abs_diff(a, b), kEquivarianceTolerance});
    }
  });
}

// ---- bank ----------------------------------------------------------------------

SuiteReport bank_suite(std::uint64_t seed) {
  return timed("bank", [&](std::vector<CheckResult>& checks) {
    const BankMeta meta{4, 10, 0x5eed0000u + seed};
    const std::size_t width = meta.feature_width();
    auto features = [&](const std::string& id, std::int64_t t) {
      Rng rng(io::fnv1a(id) ^ (seed * 1000003u + static_cast<std::uint64_t>(t)));
      std::vector<std::vector<float>> out(1 + rng.index(3), std::vector<float>(width));
      for (auto& f : out)
        for (auto& v : f) v = static_cast<float>(rng.normal());
      return out;
    };
    std::vector<VideoSource> videos;
    for (auto [id, duration] : {std::pair<std::string, double>{"video_a", 60.0}, {"video_b", 25.5}, {"video_c", 1.5}}) {
      videos.push_back({id, duration, [&features, id = id](std::int64_t t) { return features(id, t); }});
    }
    std::vector<std::string> warnings;
    const Bank bank = build_bank(videos, meta, &warnings);
    const std::string bytes = bank.serialize();
    const Bank reloaded = Bank::deserialize(bytes);

    const double count_a = static_cast<double>(reloaded.video_entries("video_a").size());
    checks.push_back({"video_60s_entry_count_59", std::abs(count_a - 59.0), 0.0});
    checks.push_back({"short_video_warned", warnings.size() == 1 ? 0.0 : 1.0, 0.0});
    checks.push_back({"meta_roundtrip", reloaded.meta() == meta ? 0.0 : 1.0, 0.0});
    checks.push_back({"reserialize_identical", reloaded.serialize() == bytes ? 0.0 : 1.0, 0.0});

    double mismatches = 0.0;
    for (const std::string id : {"video_a", "video_b"}) {
      for (const auto* e : bank.video_entries(id)) {
        const auto a = bank.window_query(id, e->clip_time_s, 10);
        const auto b = reloaded.window_query(id, e->clip_time_s, 10);
        if (a.size() != b.size()) {
          ++mismatches;
          continue;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (a[i].offset != b[i].offset || a[i].feature.size() != b[i].feature.size() ||
              std::memcmp(a[i].feature.data(), b[i].feature.data(), a[i].feature.size() * sizeof(float)) != 0) {
            ++mismatches;
          }
        }
        const auto looked_up = Bank::lookup(bytes, id, e->clip_time_s);
        if (!looked_up || looked_up->features != e->features) ++mismatches;
      }
    }
    if (Bank::lookup(bytes, "video_a", 60) || Bank::lookup(bytes, "video_z", 3)) ++mismatches;
    checks.push_back({"window_queries_bit_exact", mismatches, 0.0});

    auto offsets_of = [&](std::int64_t t) {
      std::set<int> out;
      for (const auto& s : reloaded.window_query("video_a", t, 10)) out.insert(s.offset);
      return out;
    };
    std::set<int> head, tail;
    for (int o = 0; o <= 10; ++o) head.insert(o);
    for (int o = -10; o <= 0; ++o) tail.insert(o);
    checks.push_back({"window_truncates_at_t1", offsets_of(1) == head ? 0.0 : 1.0, 0.0});
    checks.push_back({"window_truncates_at_t59", offsets_of(59) == tail ? 0.0 : 1.0, 0.0});
  });
}

// ---- frame mAP -------------------------------------------------------------------

double brute_force_map(const std::vector<Detection>& detections,
                       const std::vector<GroundTruthBox>& ground_truth, std::size_t num_classes,
                       double iou_threshold) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<GroundTruthBox> gts;
    for (const auto& g : ground_truth)
      if (g.class_id == c) gts.push_back(g);
    if (gts.empty()) continue;
    std::vector<Detection> dets;
    for (const auto& d : detections)
      if (d.class_id == c) dets.push_back(d);

    std::set<double, std::greater<>> thresholds;
    for (const auto& d : dets) thresholds.insert(d.confidence);
    std::vector<std::pair<double, double>> points;  // (recall, precision)
    for (double tau : thresholds) {
      std::vector<Detection> kept;
      for (const auto& d : dets)
        if (d.confidence >= tau) kept.push_back(d);
      std::sort(kept.begin(), kept.end(),
                [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
      std::vector<bool> used(gts.size(), false);
      std::size_t tp = 0;
      for (const auto& d : kept) {
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (used[g] || gts[g].frame_id != d.frame_id) continue;
          const double v = iou(d.box, gts[g].box);
          if (v > best_iou) {
            best_iou = v;
            best = static_cast<int>(g);
          }
        }
        if (best >= 0 && best_iou >= iou_threshold) {
          used[static_cast<std::size_t>(best)] = true;
          ++tp;
        }
      }
      points.push_back({static_cast<double>(tp) / static_cast<double>(gts.size()),
                        static_cast<double>(tp) / static_cast<double>(kept.size())});
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      double best_precision = 0.0;
      for (std::size_t j = k; j < points.size(); ++j) best_precision = std::max(best_precision, points[j].second);
      ap += (points[k].first - prev_recall) * best_precision;
      prev_recall = points[k].first;
    }
    sum += ap;
    ++counted;
  }
  if (counted == 0) throw DataError("brute_force_map: no ground truth");
  return sum / static_cast<double>(counted);
}

std::vector<MapFixture> map_fixtures() {
  const ActorBox gt_a{0.0, 0.0, 0.5, 0.5};
  const ActorBox iou_060{0.0, 0.0, 0.5, 0.3};    // 0.15 / 0.25
  const ActorBox iou_055{0.0, 0.0, 0.5, 0.275};  // 0.1375 / 0.25
  const ActorBox iou_040{0.0, 0.0, 0.5, 0.2};    // 0.10 / 0.25
  const ActorBox gt_b{0.5, 0.5, 1.0, 1.0};
  const ActorBox gt_c{0.2, 0.5, 0.6, 0.9};
  const ActorBox far{0.8, 0.0, 1.0, 0.2};

  std::vector<MapFixture> out;
  out.push_back({"single_match", {{"f0", iou_060, 0, 0.7}}, {{"f0", gt_a, 0}}, 1});
  out.push_back({"no_detections", {}, {{"f0", gt_a, 0}}, 1});
  out.push_back({"two_detections_one_gt", {{"f0", iou_060, 0, 0.9}, {"f0", iou_055, 0, 0.8}}, {{"f0", gt_a, 0}}, 1});
  out.push_back({"false_positive_first",
                 {{"f0", far, 0, 0.95}, {"f0", gt_a, 0, 0.9}, {"f1", gt_b, 0, 0.6}, {"f1", iou_040, 0, 0.5}},
                 {{"f0", gt_a, 0}, {"f1", gt_b, 0}},
                 1});
  out.push_back({"interleaved_three_gt",
                 {{"f0", gt_a, 0, 0.91}, {"f0", far, 0, 0.83}, {"f1", gt_b, 0, 0.77}, {"f2", gt_b, 0, 0.64},
                  {"f2", gt_c, 0, 0.42}},
                 {{"f0", gt_a, 0}, {"f1", gt_b, 0}, {"f2", gt_c, 0}},
                 1});
  out.push_back({"wrong_frame_is_false_positive",
                 {{"f1", gt_a, 0, 0.9}, {"f0", iou_060, 0, 0.3}},
                 {{"f0", gt_a, 0}},
                 1});
  out.push_back({"greedy_takes_best_unmatched",
                 {{"f0", ActorBox{0.0, 0.0, 0.5, 0.45}, 0, 0.9}, {"f0", iou_055, 0, 0.8}},
                 {{"f0", gt_a, 0}, {"f0", ActorBox{0.0, 0.0, 0.5, 0.33}, 0}},
                 1});
  out.push_back({"two_classes_one_without_gt",
                 {{"f0", gt_a, 0, 0.8}, {"f0", gt_b, 1, 0.7}, {"f1", gt_b, 1, 0.6}, {"f0", far, 2, 0.99}},
                 {{"f0", gt_a, 0}, {"f0", gt_b, 1}, {"f1", gt_c, 1}},
                 3});
  return out;
}

SuiteReport map_oracle_suite() {
  return timed("map_oracle", [&](std::vector<CheckResult>& checks) {
    for (const auto& f : map_fixtures()) {
      const double got = frame_map(f.detections, f.ground_truth, f.num_classes).mean_ap;
      const double want = brute_force_map(f.detections, f.ground_truth, f.num_classes);
      checks.push_back({f.name, std::abs(got - want), kMapTolerance});
    }
  });
}

// ---- pinned-value fixtures ------------------------------------------------------

CheckResult layer_norm_value_fixture(double eps) {
  const std::size_t n = 8;
  BasicArray<double> x({1, n});
  for (std::size_t i = 0; i < n; ++i) x[i] = 1e-3 * static_cast<double>(i);
  BasicArray<double> want({1, n});
  {
    constexpr double pinned_eps = 1e-5;
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= n;
    for (std::size_t i = 0; i < n; ++i) want[i] = (x[i] - mean) / std::sqrt(var + pinned_eps);
  }
  NoGradGuard no_grad;
  const auto got = ops::layer_norm(Var<double>::constant(x), Var<double>::constant(BasicArray<double>({n}, 1.0)),
                                   Var<double>::constant(BasicArray<double>({n}, 0.0)), eps)
                       .value();
  return {"layer_norm_pinned_values", max_abs_diff(got, want), 1e-9};
}

BasicArray<double> library_softmax(const BasicArray<double>& x) {
  NoGradGuard no_grad;
  return ops::softmax_rows(Var<double>::constant(x)).value();
}

BasicArray<double> unshifted_softmax(const BasicArray<double>& x) {
  BasicArray<double> out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) total += std::exp(x.at(i, j));
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = std::exp(x.at(i, j)) / total;
  }
  return out;
}

CheckResult softmax_stability_fixture(const SoftmaxFn& softmax) {
  const auto x = BasicArray<double>::matrix(2, 3, {1000.0, 999.0, 998.0, -1000.0, 0.0, 1000.0});
  const double z = 1.0 + std::exp(-1.0) + std::exp(-2.0);
  const auto want = BasicArray<double>::matrix(
      2, 3, {1.0 / z, std::exp(-1.0) / z, std::exp(-2.0) / z, 0.0, std::exp(-1000.0), 1.0});
  return {"softmax_logit_1000", max_abs_diff(softmax(x), want), 1e-12};
}

SuiteReport fixture_suite() {
  return timed("pinned_fixtures", [&](std::vector<CheckResult>& checks) {
    checks.push_back(layer_norm_value_fixture(ops::kLayerNormEps));
    checks.push_back(softmax_stability_fixture(library_softmax));
  });
}

std::vector<SuiteReport> run_selftest(std::uint64_t seed) {
  std::vector<SuiteReport> out;
  out.push_back(gradient_suite(seed));
  out.push_back(attention_oracle_suite(seed));
  out.push_back(equivariance_suite(seed));
  out.push_back(bank_suite(seed));
  out.push_back(map_oracle_suite());
  out.push_back(fixture_suite());
  return out;
}

}  // namespace mrsn::verify
