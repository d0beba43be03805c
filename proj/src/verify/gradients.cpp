#include <chrono>
#include <cmath>

#include "mrsn/verify.hpp"

namespace mrsn::verify {

namespace {

using D = double;
using VarD = Var<D>;

constexpr std::size_t kDim = 8, kHeads = 2, kHidden = 16, kActors = 2;

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

VarD random_leaf(Rng& rng, Shape shape, double scale = 1.0) {
  return VarD::leaf(init::normal<D>(rng, std::move(shape), scale));
}

/// Scalar probe sum(w * x) with fixed random weights, so that reductions
/// like sum(layer_norm(x)) do not hide gradients.
struct Probe {
  BasicArray<D> weights;
  Probe(Rng& rng, const Shape& shape) : weights(init::normal<D>(rng, shape, 1.0)) {}
  VarD operator()(const VarD& x) const { return ops::weighted_sum(x, weights); }
};

std::vector<VarD> store_inputs(const ParamStore<D>& store) {
  std::vector<VarD> out;
  for (const auto& e : store.entries()) out.push_back(e.var);
  return out;
}

/// Nudges every parameter away from its structured init (unit gains, zero
/// biases) so each gradient path is exercised with generic values.
void perturb(ParamStore<D>& store, Rng& rng, double scale = 0.1) {
  for (auto& e : store.entries()) {
    for (auto& v : e.var.mutable_value().data()) v += scale * rng.normal();
  }
}

std::vector<SupportFeature> random_support(Rng& rng, std::size_t width, int window, std::size_t count) {
  std::vector<SupportFeature> out;
  for (std::size_t i = 0; i < count; ++i) {
    SupportFeature s;
    s.offset = static_cast<int>(rng.index(2 * window + 1)) - window;
    for (std::size_t j = 0; j < width; ++j) s.feature.push_back(static_cast<float>(rng.normal()));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ActorBox> toy_boxes() {
  return {{0.10, 0.15, 0.55, 0.70, 0.95}, {0.40, 0.30, 0.90, 0.85, 0.90}};
}

}  // namespace

double gradient_error(const std::function<Var<double>()>& f, const std::vector<Var<double>>& inputs,
                      double eps) {
  for (const auto& in : inputs) in.node()->zero_grad();
  VarD root = f();
  backward(root);

  double worst = 0.0;
  for (const auto& in : inputs) {
    auto& node = *in.node();
    const std::size_t n = node.value.size();
    std::vector<double> analytic(n, 0.0), numeric(n, 0.0);
    if (node.has_grad()) {
      for (std::size_t i = 0; i < n; ++i) analytic[i] = node.grad[i];
    }
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < n; ++i) {
        const double saved = node.value[i];
        node.value[i] = saved + eps;
        const double plus = f().value()[0];
        node.value[i] = saved - eps;
        const double minus = f().value()[0];
        node.value[i] = saved;
        numeric[i] = (plus - minus) / (2.0 * eps);
      }
    }
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = analytic[i] - numeric[i];
    const double denom = std::max(norm(analytic), norm(numeric));
    if (denom < 1e-14) continue;
    worst = std::max(worst, norm(diff) / denom);
  }
  for (const auto& in : inputs) in.node()->zero_grad();
  return worst;
}

ModelConfig toy_model_config() {
  ModelConfig cfg;
  cfg.backbone = {true, 2, 3, 3, 3};
  cfg.grid = {4, 2};
  cfg.mrse.model_dim = kDim;
  cfg.mrse.ffn_hidden = kHidden;
  cfg.mrse.heads = kHeads;
  cfg.long_heads = kHeads;
  cfg.window = 2;
  cfg.num_classes = 3;
  return cfg;
}

SuiteReport gradient_suite(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report{"gradients", {}, 0};
  auto add = [&](const std::string& name, double err) {
    report.checks.push_back({name, err, kGradientTolerance});
  };
  const AttentionConfig att{kDim, kHeads, kHidden};
  const std::size_t L = 4;

  {
    Rng rng(seed + 1);
    ParamStore<D> s;
    auto w = make_linear(s, "lin", kDim, 5, rng);
    perturb(s, rng);
    VarD x = random_leaf(rng, {3, kDim});
    Probe probe(rng, {3, 5});
    add("linear", gradient_error([&] { return probe(apply(w, x)); }, {x, w.weight, w.bias}));
  }
  {
    Rng rng(seed + 2);
    ParamStore<D> s;
    auto w = make_norm(s, "ln", kDim);
    perturb(s, rng);
    VarD x = random_leaf(rng, {3, kDim});
    Probe probe(rng, {3, kDim});
    add("layer_norm", gradient_error([&] { return probe(apply(w, x)); }, {x, w.gain, w.shift}));
  }
  {
    Rng rng(seed + 3);
    VarD x = random_leaf(rng, {3, kDim}, 2.0);
    Probe probe(rng, {3, kDim});
    add("gelu", gradient_error([&] { return probe(ops::gelu(x)); }, {x}));
  }
  {
    Rng rng(seed + 4);
    ParamStore<D> s;
    auto w = make_ffn(s, "ffn", kDim, kHidden, rng);
    perturb(s, rng);
    VarD x = random_leaf(rng, {3, kDim});
    Probe probe(rng, {3, kDim});
    auto inputs = store_inputs(s);
    inputs.push_back(x);
    add("ffn", gradient_error([&] { return probe(ffn(x, w)); }, inputs));
  }
  {
    Rng rng(seed + 5);
    VarD x = random_leaf(rng, {3, 6}, 2.0);
    Probe probe(rng, {3, 6});
    add("softmax", gradient_error([&] { return probe(ops::softmax_rows(x)); }, {x}));
  }
  {
    Rng rng(seed + 6);
    ParamStore<D> s;
    auto w = make_attention(s, "msa", kDim, rng);
    VarD x = random_leaf(rng, {L + 1, kDim});
    Probe probe(rng, {L + 1, kDim});
    auto inputs = store_inputs(s);
    inputs.push_back(x);
    add("msa", gradient_error([&] { return probe(msa(x, w, att)); }, inputs));
  }
  {
    Rng rng(seed + 7);
    ParamStore<D> s;
    auto w = make_attention(s, "mca", kDim, rng);
    VarD x = random_leaf(rng, {L + 1, kDim});
    VarD y = random_leaf(rng, {kActors, kDim});
    Probe probe(rng, {L + 1, kDim});
    auto inputs = store_inputs(s);
    inputs.push_back(x);
    inputs.push_back(y);
    add("mca", gradient_error([&] { return probe(mca(x, y, w, att)); }, inputs));
  }
  {
    Rng rng(seed + 8);
    ParamStore<D> s;
    auto w = make_encoder_layer(s, "enc", att, rng);
    perturb(s, rng);
    VarD x = random_leaf(rng, {L + 1, kDim});
    Probe probe(rng, {L + 1, kDim});
    auto inputs = store_inputs(s);
    inputs.push_back(x);
    add("encoder_layer", gradient_error([&] { return probe(encoder_layer_postnorm(x, w, att)); }, inputs));
  }
  for (std::size_t stacks : {1u, 2u}) {
    Rng rng(seed + 9 + stacks);
    MrseConfig cfg;
    cfg.model_dim = kDim;
    cfg.ffn_hidden = kHidden;
    cfg.heads = kHeads;
    cfg.num_stacks = stacks;
    const GridSpec grid{4, 2};
    ParamStore<D> s;
    auto w = make_mrse(s, "mrse", cfg, rng);
    perturb(s, rng);
    VarD grid_pos = random_leaf(rng, {grid.patch_count(), kDim}, 0.5);
    std::vector<VarD> actors, contexts;
    for (std::size_t n = 0; n < kActors; ++n) {
      actors.push_back(random_leaf(rng, {1, kDim}));
      contexts.push_back(random_leaf(rng, {L, kDim}));
    }
    std::vector<Probe> px, py;
    for (std::size_t n = 0; n < kActors; ++n) {
      px.emplace_back(rng, Shape{L + 1, kDim});
      py.emplace_back(rng, Shape{1, kDim});
    }
    const auto boxes = toy_boxes();
    auto f = [&] {
      MrseInput<D> in;
      for (std::size_t n = 0; n < kActors; ++n) in.sequences.push_back({actors[n], contexts[n], n});
      in.actor_tokens = ops::concat_rows(actors);
      in.boxes = boxes;
      auto pairs = mrse_forward(in, w, cfg, grid, grid_pos);
      std::vector<VarD> terms;
      for (std::size_t n = 0; n < kActors; ++n) {
        terms.push_back(px[n](pairs[n].x));
        terms.push_back(py[n](pairs[n].y));
      }
      return ops::sum_all(ops::concat_rows(terms));
    };
    auto inputs = store_inputs(s);
    inputs.push_back(grid_pos);
    inputs.insert(inputs.end(), actors.begin(), actors.end());
    inputs.insert(inputs.end(), contexts.begin(), contexts.end());
    add(stacks == 1 ? "mrse_stack" : "mrse_two_stacks", gradient_error(f, inputs));
  }
  {
    Rng rng(seed + 12);
    ParamStore<D> s;
    auto mlp = make_mlp(s, "rcm_s", 3 * kDim, 3, rng);
    perturb(s, rng);
    VarD x = random_leaf(rng, {L + 1, kDim});
    VarD y = random_leaf(rng, {1, kDim});
    Probe probe(rng, {1, 3});
    auto inputs = store_inputs(s);
    inputs.push_back(x);
    inputs.push_back(y);
    add("rcm_s", gradient_error([&] { return probe(rcm_s(RelationPair<D>{x, y}, mlp).logits); }, inputs));
  }
  for (bool with_support : {true, false}) {
    Rng rng(seed + 13 + (with_support ? 1 : 0));
    const LongConsensusConfig cfg{3 * kDim, kHeads, 2};
    ParamStore<D> s;
    auto w = make_long_consensus(s, "rcm_l", cfg, 3, rng);
    perturb(s, rng);
    VarD q = random_leaf(rng, {kActors, cfg.width});
    const auto support = with_support ? random_support(rng, cfg.width, cfg.window, 5) : std::vector<SupportFeature>{};
    Probe probe(rng, {kActors, 3});
    auto inputs = store_inputs(s);
    inputs.push_back(q);
    add(with_support ? "rcm_l" : "rcm_l_self_support",
        gradient_error([&] { return probe(rcm_l(q, support, w, cfg)); }, inputs));
  }
  {
    Rng rng(seed + 16);
    VarD logits = random_leaf(rng, {kActors, 3}, 2.0);
    BasicArray<D> targets({kActors, 3});
    for (auto& t : targets.data()) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
    add("bce", gradient_error([&] { return ops::sigmoid_bce(logits, targets); }, {logits}));
  }
  {
    Rng rng(seed + 17);
    VarD x = random_leaf(rng, {2, 5, 6});
    VarD k = random_leaf(rng, {3, 2, 3, 3}, 0.3);
    VarD b = random_leaf(rng, {3}, 0.3);
    Probe probe(rng, {3, 5, 6});
    add("conv2d", gradient_error([&] { return probe(ops::conv2d(x, k, b)); }, {x, k, b}));
  }
  {
    Rng rng(seed + 18);
    VarD x = random_leaf(rng, {2, 9, 11});
    Probe probe(rng, {2, kRoiSide, kRoiSide});
    const ops::NormalizedBox box{0.12, 0.2, 0.81, 0.77};
    add("roi_align", gradient_error([&] { return probe(ops::roi_align(x, box)); }, {x}));
  }
  {
    Rng rng(seed + 19);
    VarD x = random_leaf(rng, {2, 7, 9});
    Probe probe(rng, {2, 4, 4});
    add("adaptive_avg_pool", gradient_error([&] { return probe(ops::adaptive_avg_pool(x, 4)); }, {x}));
  }
  {
    Rng rng(seed + 20);
    VarD x = random_leaf(rng, {3, 4, 4});
    Probe probe(rng, {4, 12});
    add("patchify", gradient_error([&] { return probe(ops::patchify(x, 2)); }, {x}));
  }
  {
    Rng rng(seed + 21);
    BackboneConfig cfg{true, 2, 3, 3, 3};
    ParamStore<D> s;
    auto w = make_backbone(s, "backbone", cfg, rng);
    perturb(s, rng);
    VarD frames = random_leaf(rng, {2, 2, 6, 6});
    Probe probe(rng, {3, 6, 6});
    auto inputs = store_inputs(s);
    inputs.push_back(frames);
    add("toy_backbone", gradient_error([&] { return probe(toy_backbone(frames, w, cfg)); }, inputs));
  }
  {
    // End to end: frames -> backbone -> tokens -> MRSE -> RCM_S -> BCE.
    Rng rng(seed + 22);
    Model<D> model(toy_model_config(), seed + 23);
    perturb(model.params(), rng, 0.05);
    const auto frames = init::normal<D>(rng, {2, 2, 8, 8}, 1.0);
    BasicArray<D> targets({kActors, 3});
    for (auto& t : targets.data()) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const auto boxes = toy_boxes();
    std::vector<VarD> inputs;
    for (const auto& e : model.params().entries()) {
      if (e.name.rfind("long_head", 0) != 0) inputs.push_back(e.var);
    }
    add("mrsn_short_end_to_end", gradient_error(
                                     [&] { return ops::sigmoid_bce(model.forward_short(frames, boxes).logits, targets); },
                                     inputs));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mrsn::verify
