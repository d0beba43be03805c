#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mrsn/tokenization.hpp"

using namespace mrsn;
using testing::max_abs_diff;
using testing::random_array;

TEST_CASE("grid spec: p must divide S; L is (S/p)^2") {
  const GridSpec full{16, 2};
  CHECK(full.grid_side() == 8);
  CHECK(full.patch_count() == 64);
  CHECK_THROWS_AS(GridSpec({15, 2}).validate(), ConfigError);
  CHECK_THROWS_AS(GridSpec({16, 0}).validate(), ConfigError);
}

TEST_CASE("pool_to_grid: constants, identity and 2x2 block means") {
  const GridSpec grid{16, 2};
  for (auto [w, h] : {std::pair{5, 9}, std::pair{16, 16}, std::pair{33, 20}}) {
    DenseArray f({2, std::size_t(w), std::size_t(h)}, 3.25f);
    const auto out = pool_to_grid(Var<float>::constant(f), grid).value();
    CHECK(out.shape() == Shape{2, 16, 16});
    for (float v : out.data()) CHECK(v == doctest::Approx(3.25f));
  }
  const auto same = random_array({3, 16, 16}, 1);
  CHECK(pool_to_grid(Var<float>::constant(same), grid).value() == same);

  const auto big = random_array({2, 32, 32}, 2);
  const auto pooled = pool_to_grid(Var<float>::constant(big), grid).value();
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = 0; j < 16; ++j) {
        const float want = (big.at(c, 2 * i, 2 * j) + big.at(c, 2 * i, 2 * j + 1) + big.at(c, 2 * i + 1, 2 * j) +
                            big.at(c, 2 * i + 1, 2 * j + 1)) / 4.0f;
        CHECK(pooled.at(c, i, j) == doctest::Approx(want).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("pool_to_grid: odd sizes follow the floor/ceil region rule") {
  const GridSpec grid{4, 2};
  const auto f = random_array({1, 7, 5}, 3);
  const auto out = pool_to_grid(Var<float>::constant(f), grid).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t r0 = i * 7 / 4, r1 = ((i + 1) * 7 + 3) / 4;
      const std::size_t c0 = j * 5 / 4, c1 = ((j + 1) * 5 + 3) / 4;
      double sum = 0;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) sum += f.at(0, r, c);
      }
      CHECK(out.at(0, i, j) == doctest::Approx(sum / double((r1 - r0) * (c1 - c0))).epsilon(1e-6));
    }
  }
}

TEST_CASE("pool_to_grid: idempotent on S x S input") {
  const GridSpec grid{8, 2};
  auto once = pool_to_grid(Var<float>::constant(random_array({2, 19, 11}, 4)), grid);
  CHECK(pool_to_grid(once, grid).value() == once.value());
}

TEST_CASE("patch_embed: 64 tokens at S=16, p=2; zero weights give the bias") {
  ParamStore<float> s;
  Rng rng(5);
  const GridSpec grid{16, 2};
  auto proj = make_linear(s, "p", 3 * 4, 8, rng);
  const auto tokens = patch_embed(Var<float>::constant(random_array({3, 16, 16}, 6)), grid, proj).value();
  CHECK(tokens.shape() == Shape{64, 8});

  testing::zero_var(proj.weight);
  for (std::size_t i = 0; i < 8; ++i) const_cast<Var<float>&>(proj.bias).mutable_value()[i] = float(i) - 3;
  const auto flat = patch_embed(Var<float>::constant(random_array({3, 16, 16}, 7)), grid, proj).value();
  for (std::size_t r = 0; r < 64; ++r) CHECK(testing::row_of(flat, r) == proj.bias.value());
}

TEST_CASE("patch_embed: token k depends only on patch k, in row-major grid order") {
  ParamStore<float> s;
  Rng rng(8);
  const GridSpec grid{4, 2};
  auto proj = make_linear(s, "p", 2 * 4, 6, rng);
  const auto base = random_array({2, 4, 4}, 9);
  const auto ref = patch_embed(Var<float>::constant(base), grid, proj).value();
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t gi = k / 2, gj = k % 2;  // grid row, grid column
    DenseArray probe = base;
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t di = 0; di < 2; ++di) {
        for (std::size_t dj = 0; dj < 2; ++dj) probe.at(c, gi * 2 + di, gj * 2 + dj) += 1.0f;
      }
    }
    const auto out = patch_embed(Var<float>::constant(probe), grid, proj).value();
    for (std::size_t r = 0; r < 4; ++r) {
      if (r == k) {
        CHECK(testing::row_of(out, r) != testing::row_of(ref, r));
      } else {
        CHECK(testing::row_of(out, r) == testing::row_of(ref, r));
      }
    }
  }
}

TEST_CASE("patch_embed: flattening is channel-major then row-major") {
  ParamStore<float> s;
  Rng rng(10);
  const GridSpec grid{2, 2};
  auto proj = make_linear(s, "p", 2 * 4, 8, rng);
  // Identity projection exposes the flattened patch directly.
  auto& w = const_cast<Var<float>&>(proj.weight).mutable_value();
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) w.at(i, j) = i == j ? 1.0f : 0.0f;
  }
  DenseArray f({2, 2, 2}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7});
  const auto out = patch_embed(Var<float>::constant(f), grid, proj).value();
  for (std::size_t i = 0; i < 8; ++i) CHECK(out[i] == float(i));
}

TEST_CASE("actor_embed: zero RoI gives the bias; identical RoIs give identical tokens") {
  ParamStore<float> s;
  Rng rng(11);
  auto proj = make_linear(s, "a", 2 * 49, 8, rng);
  for (std::size_t i = 0; i < 8; ++i) const_cast<Var<float>&>(proj.bias).mutable_value()[i] = 0.5f * float(i);
  const auto zero = actor_embed(Var<float>::constant(DenseArray({2, 7, 7})), proj).value();
  CHECK(zero.reshaped({8}) == proj.bias.value());
  const auto roi = random_array({2, 7, 7}, 12);
  CHECK(actor_embed(Var<float>::constant(roi), proj).value() == actor_embed(Var<float>::constant(roi), proj).value());
  CHECK_THROWS_AS(actor_embed(Var<float>::constant(DenseArray({2, 6, 7})), proj), DimensionError);
}

TEST_CASE("assemble_sequence: three actors share context, length L+1") {
  ParamStore<float> s;
  Rng rng(13);
  const GridSpec grid{16, 2};
  auto w = make_tokenizer(s, "t", grid, 3, 8, rng);
  const auto context = patch_embed(Var<float>::constant(random_array({3, 16, 16}, 14)), grid, w.patch_projection);
  std::vector<TokenSequence<float>> seqs;
  for (std::size_t n = 0; n < 3; ++n) {
    auto actor = Var<float>::constant(random_array({1, 8}, 20 + n));
    seqs.push_back(assemble_sequence(actor, context, w, n));
  }
  for (const auto& seq : seqs) {
    CHECK(seq.length() == 65);
    CHECK(seq.joined().shape() == Shape{65, 8});
    CHECK(seq.context_tokens.value() == seqs[0].context_tokens.value());
  }
  CHECK(seqs[2].actor_index == 2);
}

TEST_CASE("assemble_sequence: zero embeddings leave raw tokens; embeddings are added") {
  ParamStore<float> s;
  Rng rng(15);
  const GridSpec grid{4, 2};
  auto w = make_tokenizer(s, "t", grid, 2, 8, rng);
  auto actor = Var<float>::constant(random_array({1, 8}, 16));
  auto context = Var<float>::constant(random_array({4, 8}, 17));
  auto seq = assemble_sequence(actor, context, w, 0);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(seq.actor_token.value()[i] == doctest::Approx(actor.value()[i] + w.actor_embedding.value()[i]));
  }
  CHECK(max_abs_diff(seq.context_tokens.value(),
                     ops::add(context, w.context_positions).value()) == 0.0);
  testing::zero_var(w.actor_embedding);
  testing::zero_var(w.context_positions);
  seq = assemble_sequence(actor, context, w, 0);
  CHECK(seq.actor_token.value() == actor.value());
  CHECK(seq.context_tokens.value() == context.value());
}

TEST_CASE("tokenizer: embedding tables are normal(0, 0.02) and the two position tables are separate") {
  ParamStore<float> s;
  Rng rng(18);
  const GridSpec grid{16, 2};
  auto w = make_tokenizer(s, "t", grid, 4, 64, rng);
  CHECK(w.context_positions.shape() == Shape{64, 64});
  CHECK(w.grid_positions.shape() == Shape{64, 64});
  CHECK(w.context_positions.node() != w.grid_positions.node());
  CHECK(w.context_positions.value() != w.grid_positions.value());
  double sum = 0, sq = 0;
  for (float v : w.context_positions.value().data()) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = double(w.context_positions.value().size());
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("actor_position_index: examples and clamping") {
  const GridSpec grid{16, 2};  // G = 8
  CHECK(actor_position_index({0, 0, 0.25, 0.25}, grid) == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK(actor_position_index({0.9, 0.9, 1, 1}, grid) == std::pair<std::size_t, std::size_t>{8, 8});
  CHECK(actor_position_index({0, 0, 0, 0}, grid) == std::pair<std::size_t, std::size_t>{1, 1});
  // x drives i, y drives j.
  CHECK(actor_position_index({0.5, 0.0, 0.7, 0.1}, grid) == std::pair<std::size_t, std::size_t>{5, 1});
}

TEST_CASE("actor_position_index: boxes centered in the same cell share an index") {
  const GridSpec grid{16, 2};
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const double cx = rng.uniform(0.01, 0.99), cy = rng.uniform(0.01, 0.99);
    const double cell_x = std::ceil(cx * 8) / 8 - 1e-3, cell_y = std::ceil(cy * 8) / 8 - 1e-3;
    const ActorBox a{cx - 0.01, cy - 0.01, cx + 0.01, cy + 0.01};
    const ActorBox b{cell_x - 0.005, cell_y - 0.005, cell_x + 0.005, cell_y + 0.005};
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > 1 || b.y2 > 1) continue;
    CHECK(actor_position_index(a, grid) == actor_position_index(b, grid));
  }
}

TEST_CASE("distance_embedding: 21 rows at window 10, distinct rows, boundaries") {
  ParamStore<float> s;
  Rng rng(20);
  auto table = s.add("d", init::normal<float>(rng, {21, 6}, 0.02));
  CHECK(distance_embedding(0, table, 10).value() != distance_embedding(1, table, 10).value());
  CHECK_NOTHROW(distance_embedding(-10, table, 10));
  CHECK_NOTHROW(distance_embedding(10, table, 10));
  CHECK_THROWS_AS(distance_embedding(11, table, 10), RangeError);
  CHECK_THROWS_AS(distance_embedding(-11, table, 10), RangeError);
  // Offset -10 is row 0.
  CHECK(distance_embedding(-10, table, 10).value().reshaped({6}) == testing::row_of(table.value(), 0));
}

TEST_CASE("actor box validation") {
  CHECK_THROWS_AS(ActorBox({0.5, 0, 0.4, 1}).validate(), RangeError);
  CHECK_THROWS_AS(ActorBox({0, 0, 1.2, 1}).validate(), RangeError);
  CHECK_THROWS_AS(ActorBox({0, 0, 1, 1, 1.5}).validate(), RangeError);
  CHECK_NOTHROW(ActorBox({0, 0, 1, 1, 1.0}).validate());
}
