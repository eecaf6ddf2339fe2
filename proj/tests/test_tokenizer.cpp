#include <algorithm>
#include <set>
#include <tuple>

#include "doctest.h"
#include "helpers.hpp"
#include "prism/error.hpp"
#include "prism/tokenizer.hpp"

using namespace prism;

TEST_CASE("patch count and start indices") {
  TokenizerConfig cfg;
  CHECK(cfg.step() == 180);
  CHECK(patch_count(2000, 200, 180) == 11);
  CHECK(patch_count(200, 200, 180) == 1);
  CHECK(patch_count(199, 200, 180) == 0);

  auto rec = testing::noise_recording({"Cz"}, 2000, 1);
  auto grid = patchify(rec, cfg);
  REQUIRE(grid.n_time == 11);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + 200 <= 2000; s += 180) starts.push_back(s);
  REQUIRE(starts.size() == 11);
  CHECK(starts.back() == 1800);
  for (std::size_t t = 0; t < grid.n_time; ++t)
    for (int k = 0; k < 200; ++k)
      CHECK(grid.patches(static_cast<ad::Index>(t), k) == rec.signal.at(0, starts[t] + static_cast<std::size_t>(k)));
}

TEST_CASE("19 channels x 2000 samples gives 209 tokens with montage coordinates") {
  auto labels = testing::first_labels(19);
  auto grid = patchify(testing::noise_recording(labels, 2000, 2), TokenizerConfig{});
  CHECK(grid.size() == 209);
  CHECK(grid.n_channels == 19);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  const auto& m = MontageMap::standard_1020();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& tok = grid.tokens[i];
    CHECK(grid.index(tok.channel, tok.time) == i);
    seen.insert({tok.channel, tok.time});
    const auto& pos = m.at(grid.channel_names[tok.channel]);
    CHECK(tok.coord[0] == pos.x);
    CHECK(tok.coord[1] == pos.y);
    CHECK(tok.coord[2] == pos.z);
    CHECK(tok.coord[3] == static_cast<double>(tok.time));
  }
  CHECK(seen.size() == 209);
}

TEST_CASE("single patch covers the whole signal") {
  auto rec = testing::noise_recording({"C3", "C4"}, 200, 3);
  auto grid = patchify(rec, TokenizerConfig{});
  REQUIRE(grid.size() == 2);
  for (int k = 0; k < 200; ++k) CHECK(grid.patches(1, k) == rec.signal.at(1, static_cast<std::size_t>(k)));
}

TEST_CASE("patchify errors") {
  TokenizerConfig cfg;
  CHECK_THROWS_AS(patchify(testing::noise_recording({"Cz"}, 150, 1), cfg), Error);
  CHECK_THROWS_AS(patchify(testing::noise_recording({"Cz"}, 1000, 1, 256.0), cfg), Error);
  auto rec = testing::noise_recording({"Cz"}, 1000, 1);
  rec.channel_names = {"A1"};
  CHECK_THROWS_AS(patchify(rec, cfg), Error);

  TokenizerConfig bad;
  bad.overlap_samples = 200;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = {};
  bad.embed_dim = 7;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("embedding matches a naive matvec and is linear") {
  auto grid = patchify(testing::noise_recording({"F3", "F4", "Pz"}, 740, 4), TokenizerConfig{});
  Rng rng(9);
  ad::Matrix w(16, 200);
  for (ad::Index i = 0; i < w.size(); ++i) w(i) = standard_normal(rng);
  embed(grid, w);
  REQUIRE(grid.embeddings.rows() == static_cast<ad::Index>(grid.size()));
  REQUIRE(grid.embeddings.cols() == 16);
  for (ad::Index n = 0; n < grid.embeddings.rows(); ++n)
    for (ad::Index d = 0; d < 16; ++d) {
      double s = 0.0;
      for (ad::Index k = 0; k < 200; ++k) s += w(d, k) * grid.patches(n, k);
      CHECK(std::abs(grid.embeddings(n, d) - s) < 1e-6);
    }

  // linearity: embed(a p1 + b p2) = a embed(p1) + b embed(p2)
  TokenGrid g1 = grid, g2 = grid, mix = grid;
  g2.patches = grid.patches.reverse();
  mix.patches = 2.5 * g1.patches - 0.75 * g2.patches;
  embed(g1, w);
  embed(g2, w);
  embed(mix, w);
  CHECK((mix.embeddings - (2.5 * g1.embeddings - 0.75 * g2.embeddings)).cwiseAbs().maxCoeff() < 1e-9);

  TokenGrid zero = grid;
  zero.patches.setZero();
  embed(zero, w);
  CHECK(zero.embeddings.isZero(0.0));

  TokenGrid ident = grid;
  embed(ident, ad::Matrix::Identity(200, 200));
  CHECK(ident.embeddings == ident.patches);

  CHECK_THROWS_AS(embed(ident, ad::Matrix::Zero(16, 100)), Error);
}

TEST_CASE("overlap average inverts patchify") {
  auto rec = testing::noise_recording({"C3", "Cz"}, 1000, 5);
  auto grid = patchify(rec, TokenizerConfig{});  // 5 patches cover samples [0, 920)
  auto back = overlap_average(grid);
  REQUIRE(back.rows() == 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (ad::Index t = 0; t < back.cols(); ++t) {
      const bool covered = static_cast<std::size_t>(t) < 920;
      CHECK(back(static_cast<ad::Index>(c), t) == (covered ? rec.signal.at(c, static_cast<std::size_t>(t)) : 0.0));
    }

  // overlap regions hold the arithmetic mean of the covering patches
  grid.patches.row(grid.index(0, 1)).array() += 1.0;
  back = overlap_average(grid);
  CHECK(back(0, 185) == doctest::Approx(rec.signal.at(0, 185) + 0.5));   // patches 0 and 1
  CHECK(back(0, 250) == doctest::Approx(rec.signal.at(0, 250) + 1.0));   // patch 1 only
  CHECK(back(0, 365) == doctest::Approx(rec.signal.at(0, 365) + 0.5));   // patches 1 and 2
  CHECK(back(0, 100) == rec.signal.at(0, 100));
}

TEST_CASE("channel permutation permutes tokens") {
  auto rec = testing::noise_recording({"Fp1", "Cz", "O2"}, 1100, 6);
  Recording perm = rec;
  perm.channel_names = {"O2", "Fp1", "Cz"};
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t c = 0; c < 3; ++c)
    std::copy(rec.signal.row(order[c]).begin(), rec.signal.row(order[c]).end(), perm.signal.row(c).begin());
  auto a = patchify(rec, TokenizerConfig{});
  auto b = patchify(perm, TokenizerConfig{});
  CHECK(a.size() == b.size());
  using Key = std::tuple<double, double, double, double, double, double>;
  auto keys = [](const TokenGrid& g) {
    std::multiset<Key> out;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& c = g.tokens[i].coord;
      out.insert({c[0], c[1], c[2], c[3], g.patches(static_cast<ad::Index>(i), 0),
                  g.patches(static_cast<ad::Index>(i), 199)});
    }
    return out;
  };
  CHECK(keys(a) == keys(b));
}
