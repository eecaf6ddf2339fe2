#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "prism/error.hpp"
#include "prism/pos_encoding.hpp"

using namespace prism;

namespace {

ad::ParameterSet random_params(const PositionalEncoding& pe, std::uint64_t seed) {
  ad::ParameterSet params;
  Rng rng(seed);
  pe.init_params(params, rng);
  for (auto& p : params)
    for (ad::Index i = 0; i < p->value.size(); ++i) p->value(i) = 0.5 * standard_normal(rng);
  return params;
}

}  // namespace

TEST_CASE("frequency matrix shape and enumeration") {
  auto f4 = build_frequency_matrix(4, PosEncConfig::default_ranges());
  CHECK(f4.rows() == 4);
  CHECK(f4.cols() == 256);

  std::array<FrequencyRange, 4> r{FrequencyRange{0.3, 1.0}, FrequencyRange{0.4, 1.0}, FrequencyRange{0.5, 1.0},
                                  FrequencyRange{0.6, 1.0}};
  auto f1 = build_frequency_matrix(1, r);
  REQUIRE(f1.cols() == 1);
  CHECK(f1(0, 0) == 0.3);
  CHECK(f1(3, 0) == 0.6);

  std::array<FrequencyRange, 4> ones{FrequencyRange{1, 2}, FrequencyRange{1, 2}, FrequencyRange{1, 2},
                                     FrequencyRange{1, 2}};
  auto f2 = build_frequency_matrix(2, ones);
  REQUIRE(f2.cols() == 16);
  std::set<std::array<double, 4>> patterns;
  for (ad::Index j = 0; j < 16; ++j) {
    std::array<double, 4> col{f2(0, j), f2(1, j), f2(2, j), f2(3, j)};
    for (double v : col) CHECK((v == 1.0 || v == 2.0));
    patterns.insert(col);
  }
  CHECK(patterns.size() == 16);

  // linear spacing, min and max inclusive
  auto d = PosEncConfig::default_ranges();
  CHECK(f4(0, 0) == doctest::Approx(d[0].min));
  CHECK(f4(0, 255) == doctest::Approx(d[0].max));
  CHECK(f4(3, 1) - f4(3, 0) == doctest::Approx((d[3].max - d[3].min) / 3.0));
  CHECK(d[0].min == doctest::Approx(2 * std::numbers::pi / 30.0));
  CHECK(d[3].min == doctest::Approx(2 * std::numbers::pi / 256.0));
}

TEST_CASE("encode at the origin") {
  PositionalEncoding pe(PosEncConfig{}, 16);
  auto params = random_params(pe, 1);
  params.at("pe.mlp.b1").value.setZero();
  params.at("pe.mlp.b2").value.setZero();
  params.at("pe.ln.gamma").value.setOnes();
  params.at("pe.ln.beta").value.setZero();
  // MLP(0) = W2 gelu(0) = 0, so the pre-LN value is W_f [0; 1]
  Eigen::VectorXd pre = params.at("pe.W_f").value.rightCols(256).rowwise().sum();
  Eigen::VectorXd expected = (pre.array() - pre.mean()) / std::sqrt((pre.array() - pre.mean()).square().mean() + 1e-6);
  auto got = pe.encode({0, 0, 0, 0}, params);
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode is deterministic and separates time steps") {
  PositionalEncoding pe(PosEncConfig{}, 16);
  auto params = random_params(pe, 2);
  auto a = pe.encode({1.0, 2.0, 3.0, 4.0}, params);
  auto b = pe.encode({1.0, 2.0, 3.0, 4.0}, params);
  CHECK(a == b);
  auto c = pe.encode({1.0, 2.0, 3.0, 5.0}, params);
  CHECK((a - c).norm() > 1e-3);
  CHECK_THROWS_AS(pe.encode({NAN, 0, 0, 0}, params), Error);
}

TEST_CASE("encode_grid rows equal encode, and channel order is irrelevant") {
  PositionalEncoding pe(PosEncConfig{}, 16);
  auto params = random_params(pe, 3);
  auto grid = patchify(testing::noise_recording({"Fp1", "C3", "O2"}, 740, 1), TokenizerConfig{});
  auto rows = pe.encode_grid(grid, params);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK((rows.row(static_cast<ad::Index>(i)).transpose() - pe.encode(grid.tokens[i].coord, params)).cwiseAbs().maxCoeff() < 1e-12);

  auto swapped = patchify(testing::noise_recording({"O2", "C3", "Fp1"}, 740, 1), TokenizerConfig{});
  auto rows2 = pe.encode_grid(swapped, params);
  for (std::size_t t = 0; t < grid.n_time; ++t) {
    CHECK(rows.row(static_cast<ad::Index>(grid.index(0, t))) == rows2.row(static_cast<ad::Index>(swapped.index(2, t))));
    CHECK(rows.row(static_cast<ad::Index>(grid.index(2, t))) == rows2.row(static_cast<ad::Index>(swapped.index(0, t))));
  }

  // 8 of 19 channels: each row equals the matching 19-channel row
  auto full = patchify(testing::noise_recording(testing::first_labels(19), 1100, 2), TokenizerConfig{});
  std::vector<std::string> subset = {"Fp2", "F7", "Fz", "T3", "Cz", "T6", "O1", "Pz"};
  auto part = patchify(testing::noise_recording(subset, 1100, 2), TokenizerConfig{});
  auto pf = pe.encode_grid(full, params);
  auto pp = pe.encode_grid(part, params);
  REQUIRE(pp.rows() == static_cast<ad::Index>(8 * part.n_time));
  for (std::size_t c = 0; c < subset.size(); ++c) {
    const auto& labels = standard_1020_labels();
    const auto fc = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), subset[c]) - labels.begin());
    for (std::size_t t = 0; t < part.n_time; ++t)
      CHECK(pp.row(static_cast<ad::Index>(part.index(c, t))) == pf.row(static_cast<ad::Index>(full.index(fc, t))));
  }
}

TEST_CASE("layer norm statistics of PE rows") {
  PositionalEncoding pe(PosEncConfig{}, 32);
  auto params = random_params(pe, 4);
  params.at("pe.ln.gamma").value.setOnes();
  params.at("pe.ln.beta").value.setZero();
  auto grid = patchify(testing::noise_recording(testing::first_labels(19), 2000, 3), TokenizerConfig{});
  auto rows = pe.encode_grid(grid, params);
  for (ad::Index i = 0; i < rows.rows(); ++i) {
    const double m = rows.row(i).mean();
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs((rows.row(i).array() - m).square().mean() - 1.0) < 1e-5);
  }
}

TEST_CASE("PE gradients match central differences") {
  PositionalEncoding pe(PosEncConfig{}, 8);
  auto params = random_params(pe, 5);
  ad::Matrix coords(5, 4);
  Rng rng(6);
  for (ad::Index i = 0; i < coords.size(); ++i) coords(i) = 4.0 * uniform01(rng) - 2.0;
  ad::Matrix weights(5, 8);
  for (ad::Index i = 0; i < weights.size(); ++i) weights(i) = standard_normal(rng);

  auto loss = [&]() {
    ad::Tape tape;
    auto out = pe.forward(tape, params, coords);
    return ad::sum_all(ad::hadamard(out, tape.constant(weights))).scalar();
  };
  params.zero_grad();
  {
    ad::Tape tape;
    auto out = pe.forward(tape, params, coords);
    tape.backward(ad::sum_all(ad::hadamard(out, tape.constant(weights))));
  }
  for (auto& p : params) {
    double num2 = 0, den2 = 0;
    for (ad::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value(i);
      p->value(i) = orig + 1e-6;
      const double up = loss();
      p->value(i) = orig - 1e-6;
      const double down = loss();
      p->value(i) = orig;
      const double fd = (up - down) / 2e-6;
      num2 += (fd - p->grad(i)) * (fd - p->grad(i));
      den2 += std::max(fd * fd, p->grad(i) * p->grad(i));
    }
    CAPTURE(p->name);
    CHECK(std::sqrt(num2 / den2) < 1e-4);
  }
}

TEST_CASE("pos-encoding config validation") {
  PosEncConfig cfg;
  cfg.n_freq = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.ranges[2] = {1.0, 1.0};
  CHECK_THROWS_AS(validate(cfg), Error);
}
