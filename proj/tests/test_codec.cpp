#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tse/codec.hpp"
#include "tse/gradcheck.hpp"

using tse::CodecConfig;
using tse::Rng;
using tse::Shape;
using DTensor = tse::Tensor<double>;

TEST_CASE("frame count formula at paper scale") {
  CodecConfig cfg;
  cfg.n_filters = 64;
  cfg.filter_len = 16;
  cfg.hop = 8;
  cfg.sample_rate = 16000;
  CHECK(cfg.frame_count(96000) == 11999);
  CHECK(cfg.raw_output_len(11999) == 96000);
  CHECK_THROWS_AS(cfg.frame_count(8), tse::DimensionError);
}

TEST_CASE("config validation") {
  CodecConfig bad;
  bad.hop = 20;
  bad.filter_len = 16;
  CHECK_THROWS_AS(bad.validate(), tse::ConfigError);
  bad = CodecConfig{};
  bad.n_filters = 0;
  CHECK_THROWS_AS(bad.validate(), tse::ConfigError);
}

TEST_CASE("encode is linear in the signal") {
  Rng rng(21);
  CodecConfig cfg;
  cfg.n_filters = 8;
  tse::FilterBank<double> bank(rng, cfg);
  DTensor x = DTensor::uniform(rng, {200}, -1.0, 1.0);
  DTensor x3 = tse::scale(x, 3.0);
  auto fx = tse::encode(x, cfg, bank.analysis);
  auto fx3 = tse::encode(x3, cfg, bank.analysis);
  for (std::int64_t i = 0; i < fx.size(); ++i)
    CHECK(fx3.values()[i] == doctest::Approx(3.0 * fx.values()[i]));
}

TEST_CASE("impulse with a delta filter reproduces the decimated impulse") {
  CodecConfig cfg;
  cfg.n_filters = 2;
  cfg.filter_len = 4;
  cfg.hop = 2;
  // filter 0 = [1, 0, 0, 0]
  DTensor filters(Shape{2, 4});
  filters.at(0, 0) = 1.0;
  DTensor x(Shape{20});
  x.at(6) = 1.0;  // impulse at a frame boundary (6 = 3 * hop)
  auto frames = tse::encode(x, cfg, filters);
  for (int k = 0; k < frames.dim(0); ++k)
    CHECK(frames.at(k, 0) == (k == 3 ? 1.0 : 0.0));
}

TEST_CASE("decode length contract and zero map") {
  Rng rng(22);
  CodecConfig cfg;
  cfg.n_filters = 8;
  tse::FilterBank<double> bank(rng, cfg);
  DTensor zero_frames(Shape{19, 8});
  auto silent = tse::decode(zero_frames, cfg, bank.synthesis, 160);
  CHECK(silent.shape() == Shape{160});
  for (double v : silent.values()) CHECK(v == 0.0);
}

TEST_CASE("round trip produces finite output of the right length, not the input") {
  Rng rng(23);
  CodecConfig cfg;
  cfg.n_filters = 16;
  tse::FilterBank<double> bank(rng, cfg);
  DTensor x = DTensor::uniform(rng, {320}, -1.0, 1.0);
  auto frames = tse::encode(x, cfg, bank.analysis);
  auto y = tse::decode(frames, cfg, bank.synthesis, 320);
  CHECK(y.shape() == Shape{320});
  double diff = 0.0;
  for (int i = 0; i < 320; ++i) {
    CHECK(std::isfinite(y.at(i)));
    diff += std::abs(y.at(i) - x.at(i));
  }
  CHECK(diff > 1e-3);  // random filters do not reconstruct
}

TEST_CASE("round trip length bookkeeping over random configs") {
  Rng rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    CodecConfig cfg;
    cfg.filter_len = 2 + rng.uniform_int(30);
    cfg.hop = 1 + rng.uniform_int(cfg.filter_len);
    cfg.n_filters = 1 + rng.uniform_int(8);
    cfg.validate();
    const int t_len = cfg.filter_len + rng.uniform_int(500);
    tse::FilterBank<double> bank(rng, cfg);
    DTensor x = DTensor::uniform(rng, {t_len}, -1.0, 1.0);
    auto frames = tse::encode(x, cfg, bank.analysis);
    CHECK(frames.dim(0) == cfg.frame_count(t_len));
    auto y = tse::decode(frames, cfg, bank.synthesis, t_len);
    CHECK(y.dim(0) == t_len);
  }
}

TEST_CASE("codec gradients pass the finite-difference oracle") {
  Rng rng(25);
  CodecConfig cfg;
  cfg.n_filters = 4;
  cfg.filter_len = 8;
  cfg.hop = 4;
  std::vector<DTensor> inputs = {
      DTensor::uniform(rng, {64}, -1.0, 1.0),
      DTensor::uniform(rng, {4, 8}, -0.5, 0.5),
      DTensor::uniform(rng, {4, 8}, -0.5, 0.5),
  };
  auto fn = [cfg](std::vector<DTensor>& in) {
    auto frames = tse::encode(in[0], cfg, in[1]);
    return tse::decode(frames, cfg, in[2], 64);
  };
  CHECK(tse::grad_check(fn, inputs, 1e-5) < 1e-4);
}
