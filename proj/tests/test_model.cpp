#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "tse/gradcheck.hpp"
#include "tse/model.hpp"
#include "tse/prompt_bank.hpp"

using namespace tse;
using DTensor = Tensor<double>;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.codec.n_filters = 8;
  cfg.codec.filter_len = 4;
  cfg.codec.hop = 2;
  cfg.codec.sample_rate = 8000;
  cfg.embed_dim = 8;
  cfg.text.width = 8;
  cfg.text.heads = 2;
  cfg.text.blocks = 2;
  cfg.text.mlp_mult = 2;
  cfg.text.lora_rank = 2;
  cfg.text.lora_alpha = 2.0;
  cfg.audio_cue.bottleneck = 8;
  cfg.audio_cue.hidden = 8;
  cfg.audio_cue.tcn_blocks = 1;
  cfg.masknet.bottleneck = 8;
  cfg.masknet.hidden = 8;
  cfg.masknet.stacks = 2;
  cfg.masknet.blocks_per_stack = 1;
  return cfg;
}

TseModel<double> tiny_model(std::uint64_t seed = 3) {
  Rng rng(seed);
  auto vocab = Vocabulary::build(bank_word_list(PromptBank::built_in(1)));
  return TseModel<double>(rng, vocab, tiny_config());
}

}  // namespace

TEST_CASE("fuse") {
  auto model = tiny_model();
  Rng rng(1);
  auto text = model.encode_text_cue("extract the louder speaker", rng, false);
  DTensor enr = DTensor::uniform(rng, {64}, -0.3, 0.3);
  auto audio = model.encode_audio_cue(enr);

  SUBCASE("both cues concatenate to 2E with the audio slot first") {
    auto fused = model.fuse(&audio, &text);
    CHECK(fused.shape() == Shape{16});
    for (int i = 0; i < 8; ++i) CHECK(fused.at(i) == audio.vector.at(i));
    for (int i = 0; i < 8; ++i) CHECK(fused.at(8 + i) == text.vector.at(i));
  }

  SUBCASE("missing audio takes the learned null vector") {
    auto fused = model.fuse(nullptr, &text);
    auto fused2 = model.fuse(nullptr, &text);
    CHECK(fused.values() == fused2.values());
    for (int i = 0; i < 8; ++i) CHECK(fused.at(8 + i) == text.vector.at(i));
    // the audio slot is not the text vector
    double diff = 0.0;
    for (int i = 0; i < 8; ++i) diff += std::abs(fused.at(i) - text.vector.at(i));
    CHECK(diff > 1e-9);
  }

  SUBCASE("no cue at all is an error") {
    CHECK_THROWS_AS(model.fuse(nullptr, nullptr), NoCueError);
  }
}

TEST_CASE("mask properties over random draws") {
  auto model = tiny_model();
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int frames = 2 + rng.uniform_int(30);
    DTensor x = DTensor::uniform(rng, {frames, 8}, -2.0, 2.0);
    DTensor z = DTensor::uniform(rng, {16}, -1.0, 1.0);
    auto mask = model.estimate_mask(x, z);
    CHECK(mask.shape() == x.shape());
    for (double v : mask.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("apply_mask") {
  Rng rng(7);
  DTensor x = DTensor::uniform(rng, {12, 8}, -1.0, 1.0);

  SUBCASE("all-ones mask is the identity") {
    auto y = apply_mask(x, DTensor::full({12, 8}, 1.0));
    CHECK(y.values() == x.values());
  }

  SUBCASE("all-zeros mask silences") {
    auto y = apply_mask(x, DTensor(Shape{12, 8}));
    for (double v : y.values()) CHECK(v == 0.0);
  }

  SUBCASE("bilinear in the features") {
    DTensor m = DTensor::uniform(rng, {12, 8}, 0.0, 1.0);
    auto lhs = apply_mask(scale(x, 3.0), m);
    auto rhs = scale(apply_mask(x, m), 3.0);
    for (std::int64_t i = 0; i < lhs.size(); ++i)
      CHECK(lhs.values()[i] == doctest::Approx(rhs.values()[i]).epsilon(1e-12));
  }

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(apply_mask(x, DTensor(Shape{12, 4})), DimensionError);
  }
}

TEST_CASE("uniform half mask halves the decoded waveform") {
  auto model = tiny_model();
  Rng rng(9);
  DTensor mix = DTensor::uniform(rng, {64}, -0.5, 0.5);
  auto features = model.encode_mixture(mix);
  auto full = model.decode_features(features, 64);
  auto half = model.decode_features(apply_mask(features, DTensor::full(features.shape(), 0.5)), 64);
  for (int i = 0; i < 64; ++i)
    CHECK(half.at(i) == doctest::Approx(0.5 * full.at(i)).epsilon(1e-9));
}

TEST_CASE("extraction pipeline") {
  auto model = tiny_model();
  Rng rng(11);

  SUBCASE("output length equals input length") {
    for (int len : {64, 100, 257}) {
      AudioBuffer mix;
      mix.sample_rate = 8000;
      mix.samples.resize(static_cast<std::size_t>(len));
      for (auto& v : mix.samples) v = static_cast<float>(rng.uniform(-0.3, 0.3));
      const std::string prompt = "extract the louder speaker";
      auto out = model.extract_waveform(mix, nullptr, &prompt);
      CHECK(out.length() == len);
    }
  }

  SUBCASE("deterministic for fixed parameters and inputs") {
    AudioBuffer mix;
    mix.sample_rate = 8000;
    mix.samples.resize(128);
    for (auto& v : mix.samples) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    AudioBuffer enr = mix;
    const std::string prompt = "keep the near field voice";
    auto a = model.extract_waveform(mix, &enr, &prompt);
    auto b = model.extract_waveform(mix, &enr, &prompt);
    CHECK(a.samples == b.samples);
  }

  SUBCASE("no cue fails") {
    AudioBuffer mix;
    mix.sample_rate = 8000;
    mix.samples.resize(64);
    CHECK_THROWS_AS(model.extract_waveform(mix, nullptr, nullptr), NoCueError);
  }

  SUBCASE("wrong sample rate fails") {
    AudioBuffer mix;
    mix.sample_rate = 16000;
    mix.samples.resize(64, 0.1f);
    const std::string prompt = "extract the louder speaker";
    CHECK_THROWS_AS(model.extract_waveform(mix, nullptr, &prompt), DimensionError);
  }
}

TEST_CASE("parameter registry") {
  auto model = tiny_model();
  auto all = model.all_parameters();
  std::set<std::string> names;
  for (auto& [name, t] : all) names.insert(name);
  CHECK(names.size() == all.size());  // unique names

  auto trainable = model.trainable_parameters();
  CHECK(trainable.size() < all.size());  // the frozen text base is excluded
  for (auto& [name, t] : trainable) CHECK(t.requires_grad());
}

TEST_CASE("end-to-end gradients on a miniature pipeline") {
  auto model = tiny_model(21);
  Rng rng(13);
  auto text_ids = tokenize("extract the louder speaker", model.vocab());

  // perturb the mixture, both codec filter banks, the null audio cue, and a
  // masknet weight through the shared parameter handles
  std::vector<DTensor> inputs = {DTensor::uniform(rng, {64}, -0.5, 0.5)};
  Tensor<double> analysis, synthesis, null_audio, cond_w, proj_w;
  for (auto& [name, t] : model.all_parameters()) {
    if (name == "codec.analysis") analysis = t;
    if (name == "codec.synthesis") synthesis = t;
    if (name == "null.audio") null_audio = t;
    if (name == "mask.cond.w") cond_w = t;
    if (name == "text.proj.w") proj_w = t;
  }
  inputs.push_back(analysis);
  inputs.push_back(synthesis);
  inputs.push_back(null_audio);
  inputs.push_back(cond_w);
  inputs.push_back(proj_w);

  auto fn = [&](std::vector<DTensor>& in) {
    Rng drng(1);
    auto text_cue = model.text_encoder().encode(text_ids, drng, false);
    return model.extract(in[0], nullptr, &text_cue);
  };
  const double err = grad_check(fn, inputs, 1e-5);
  CHECK(err < 1e-3);
}
