#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "tse/cue_encoders.hpp"
#include "tse/prompt_bank.hpp"

using namespace tse;
using DTensor = Tensor<double>;

namespace {

Vocabulary test_vocab() { return Vocabulary::build(bank_word_list(PromptBank::built_in(1))); }

TextEncoder<double> small_encoder(const Vocabulary& vocab, int blocks = 2) {
  Rng rng(5);
  TextEncoderConfig cfg;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.blocks = blocks;
  cfg.lora_rank = 8;
  cfg.lora_alpha = 8.0;
  cfg.embed_dim = 24;
  return TextEncoder<double>(rng, vocab.size(), cfg);
}

}  // namespace

TEST_CASE("vocabulary basics") {
  auto vocab = test_vocab();
  CHECK(vocab.token(Vocabulary::kPadId) == "<pad>");
  CHECK(vocab.token(vocab.unknown_id()) == "<unk>");
  CHECK(vocab.token(vocab.begin_id()) == "<s>");

  // bijective over its own tokens
  for (int i = 0; i < vocab.size(); ++i)
    if (i > 2) CHECK(vocab.id(vocab.token(i)) == i);

  SUBCASE("file round trip, one token per line") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "tse_vocab.txt").string();
    vocab.save(path);
    auto loaded = Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    for (int i = 0; i < vocab.size(); ++i) CHECK(loaded.token(i) == vocab.token(i));
    fs::remove(path);
  }
}

TEST_CASE("tokenize") {
  auto vocab = test_vocab();

  SUBCASE("known words map to known ids") {
    auto ids = tokenize("extract the louder speaker", vocab);
    CHECK(ids.size() == 4);
    for (int id : ids) CHECK(id > 2);  // no specials, no unknowns
  }

  SUBCASE("out-of-vocabulary word maps to the unknown id in place") {
    auto ids = tokenize("extract the zorblatt speaker", vocab);
    CHECK(ids.size() == 4);
    CHECK(ids[2] == vocab.unknown_id());
    CHECK(ids[0] != vocab.unknown_id());
  }

  SUBCASE("deterministic") {
    CHECK(tokenize("keep the near field voice", vocab) ==
          tokenize("keep the near field voice", vocab));
  }

  SUBCASE("empty prompt is rejected") {
    CHECK_THROWS_AS(tokenize("", vocab), ContractError);
    CHECK_THROWS_AS(tokenize("  ...  ", vocab), ContractError);
  }
}

TEST_CASE("lora adapter") {
  SUBCASE("zero B leaves the base output unchanged") {
    Rng rng(7);
    LoraAdapter<double> adapter(rng, 6, 6, 3, 3.0, 0.0);
    DTensor x = DTensor::uniform(rng, {4, 6}, -1.0, 1.0);
    DTensor base = DTensor::uniform(rng, {4, 6}, -1.0, 1.0);
    auto out = lora_apply(adapter, base, x, rng, false);
    for (std::int64_t i = 0; i < out.size(); ++i)
      CHECK(out.values()[i] == base.values()[i]);
  }

  SUBCASE("rank 16 with alpha 16 scales the update by exactly one") {
    Rng rng(8);
    LoraAdapter<double> adapter(rng, 16, 16, 16, 16.0, 0.0);
    for (auto& v : adapter.b.values()) v = rng.uniform(-0.5, 0.5);
    DTensor x = DTensor::uniform(rng, {3, 16}, -1.0, 1.0);
    DTensor base(Shape{3, 16});
    auto out = lora_apply(adapter, base, x, rng, false);
    auto manual = matmul(matmul(x, transpose(adapter.a)), transpose(adapter.b));
    for (std::int64_t i = 0; i < out.size(); ++i)
      CHECK(out.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));
  }

  SUBCASE("rank-1 hand case adds 2*x0") {
    LoraAdapter<double> adapter;
    adapter.rank = 1;
    adapter.alpha = 1.0;
    adapter.dropout_p = 0.0;
    adapter.a = DTensor::from({1, 2}, {1, 0});
    adapter.b = DTensor::from({1, 1}, {2});
    DTensor x = DTensor::from({1, 2}, {0.7, -0.3});
    DTensor base = DTensor::from({1, 1}, {0.1});
    Rng rng(1);
    auto out = lora_apply(adapter, base, x, rng, false);
    CHECK(out.value() == doctest::Approx(0.1 + 2.0 * 0.7));
  }

  SUBCASE("rank above min(d_in, d_out) is a configuration error") {
    Rng rng(9);
    CHECK_THROWS_AS(LoraAdapter<double>(rng, 4, 8, 5, 1.0, 0.0), ConfigError);
  }
}

TEST_CASE("text encoder") {
  auto vocab = test_vocab();

  SUBCASE("adapters are an exact identity at initialization") {
    auto enc = small_encoder(vocab);
    Rng rng(3);
    for (const char* prompt :
         {"extract the louder speaker", "please keep the near field voice now",
          "remove the given voice"}) {
      auto ids = tokenize(prompt, vocab);
      auto adapted = enc.encode(ids, rng, false, true);
      auto base = enc.encode(ids, rng, false, false);
      double max_diff = 0.0;
      for (std::int64_t i = 0; i < adapted.vector.size(); ++i)
        max_diff = std::max(max_diff, std::abs(adapted.vector.values()[i] -
                                               base.vector.values()[i]));
      CHECK(max_diff == 0.0);
    }
  }

  SUBCASE("requesting more averaged blocks than exist fails at build time") {
    Rng rng(5);
    TextEncoderConfig cfg;
    cfg.blocks = 2;
    cfg.avg_last_blocks = 4;
    CHECK_THROWS_AS(TextEncoder<double>(rng, vocab.size(), cfg), ConfigError);
  }

  SUBCASE("defaulted averaging degrades to all blocks with a warning") {
    auto enc = small_encoder(vocab, 2);
    CHECK(enc.averaged_blocks() == 2);
    REQUIRE(!enc.warnings().empty());
    CHECK(enc.warnings()[0].find("fewer than 4") != std::string::npos);
  }

  SUBCASE("all-pad and overlong sequences are rejected") {
    auto enc = small_encoder(vocab);
    Rng rng(3);
    CHECK_THROWS_AS(enc.encode({0, 0, 0}, rng, false), ContractError);
    std::vector<int> longseq(40, 5);
    CHECK_THROWS_AS(enc.encode(longseq, rng, false), DimensionError);
  }

  SUBCASE("adapter budget stays within 15 percent of the base") {
    Rng rng(5);
    TextEncoderConfig cfg;  // the real defaults: width 64, rank 16
    TextEncoder<double> enc(rng, vocab.size(), cfg);
    const double ratio = static_cast<double>(enc.adapter_param_count()) /
                         static_cast<double>(enc.base_param_count());
    CHECK(ratio > 0.0);
    CHECK(ratio <= 0.15);
  }

  SUBCASE("frozen base, trainable adapters and projection") {
    auto enc = small_encoder(vocab);
    for (auto& [name, t] : enc.base_parameters()) {
      CAPTURE(name);
      CHECK_FALSE(t.requires_grad());
    }
    for (auto& [name, t] : enc.adapter_parameters()) CHECK(t.requires_grad());
    for (auto& [name, t] : enc.projection_parameters()) CHECK(t.requires_grad());
  }
}

TEST_CASE("audio cue encoder") {
  Rng rng(11);
  AudioCueConfig cfg;
  cfg.codec.n_filters = 16;
  cfg.codec.filter_len = 16;
  cfg.codec.hop = 8;
  cfg.bottleneck = 16;
  cfg.hidden = 16;
  cfg.tcn_blocks = 2;
  cfg.embed_dim = 24;
  AudioCueEncoder<double> enc(rng, cfg);

  SUBCASE("zero input produces a deterministic bias-only embedding") {
    bool degenerate = false;
    auto a = enc.encode(DTensor(Shape{400}), &degenerate);
    CHECK(degenerate);
    auto b = enc.encode(DTensor(Shape{720}), &degenerate);
    for (std::int64_t i = 0; i < a.vector.size(); ++i)
      CHECK(a.vector.values()[i] == doctest::Approx(b.vector.values()[i]).epsilon(1e-12));
  }

  SUBCASE("hop-shifted enrollment moves the embedding by less than 10 percent") {
    SyntheticCorpus corpus(1, 8);
    auto utt = corpus.utterance(0, 42, 0, 1.0, 8000);
    const int hop = cfg.codec.hop;
    const int n = utt.audio.length() - hop;
    DTensor x(Shape{n}), shifted(Shape{n});
    for (int i = 0; i < n; ++i) {
      x.at(i) = utt.audio.samples[static_cast<std::size_t>(i)];
      shifted.at(i) = utt.audio.samples[static_cast<std::size_t>(i + hop)];
    }
    auto ea = enc.encode(x).vector;
    auto eb = enc.encode(shifted).vector;
    double diff = 0.0, norm = 0.0;
    for (std::int64_t i = 0; i < ea.size(); ++i) {
      diff += (ea.values()[i] - eb.values()[i]) * (ea.values()[i] - eb.values()[i]);
      norm += ea.values()[i] * ea.values()[i];
    }
    CHECK(std::sqrt(diff) / std::sqrt(norm) < 0.10);
  }

  SUBCASE("temporal mean pooling is frame-permutation invariant") {
    DTensor frames = DTensor::uniform(rng, {40, 8}, -1.0, 1.0);
    DTensor permuted(Shape{40, 8});
    std::vector<int> order(40);
    for (int i = 0; i < 40; ++i) order[static_cast<std::size_t>(i)] = (i * 17) % 40;
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 8; ++c) permuted.at(r, c) = frames.at(order[static_cast<std::size_t>(r)], c);
    auto ma = mean_rows(frames);
    auto mb = mean_rows(permuted);
    for (int c = 0; c < 8; ++c) CHECK(ma.at(c) == doctest::Approx(mb.at(c)).epsilon(1e-9));
  }

  SUBCASE("too-short enrollment is rejected") {
    CHECK_THROWS_AS(enc.encode(DTensor(Shape{4})), DimensionError);
  }
}

TEST_CASE("one-hot encoder") {
  Rng rng(13);
  OneHotEncoder<double> enc(rng, 24);

  SUBCASE("class layout: second gender class reads [0, 1] in its block") {
    auto v = one_hot_vector<double>(TaskAttribute::kGender, "high");
    CHECK(v.at(0) == 0.0);
    CHECK(v.at(1) == 1.0);
    auto low = one_hot_vector<double>(TaskAttribute::kGender, "low");
    CHECK(low.at(0) == 1.0);
    CHECK(low.at(1) == 0.0);
  }

  SUBCASE("snippets are rejected as unsupported") {
    CHECK_THROWS_AS(enc.encode(TaskAttribute::kSnippet, "ka to"), UnsupportedCueError);
  }

  SUBCASE("distinct classes produce distinct embeddings") {
    std::vector<CueEmbedding<double>> all;
    for (auto [attr, label] :
         std::vector<std::pair<TaskAttribute, std::string>>{
             {TaskAttribute::kGender, "low"}, {TaskAttribute::kGender, "high"},
             {TaskAttribute::kLanguage, "alpha"}, {TaskAttribute::kLanguage, "beta"},
             {TaskAttribute::kLoudness, "louder"}, {TaskAttribute::kLoudness, "quieter"},
             {TaskAttribute::kFarNear, "near"}, {TaskAttribute::kFarNear, "far"}})
      all.push_back(enc.encode(attr, label));
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        double diff = 0.0;
        for (std::int64_t c = 0; c < all[i].vector.size(); ++c)
          diff += std::abs(all[i].vector.values()[c] - all[j].vector.values()[c]);
        CHECK(diff > 1e-6);
      }
  }

  SUBCASE("unknown label is a data error") {
    CHECK_THROWS_AS(enc.encode(TaskAttribute::kGender, "heavy"), DataError);
  }
}

TEST_CASE("all cue paths emit the same dimension") {
  auto vocab = test_vocab();
  Rng rng(17);
  const int embed_dim = 24;
  auto text = small_encoder(vocab);
  AudioCueConfig acfg;
  acfg.codec.n_filters = 16;
  acfg.bottleneck = 16;
  acfg.hidden = 16;
  acfg.tcn_blocks = 2;
  acfg.embed_dim = embed_dim;
  AudioCueEncoder<double> audio(rng, acfg);
  OneHotEncoder<double> onehot(rng, embed_dim);

  Rng drng(1);
  auto t = text.encode(tokenize("extract the louder speaker", vocab), drng, false);
  auto a = audio.encode(DTensor::uniform(rng, {800}, -0.2, 0.2));
  auto o = onehot.encode(TaskAttribute::kLoudness, "louder");
  CHECK(t.vector.dim(0) == embed_dim);
  CHECK(a.vector.dim(0) == embed_dim);
  CHECK(o.vector.dim(0) == embed_dim);
}
