#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tse/dsp.hpp"
#include "tse/objective.hpp"
#include "tse/scene_sim.hpp"

using namespace tse;

namespace {

std::shared_ptr<SceneSimulator> make_sim(SceneConfig cfg = {}) {
  return std::make_shared<SceneSimulator>(cfg, std::make_shared<SyntheticCorpus>(1, 16));
}

double overlap_energy_db(const SceneAudio& audio, const SceneManifest& m) {
  const auto [b, e] = overlap_window(m);
  double et = 0.0, ei = 0.0;
  const auto& t = m.removal_flag ? audio.interferer_ref : audio.target_ref;
  const auto& i = m.removal_flag ? audio.target_ref : audio.interferer_ref;
  for (int s = b; s < e; ++s) {
    et += static_cast<double>(t.samples[s]) * t.samples[s];
    ei += static_cast<double>(i.samples[s]) * i.samples[s];
  }
  return 10.0 * std::log10(et / ei);
}

}  // namespace

TEST_CASE("manifest sampling respects task constraints and determinism") {
  auto sim = make_sim();

  SUBCASE("loudness task stays inside the |snr| band") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kLoudness), seed);
      CHECK(std::abs(m.snr_db) >= 2.0);
      CHECK(std::abs(m.snr_db) <= 3.0);
    }
  }

  SUBCASE("same seed reproduces the manifest verbatim") {
    auto a = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), 77);
    auto b = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), 77);
    CHECK(manifest_to_json(a) == manifest_to_json(b));
  }

  SUBCASE("gender task pairs differing pitch classes") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), seed);
      CHECK(m.target.labels.at("gender") != m.interferer.labels.at("gender"));
    }
  }

  SUBCASE("far_near task produces both orderings") {
    int near_target = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kFarNear), seed);
      CHECK(m.target.placement.field != m.interferer.placement.field);
      if (m.target.placement.field == Field::kNear) ++near_target;
    }
    CHECK(near_target > 5);
    CHECK(near_target < 25);
  }

  SUBCASE("selector remove scenes carry the removal flag") {
    auto m = sim->sample_scene_params(TaskType::selector(SelectorAction::kRemove), 5);
    CHECK(m.removal_flag);
    CHECK_FALSE(
        sim->sample_scene_params(TaskType::selector(SelectorAction::kExtract), 5).removal_flag);
  }

  SUBCASE("room and placement ranges follow the configured bands") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kLanguage), seed);
      CHECK(m.room.length_m >= 9.0);
      CHECK(m.room.length_m <= 11.0);
      CHECK(m.room.rt60_s >= 0.3);
      CHECK(m.room.rt60_s <= 0.6);
      CHECK(m.paper_ranges);
      for (const auto* slot : {&m.target, &m.interferer}) {
        const double d = slot->placement.distance_m;
        if (slot->placement.field == Field::kNear) {
          CHECK(d >= 0.3);
          CHECK(d <= 0.5);
        } else {
          CHECK(d >= 1.5);
          CHECK(d <= 2.5);
        }
      }
      CHECK(m.overlap_ratio >= 0.4);
      CHECK(m.overlap_ratio <= 0.7);
    }
  }
}

TEST_CASE("manifest json round trip") {
  auto sim = make_sim();
  auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kSnippet), 123);
  auto text = manifest_to_json(m);
  auto back = manifest_from_json(text);
  CHECK(manifest_to_json(back) == text);
  CHECK_THROWS_AS(manifest_from_json("{not json"), DataError);
}

TEST_CASE("image source rir basics") {
  RoomSpec room;
  room.length_m = 10.0;
  room.width_m = 10.0;
  room.height_m = 3.0;
  room.rt60_s = 0.4;
  room.mic_height_m = 1.5;

  SUBCASE("direct path lands at the expected sample") {
    SourcePlacement src;
    src.distance_m = 1.7;
    src.azimuth_deg = 45.0;
    src.height_m = 1.5;  // same height as mic: distance is exactly 1.7
    auto rir = image_source_rir(room, src, 16000, 6);
    const int expect = static_cast<int>(std::lround(1.7 / 343.0 * 16000));
    CHECK(expect == 79);
    for (int i = 0; i < expect; ++i) CHECK(rir[i] == 0.0);
    CHECK(rir[expect] == doctest::Approx(1.0));  // unit direct tap
  }

  SUBCASE("order zero gives the direct path only") {
    SourcePlacement src;
    src.distance_m = 2.0;
    src.azimuth_deg = 120.0;
    src.height_m = 1.7;
    auto rir = image_source_rir(room, src, 8000, 0);
    int nonzero = 0;
    for (double v : rir) nonzero += v != 0.0 ? 1 : 0;
    CHECK(nonzero == 1);
  }

  SUBCASE("schroeder decay lands near the requested rt60") {
    SourcePlacement src;
    src.distance_m = 2.2;
    src.azimuth_deg = 70.0;
    src.height_m = 1.8;
    auto rir = image_source_rir(room, src, 16000, 10);
    const double measured = schroeder_rt60(rir, 16000);
    CHECK(measured > 0.32);
    CHECK(measured < 0.48);
  }

  SUBCASE("source outside the room is rejected") {
    SourcePlacement src;
    src.distance_m = 8.0;  // reaches beyond the wall from the center
    src.azimuth_deg = 0.0;
    src.height_m = 1.7;
    CHECK_THROWS_AS(image_source_rir(room, src, 8000, 2), GeometryError);
  }

  SUBCASE("infeasible rt60 is rejected") {
    RoomSpec bad = room;
    bad.rt60_s = 0.02;  // Sabine absorption would exceed the wall area
    SourcePlacement src;
    src.distance_m = 1.0;
    src.azimuth_deg = 90.0;
    src.height_m = 1.7;
    CHECK_THROWS_AS(image_source_rir(bad, src, 8000, 2), ConfigError);
  }
}

TEST_CASE("synthetic utterances") {
  SyntheticCorpus corpus(1, 16);

  SUBCASE("empty token list is silence") {
    auto utt = synth_utterance(corpus.profile(0), {}, 0.5, 8000);
    CHECK(utt.audio.length() == 4000);
    for (float v : utt.audio.samples) CHECK(v == 0.0f);
  }

  SUBCASE("rendering is bit-identical for equal inputs") {
    auto a = synth_utterance(corpus.profile(3), {0, 5, 2}, 0.75, 8000);
    auto b = synth_utterance(corpus.profile(3), {0, 5, 2}, 0.75, 8000);
    CHECK(a.audio.samples == b.audio.samples);
    CHECK(a.tokens == b.tokens);
  }

  SUBCASE("token outside the alphabet is rejected") {
    CHECK_THROWS_AS(synth_utterance(corpus.profile(0), {99}, 0.5, 8000), DataError);
  }

  SUBCASE("low pitch class has the lower spectral centroid") {
    int wins = 0, trials = 0;
    for (int low = 0; low < 16; low += 2) {
      const int high = low + 1;
      REQUIRE(corpus.profile(low).pitch_class == PitchClass::kLow);
      REQUIRE(corpus.profile(high).pitch_class == PitchClass::kHigh);
      auto ul = corpus.utterance(low, 7, 0, 1.0, 8000);
      auto uh = corpus.utterance(high, 7, 0, 1.0, 8000);
      ++trials;
      if (spectral_centroid(ul.audio.samples, 8000) < spectral_centroid(uh.audio.samples, 8000))
        ++wins;
    }
    CHECK(wins == trials);
  }

  SUBCASE("utterance seeds change the token draw") {
    auto a = corpus.utterance(0, 1, 0, 1.0, 8000);
    auto b = corpus.utterance(0, 2, 0, 1.0, 8000);
    CHECK(a.tokens != b.tokens);  // 4 tokens from 12: collision odds ~1e-4
  }
}

TEST_CASE("mix_scene renders exact scenes") {
  auto sim = make_sim();

  SUBCASE("snr over the overlap window is exact") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kLoudness), seed);
      auto audio = sim->mix_scene(m);
      CHECK(overlap_energy_db(audio, m) == doctest::Approx(m.snr_db).epsilon(1e-6));
    }
  }

  SUBCASE("overlap window matches the requested ratio within one sample") {
    auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), 3);
    const auto [b, e] = overlap_window(m);
    const int total = static_cast<int>(std::lround(m.duration_s * m.sample_rate));
    CHECK(std::abs((e - b) - m.overlap_ratio * total) <= 1.0);
  }

  SUBCASE("mixture equals the sum of the references") {
    auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), 9);
    auto audio = sim->mix_scene(m);
    for (int i = 0; i < audio.mixture.length(); ++i) {
      const float sum = audio.target_ref.samples[i] + audio.interferer_ref.samples[i];
      CHECK(audio.mixture.samples[i] == doctest::Approx(sum).epsilon(1e-4));
    }
  }

  SUBCASE("rendering is deterministic") {
    auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kLanguage), 17);
    auto a = sim->mix_scene(m);
    auto b = sim->mix_scene(m);
    CHECK(a.mixture.samples == b.mixture.samples);
    CHECK(a.enrollment.samples == b.enrollment.samples);
  }

  SUBCASE("removal scenes swap the reference roles") {
    auto extract = sim->sample_scene_params(TaskType::selector(SelectorAction::kExtract), 21);
    auto remove = extract;
    remove.removal_flag = true;
    auto ea = sim->mix_scene(extract);
    auto ra = sim->mix_scene(remove);
    CHECK(ea.target_ref.samples == ra.interferer_ref.samples);
    CHECK(ea.interferer_ref.samples == ra.target_ref.samples);
    CHECK(ea.enrollment.samples == ra.enrollment.samples);  // enrollment stays enrolled speaker
  }

  SUBCASE("all rendered audio stays within the normalization ceiling") {
    auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kFarNear), 31);
    auto audio = sim->mix_scene(m);
    for (const auto* buf : {&audio.mixture, &audio.target_ref, &audio.interferer_ref,
                            &audio.enrollment})
      for (float v : buf->samples) CHECK(std::abs(v) <= 0.99f);
  }

  SUBCASE("enrollment differs from the in-mixture utterance") {
    auto m = sim->sample_scene_params(TaskType::selector(SelectorAction::kExtract), 41);
    auto audio = sim->mix_scene(m);
    CHECK(audio.enrollment.length() == audio.mixture.length());
    double energy = 0.0;
    for (float v : audio.enrollment.samples) energy += static_cast<double>(v) * v;
    CHECK(energy > 0.0);
  }
}

TEST_CASE("unprocessed mixtures sit near 0 dB si-sdr") {
  auto sim = make_sim();
  double total = 0.0;
  int count = 0;
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    auto m = sim->sample_scene_params(TaskType::independent(TaskAttribute::kGender), seed);
    auto audio = sim->mix_scene(m);
    total += si_sdr(audio.mixture, audio.target_ref);
    ++count;
  }
  const double mean = total / count;
  CHECK(mean > -2.0);
  CHECK(mean < 2.0);
}

TEST_CASE("corpus ingestion") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tse_ingest_test";
  fs::create_directories(dir);

  auto write_tone = [&](const std::string& name, double freq, double dur) {
    AudioBuffer buf;
    buf.sample_rate = 8000;
    buf.samples.resize(static_cast<std::size_t>(dur * 8000));
    for (std::size_t i = 0; i < buf.samples.size(); ++i)
      buf.samples[i] = 0.4f * static_cast<float>(std::sin(2.0 * 3.14159265 * freq * i / 8000));
    write_wav((dir / name).string(), buf, WavFormat::kPcm16);
    return (dir / name).string();
  };

  SUBCASE("empty manifest is a schema error") {
    const auto path = (dir / "empty.jsonl").string();
    std::ofstream(path) << "\n";
    CHECK_THROWS_AS(ingest_corpus(path), DataError);
  }

  SUBCASE("duplicate utterance ids are a schema error") {
    const auto wav = write_tone("dup.wav", 220.0, 2.0);
    const auto path = (dir / "dup.jsonl").string();
    std::ofstream out(path);
    out << R"({"path": ")" << wav << R"(", "speaker_id": "s1", "attributes": {"gender": "low"}})" << "\n";
    out << R"({"path": ")" << wav << R"(", "speaker_id": "s1", "attributes": {"gender": "low"}})" << "\n";
    out.close();
    CHECK_THROWS_AS(ingest_corpus(path), DataError);
  }

  SUBCASE("valid two-speaker manifest mixes end to end") {
    std::vector<std::string> wavs = {
        write_tone("a1.wav", 150.0, 2.5), write_tone("a2.wav", 160.0, 2.5),
        write_tone("b1.wav", 320.0, 2.5), write_tone("b2.wav", 330.0, 2.5)};
    const auto path = (dir / "two.jsonl").string();
    {
      std::ofstream out(path);
      out << R"({"path": ")" << wavs[0]
          << R"(", "speaker_id": "low1", "attributes": {"gender": "low", "language": "alpha"}})"
          << "\n";
      out << R"({"path": ")" << wavs[1]
          << R"(", "speaker_id": "low1", "attributes": {"gender": "low", "language": "alpha"}})"
          << "\n";
      out << R"({"path": ")" << wavs[2]
          << R"(", "speaker_id": "high1", "attributes": {"gender": "high", "language": "beta"}})"
          << "\n";
      out << R"({"path": ")" << wavs[3]
          << R"(", "speaker_id": "high1", "attributes": {"gender": "high", "language": "beta"}})"
          << "\n";
    }
    auto corpus = ingest_corpus(path);
    CHECK(corpus->speaker_count() == 2);
    SceneConfig cfg;
    SceneSimulator sim(cfg, corpus);
    auto m = sim.sample_scene_params(TaskType::independent(TaskAttribute::kGender), 3);
    auto audio = sim.mix_scene(m);
    CHECK(audio.mixture.length() == static_cast<int>(std::lround(cfg.duration_s * cfg.sample_rate)));
    CHECK(overlap_energy_db(audio, m) == doctest::Approx(m.snr_db).epsilon(1e-6));

    // snippet task needs word timestamps
    CHECK_THROWS_AS(sim.sample_scene_params(TaskType::independent(TaskAttribute::kSnippet), 3),
                    DataError);
  }

  fs::remove_all(dir);
}
