#include "tse/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "tse/dsp.hpp"

namespace tse {

using nlohmann::json;

namespace {

constexpr double kPi = 3.141592653589793238462643383280;
constexpr double kTokenDuration = 0.25;  // seconds per synthetic token
constexpr double kUtteranceRms = 0.1;

// stream indices for derive_seed
constexpr std::uint64_t kTargetStream = 11;
constexpr std::uint64_t kInterfererStream = 12;

std::string field_name(Field f) { return f == Field::kNear ? "near" : "far"; }

}  // namespace

// ---------------------------------------------------------------------------
// Manifest JSON
// ---------------------------------------------------------------------------

namespace {

json slot_to_json(const SpeakerSlot& s) {
  return json{
      {"corpus_speaker", s.corpus_speaker},
      {"profile",
       {{"id", s.profile.id},
        {"pitch_class", s.profile.pitch_class == PitchClass::kLow ? "low" : "high"},
        {"alphabet", s.profile.alphabet == TokenAlphabet::kA ? "a" : "b"},
        {"base_f0_hz", s.profile.base_f0_hz},
        {"formant_seed", s.profile.formant_seed}}},
      {"placement",
       {{"distance_m", s.placement.distance_m},
        {"azimuth_deg", s.placement.azimuth_deg},
        {"height_m", s.placement.height_m},
        {"field", field_name(s.placement.field)}}},
      {"utterance_seed", s.utterance_seed},
      {"transcript_ids", s.transcript_ids},
      {"transcript", s.transcript},
      {"utterance_ref", s.utterance_ref},
      {"labels", s.labels},
  };
}

SpeakerSlot slot_from_json(const json& j) {
  SpeakerSlot s;
  s.corpus_speaker = j.at("corpus_speaker").get<int>();
  const auto& p = j.at("profile");
  s.profile.id = p.at("id").get<int>();
  s.profile.pitch_class =
      p.at("pitch_class").get<std::string>() == "low" ? PitchClass::kLow : PitchClass::kHigh;
  s.profile.alphabet =
      p.at("alphabet").get<std::string>() == "a" ? TokenAlphabet::kA : TokenAlphabet::kB;
  s.profile.base_f0_hz = p.at("base_f0_hz").get<double>();
  s.profile.formant_seed = p.at("formant_seed").get<std::uint64_t>();
  const auto& pl = j.at("placement");
  s.placement.distance_m = pl.at("distance_m").get<double>();
  s.placement.azimuth_deg = pl.at("azimuth_deg").get<double>();
  s.placement.height_m = pl.at("height_m").get<double>();
  s.placement.field = pl.at("field").get<std::string>() == "near" ? Field::kNear : Field::kFar;
  s.utterance_seed = j.at("utterance_seed").get<std::uint64_t>();
  s.transcript_ids = j.at("transcript_ids").get<std::vector<int>>();
  s.transcript = j.at("transcript").get<std::vector<std::string>>();
  s.utterance_ref = j.at("utterance_ref").get<std::string>();
  s.labels = j.at("labels").get<std::map<std::string, std::string>>();
  return s;
}

}  // namespace

std::string manifest_to_json(const SceneManifest& m) {
  json j{
      {"seed", m.seed},
      {"room",
       {{"length_m", m.room.length_m},
        {"width_m", m.room.width_m},
        {"height_m", m.room.height_m},
        {"rt60_s", m.room.rt60_s},
        {"mic_height_m", m.room.mic_height_m}}},
      {"target", slot_to_json(m.target)},
      {"interferer", slot_to_json(m.interferer)},
      {"snr_db", m.snr_db},
      {"overlap_ratio", m.overlap_ratio},
      {"duration_s", m.duration_s},
      {"sample_rate", m.sample_rate},
      {"task",
       {{"regime", to_string(m.task.regime)},
        {"attribute", to_string(m.task.attribute)},
        {"action", to_string(m.task.action)}}},
      {"task_attribute", to_string(m.task_attribute)},
      {"removal_flag", m.removal_flag},
      {"target_leads", m.target_leads},
      {"paper_ranges", m.paper_ranges},
      {"enrollment_seed", m.enrollment_seed},
      {"enrollment_ref", m.enrollment_ref},
  };
  return j.dump(2);
}

SceneManifest manifest_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  try {
    SceneManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& r = j.at("room");
    m.room.length_m = r.at("length_m").get<double>();
    m.room.width_m = r.at("width_m").get<double>();
    m.room.height_m = r.at("height_m").get<double>();
    m.room.rt60_s = r.at("rt60_s").get<double>();
    m.room.mic_height_m = r.at("mic_height_m").get<double>();
    m.target = slot_from_json(j.at("target"));
    m.interferer = slot_from_json(j.at("interferer"));
    m.snr_db = j.at("snr_db").get<double>();
    m.overlap_ratio = j.at("overlap_ratio").get<double>();
    m.duration_s = j.at("duration_s").get<double>();
    m.sample_rate = j.at("sample_rate").get<int>();
    const auto& t = j.at("task");
    m.task.regime = regime_from_string(t.at("regime").get<std::string>());
    m.task.attribute = attribute_from_string(t.at("attribute").get<std::string>());
    m.task.action = action_from_string(t.at("action").get<std::string>());
    m.task_attribute = attribute_from_string(j.at("task_attribute").get<std::string>());
    m.removal_flag = j.at("removal_flag").get<bool>();
    m.target_leads = j.at("target_leads").get<bool>();
    m.paper_ranges = j.at("paper_ranges").get<bool>();
    m.enrollment_seed = j.at("enrollment_seed").get<std::uint64_t>();
    m.enrollment_ref = j.at("enrollment_ref").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field error: ") + e.what());
  }
}

std::pair<int, int> overlap_window(const SceneManifest& m) {
  const int total = static_cast<int>(std::lround(m.duration_s * m.sample_rate));
  const int overlap = static_cast<int>(std::lround(m.overlap_ratio * total));
  const int end = (total + overlap + 1) / 2;  // target occupies [0, end)
  return {end - overlap, end};
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const std::vector<std::string>& SyntheticCorpus::alphabet_tokens(TokenAlphabet a) {
  static const std::vector<std::string> kAlphabetA = {
      "ka", "to", "mi", "su", "ne", "ro", "ha", "yu", "sa", "ke", "no", "ta"};
  static const std::vector<std::string> kAlphabetB = {
      "blim", "vex", "dru", "qua", "zof", "fre", "gla", "spo", "tran", "kel", "wim", "jor"};
  return a == TokenAlphabet::kA ? kAlphabetA : kAlphabetB;
}

SyntheticCorpus::SyntheticCorpus(std::uint64_t corpus_seed, int speakers) {
  if (speakers < 4) throw ConfigError("synthetic corpus needs at least 4 speakers");
  profiles_.resize(static_cast<std::size_t>(speakers));
  for (int i = 0; i < speakers; ++i) {
    Rng rng(derive_seed(corpus_seed, {0xC0, static_cast<std::uint64_t>(i)}));
    SpeakerProfile p;
    p.id = i;
    p.pitch_class = (i % 2 == 0) ? PitchClass::kLow : PitchClass::kHigh;
    p.alphabet = ((i / 2) % 2 == 0) ? TokenAlphabet::kA : TokenAlphabet::kB;
    p.base_f0_hz = p.pitch_class == PitchClass::kLow ? rng.uniform(85.0, 155.0)
                                                     : rng.uniform(165.0, 255.0);
    p.formant_seed = rng.next_u64();
    profiles_[static_cast<std::size_t>(i)] = p;
  }
}

std::string SyntheticCorpus::speaker_id(int speaker) const {
  return "synth-" + std::to_string(profile(speaker).id);
}

const SpeakerProfile& SyntheticCorpus::profile(int speaker) const {
  if (speaker < 0 || speaker >= speaker_count())
    throw DataError("synthetic corpus: speaker index out of range");
  return profiles_[static_cast<std::size_t>(speaker)];
}

bool SyntheticCorpus::has_attribute(const std::string& key) const {
  return key == "gender" || key == "language";
}

std::string SyntheticCorpus::attribute(int speaker, const std::string& key) const {
  const SpeakerProfile& p = profile(speaker);
  if (key == "gender") return p.pitch_class == PitchClass::kLow ? "low" : "high";
  if (key == "language") return p.alphabet == TokenAlphabet::kA ? "alpha" : "beta";
  throw DataError("synthetic corpus has no attribute: " + key);
}

namespace {

// Token-specific resonance pair, mildly shifted per speaker.
struct Resonances {
  double f1, f2, b1, b2;
};

Resonances token_resonances(const SpeakerProfile& profile, TokenAlphabet alphabet, int token_id) {
  Rng shape(derive_seed(0x7e50ul, {static_cast<std::uint64_t>(alphabet),
                                   static_cast<std::uint64_t>(token_id)}));
  Rng voice(derive_seed(profile.formant_seed, {static_cast<std::uint64_t>(token_id)}));
  Resonances r;
  r.f1 = shape.uniform(320.0, 820.0) * voice.uniform(0.94, 1.06);
  r.f2 = shape.uniform(1050.0, 2300.0) * voice.uniform(0.94, 1.06);
  r.b1 = shape.uniform(70.0, 110.0);
  r.b2 = shape.uniform(120.0, 180.0);
  return r;
}

double resonance_weight(double freq, const Resonances& r) {
  const double d1 = (freq - r.f1) / r.b1;
  const double d2 = (freq - r.f2) / r.b2;
  return 1.0 / (1.0 + d1 * d1) + 0.6 / (1.0 + d2 * d2) + 0.02;
}

// One token segment: harmonic complex at the speaker f0 shaped by the token
// resonances, with raised-cosine edges. Identical for every occurrence of
// (speaker, token, fs), which makes caching safe.
std::vector<float> render_token(const SpeakerProfile& profile, TokenAlphabet alphabet,
                                int token_id, int sample_rate) {
  const int len = static_cast<int>(std::lround(kTokenDuration * sample_rate));
  const double f0 = profile.base_f0_hz;
  const int harmonics = static_cast<int>(std::floor(0.45 * sample_rate / f0));
  const Resonances res = token_resonances(profile, alphabet, token_id);

  // glottal-like source slope (about -12 dB/octave) under the token resonances
  std::vector<double> amps(static_cast<std::size_t>(harmonics) + 1, 0.0);
  for (int k = 1; k <= harmonics; ++k)
    amps[static_cast<std::size_t>(k)] =
        resonance_weight(k * f0, res) / (static_cast<double>(k) * k);

  std::vector<float> out(static_cast<std::size_t>(len));
  const int edge = std::max(1, sample_rate / 80);  // 12.5 ms ramps
  for (int t = 0; t < len; ++t) {
    double v = 0.0;
    const double phase = 2.0 * kPi * f0 * t / sample_rate;
    for (int k = 1; k <= harmonics; ++k) v += amps[static_cast<std::size_t>(k)] * std::sin(k * phase);
    double env = 1.0;
    if (t < edge) env = 0.5 - 0.5 * std::cos(kPi * t / edge);
    if (t >= len - edge) env = std::min(env, 0.5 - 0.5 * std::cos(kPi * (len - 1 - t) / edge));
    out[static_cast<std::size_t>(t)] = static_cast<float>(v * env);
  }
  return out;
}

struct TokenCacheKey {
  std::uint64_t speaker_seed;
  int token_id;
  int sample_rate;
  bool operator==(const TokenCacheKey&) const = default;
};

struct TokenCacheHash {
  std::size_t operator()(const TokenCacheKey& k) const {
    return static_cast<std::size_t>(
        splitmix64(k.speaker_seed ^ (static_cast<std::uint64_t>(k.token_id) << 32) ^
                   static_cast<std::uint64_t>(k.sample_rate)));
  }
};

const std::vector<float>& cached_token(const SpeakerProfile& profile, TokenAlphabet alphabet,
                                       int token_id, int sample_rate) {
  static std::mutex mutex;
  static std::unordered_map<TokenCacheKey, std::vector<float>, TokenCacheHash> cache;
  const TokenCacheKey key{profile.formant_seed, token_id, sample_rate};
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, render_token(profile, alphabet, token_id, sample_rate)).first;
  return it->second;
}

}  // namespace

Utterance synth_utterance(const SpeakerProfile& profile, const std::vector<int>& token_ids,
                          double duration_s, int sample_rate) {
  if (sample_rate <= 0) throw ContractError("synth_utterance: bad sample rate");
  const auto& alphabet = SyntheticCorpus::alphabet_tokens(profile.alphabet);
  for (int id : token_ids)
    if (id < 0 || id >= static_cast<int>(alphabet.size()))
      throw DataError("synth_utterance: token outside the speaker's alphabet");

  const int total = static_cast<int>(std::lround(duration_s * sample_rate));
  Utterance utt;
  utt.audio.sample_rate = sample_rate;
  utt.audio.samples.assign(static_cast<std::size_t>(std::max(total, 0)), 0.0f);
  utt.token_ids = token_ids;
  for (int id : token_ids) utt.tokens.push_back(alphabet[static_cast<std::size_t>(id)]);
  if (total <= 0 || token_ids.empty()) return utt;

  int cursor = 0;
  for (int id : token_ids) {
    const auto& segment = cached_token(profile, profile.alphabet, id, sample_rate);
    const int seg_len = static_cast<int>(segment.size());
    const int end = std::min(total, cursor + seg_len);
    for (int t = cursor; t < end; ++t)
      utt.audio.samples[static_cast<std::size_t>(t)] = segment[static_cast<std::size_t>(t - cursor)];
    utt.token_bounds.emplace_back(cursor, end);
    cursor += seg_len;
    if (cursor >= total) break;
  }

  const double level = rms(utt.audio.samples);
  if (level > 0.0) {
    const float g = static_cast<float>(kUtteranceRms / level);
    for (auto& v : utt.audio.samples) v *= g;
  }
  return utt;
}

Utterance SyntheticCorpus::utterance(int speaker, std::uint64_t seed, int variant,
                                     double duration_s, int sample_rate) const {
  const SpeakerProfile& p = profile(speaker);
  const auto& alphabet = alphabet_tokens(p.alphabet);
  const int total = static_cast<int>(std::lround(duration_s * sample_rate));
  const int token_len = static_cast<int>(std::lround(kTokenDuration * sample_rate));
  const int count = std::max(1, (total + token_len - 1) / token_len);
  Rng rng(derive_seed(seed, {0x07, static_cast<std::uint64_t>(variant)}));
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (auto& id : ids) id = rng.uniform_int(static_cast<int>(alphabet.size()));
  return synth_utterance(p, ids, duration_s, sample_rate);
}

// ---------------------------------------------------------------------------
// Ingested corpus
// ---------------------------------------------------------------------------

std::shared_ptr<Corpus> ingest_corpus(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open corpus manifest: " + manifest_path);

  auto corpus = std::make_shared<IngestedCorpus>();
  std::unordered_map<std::string, int> speaker_index;
  std::unordered_map<std::string, bool> seen_paths;
  bool any_timestamps = false;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("corpus manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    IngestedCorpus::Row row;
    try {
      row.path = j.at("path").get<std::string>();
      const std::string speaker = j.at("speaker_id").get<std::string>();
      if (j.contains("attributes"))
        row.attributes = j.at("attributes").get<std::map<std::string, std::string>>();
      if (j.contains("timestamps")) {
        for (const auto& w : j.at("timestamps")) {
          IngestedCorpus::Word word;
          word.text = w.at("word").get<std::string>();
          word.start_s = w.at("start").get<double>();
          word.end_s = w.at("end").get<double>();
          row.words.push_back(std::move(word));
        }
        any_timestamps = any_timestamps || !row.words.empty();
      }
      if (seen_paths.count(row.path))
        throw DataError("corpus manifest: duplicate utterance id " + row.path);
      seen_paths[row.path] = true;
      auto [it, inserted] = speaker_index.try_emplace(
          speaker, static_cast<int>(corpus->speakers_.size()));
      if (inserted) corpus->speakers_.push_back({speaker, {}});
      corpus->speakers_[static_cast<std::size_t>(it->second)].rows.push_back(
          static_cast<int>(corpus->rows_.size()));
      corpus->rows_.push_back(std::move(row));
    } catch (const json::exception& e) {
      throw DataError("corpus manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (corpus->rows_.empty()) throw DataError("corpus manifest is empty: " + manifest_path);
  corpus->has_timestamps_ = any_timestamps;
  return corpus;
}

std::string IngestedCorpus::speaker_id(int speaker) const {
  if (speaker < 0 || speaker >= speaker_count())
    throw DataError("ingested corpus: speaker index out of range");
  return speakers_[static_cast<std::size_t>(speaker)].id;
}

bool IngestedCorpus::has_attribute(const std::string& key) const {
  for (const auto& row : rows_)
    if (!row.attributes.count(key)) return false;
  return true;
}

std::string IngestedCorpus::attribute(int speaker, const std::string& key) const {
  if (speaker < 0 || speaker >= speaker_count())
    throw DataError("ingested corpus: speaker index out of range");
  const auto& rows = speakers_[static_cast<std::size_t>(speaker)].rows;
  const auto& attrs = rows_[static_cast<std::size_t>(rows.front())].attributes;
  auto it = attrs.find(key);
  if (it == attrs.end())
    throw DataError("corpus speaker " + speakers_[static_cast<std::size_t>(speaker)].id +
                    " lacks attribute '" + key + "' required by the task");
  return it->second;
}

Utterance IngestedCorpus::utterance(int speaker, std::uint64_t seed, int variant,
                                    double duration_s, int sample_rate) const {
  if (speaker < 0 || speaker >= speaker_count())
    throw DataError("ingested corpus: speaker index out of range");
  const auto& rows = speakers_[static_cast<std::size_t>(speaker)].rows;
  if (variant > 0 && static_cast<int>(rows.size()) < variant + 1)
    throw DataError("corpus exhausted for speaker " +
                    speakers_[static_cast<std::size_t>(speaker)].id +
                    ": need " + std::to_string(variant + 1) + " distinct utterances");
  // seed-derived permutation start; variants walk distinct rows
  Rng rng(derive_seed(seed, {0x1D}));
  const int base = rng.uniform_int(static_cast<int>(rows.size()));
  const int row_id = rows[static_cast<std::size_t>((base + variant) % static_cast<int>(rows.size()))];
  const Row& row = rows_[static_cast<std::size_t>(row_id)];

  AudioBuffer audio = read_wav(row.path);
  if (audio.sample_rate != sample_rate) audio = resample(audio, sample_rate);
  const int need = static_cast<int>(std::lround(duration_s * sample_rate));
  int offset = 0;
  if (audio.length() > need) offset = rng.uniform_int(audio.length() - need + 1);

  Utterance utt;
  utt.audio.sample_rate = sample_rate;
  utt.audio.samples.assign(static_cast<std::size_t>(need), 0.0f);
  const int copy = std::min(need, audio.length() - offset);
  std::copy(audio.samples.begin() + offset, audio.samples.begin() + offset + copy,
            utt.audio.samples.begin());
  utt.source_ref = row.path;
  for (const auto& w : row.words) {
    const int s = static_cast<int>(std::lround(w.start_s * sample_rate)) - offset;
    const int e = static_cast<int>(std::lround(w.end_s * sample_rate)) - offset;
    if (s < 0 || e > need) continue;
    utt.tokens.push_back(w.text);
    utt.token_ids.push_back(-1);
    utt.token_bounds.emplace_back(s, e);
  }
  return utt;
}

// ---------------------------------------------------------------------------
// Image-source impulse response
// ---------------------------------------------------------------------------

namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 source_position(const RoomSpec& room, const SourcePlacement& src) {
  const double az = src.azimuth_deg * kPi / 180.0;
  return {room.length_m / 2.0 + src.distance_m * std::cos(az),
          room.width_m / 2.0 + src.distance_m * std::sin(az), src.height_m};
}

double mirrored(int u, double coord, double size) {
  return u % 2 == 0 ? u * size + coord : u * size + (size - coord);
}

}  // namespace

namespace {

// One image-source pass at a fixed wall reflection coefficient.
std::vector<double> image_source_pass(const RoomSpec& room, const Vec3& s, double beta,
                                      int sample_rate, int max_order) {
  const Vec3 mic{room.length_m / 2.0, room.width_m / 2.0, room.mic_height_m};
  const double direct_dist =
      std::sqrt((s.x - mic.x) * (s.x - mic.x) + (s.y - mic.y) * (s.y - mic.y) +
                (s.z - mic.z) * (s.z - mic.z));
  const double direct_amp = 1.0 / std::max(direct_dist, 1e-3);
  const double cutoff = direct_amp * 1e-3;  // 60 dB below the direct path

  const double max_span = max_order * std::max({room.length_m, room.width_m, room.height_m}) +
                          room.length_m + room.width_m + room.height_m;
  const int max_tap = static_cast<int>(std::lround(max_span / kSpeedOfSound * sample_rate)) + 2;
  std::vector<double> taps(static_cast<std::size_t>(max_tap), 0.0);

  std::vector<double> beta_pow(static_cast<std::size_t>(3 * max_order + 1), 1.0);
  for (std::size_t r = 1; r < beta_pow.size(); ++r) beta_pow[r] = beta_pow[r - 1] * beta;

  int last_tap = 0;
  for (int ux = -max_order; ux <= max_order; ++ux) {
    const int rem_x = max_order - std::abs(ux);
    const double ix = mirrored(ux, s.x, room.length_m) - mic.x;
    for (int uy = -rem_x; uy <= rem_x; ++uy) {
      const int rem_y = rem_x - std::abs(uy);
      const double iy = mirrored(uy, s.y, room.width_m) - mic.y;
      for (int uz = -rem_y; uz <= rem_y; ++uz) {
        const double iz = mirrored(uz, s.z, room.height_m) - mic.z;
        const int reflections = std::abs(ux) + std::abs(uy) + std::abs(uz);
        const double dist = std::sqrt(ix * ix + iy * iy + iz * iz);
        const double amp =
            beta_pow[static_cast<std::size_t>(reflections)] / std::max(dist, 1e-3);
        if (amp < cutoff) continue;
        const int idx = static_cast<int>(std::lround(dist / kSpeedOfSound * sample_rate));
        if (idx >= max_tap) continue;
        taps[static_cast<std::size_t>(idx)] += amp;
        last_tap = std::max(last_tap, idx);
      }
    }
  }
  taps.resize(static_cast<std::size_t>(last_tap) + 1);
  for (auto& t : taps) t *= direct_dist;  // direct-path tap -> unit magnitude
  return taps;
}

}  // namespace

std::vector<double> image_source_rir(const RoomSpec& room, const SourcePlacement& src,
                                     int sample_rate, int max_order) {
  if (sample_rate <= 0) throw ContractError("image_source_rir: bad sample rate");
  if (max_order < 0) throw ContractError("image_source_rir: negative order");
  const Vec3 s = source_position(room, src);
  if (s.x <= 0.0 || s.x >= room.length_m || s.y <= 0.0 || s.y >= room.width_m ||
      s.z <= 0.0 || s.z >= room.height_m)
    throw GeometryError("source placement falls outside the room");

  const double volume = room.length_m * room.width_m * room.height_m;
  const double surface = 2.0 * (room.length_m * room.width_m + room.length_m * room.height_m +
                                room.width_m * room.height_m);
  const double sabine_area = 0.161 * volume / room.rt60_s;
  if (sabine_area / surface > 1.0)
    throw ConfigError("infeasible rt60: required absorption exceeds the wall area");

  // The absorption is calibrated against the decay the image model actually
  // produces: a uniform-absorption shoebox decays slower than the
  // Sabine/Eyring prediction because the axis-aligned image families reflect
  // least often, so the analytic inversion alone overshoots rt60 by ~20%.
  // Two corrective regenerations keep the Schroeder estimate on target.
  auto alpha_for = [&](double rt60) {
    return 1.0 - std::exp(-0.161 * volume / (surface * rt60));
  };
  double target = room.rt60_s;
  std::vector<double> taps, best_taps;
  double best_rel = 1e9;
  for (int iteration = 0; iteration < 6; ++iteration) {
    const double beta = std::sqrt(1.0 - alpha_for(target));
    taps = image_source_pass(room, s, beta, sample_rate, max_order);
    if (max_order == 0) return taps;
    double measured = 0.0;
    try {
      measured = schroeder_rt60(taps, sample_rate);
    } catch (const ContractError&) {
      return taps;  // no usable decay range (tiny orders): keep the analytic pass
    }
    const double rel = std::abs(measured - room.rt60_s) / room.rt60_s;
    if (rel < best_rel) {
      best_rel = rel;
      best_taps = taps;
    }
    if (rel < 0.05) break;
    target = std::max(0.05, target * room.rt60_s / measured);
  }
  return best_taps;
}

// ---------------------------------------------------------------------------
// Scene sampling
// ---------------------------------------------------------------------------

SceneSimulator::SceneSimulator(SceneConfig cfg, std::shared_ptr<const Corpus> corpus)
    : cfg_(cfg), corpus_(std::move(corpus)) {
  if (!corpus_) throw ContractError("SceneSimulator needs a corpus");
  if (corpus_->speaker_count() < 2) throw DataError("corpus has fewer than two speakers");
  if (cfg_.sample_rate <= 0 || cfg_.duration_s <= 0)
    throw ConfigError("scene config: bad sample rate or duration");
}

namespace {

SourcePlacement draw_placement(Rng& rng, const SceneConfig& cfg, Field field) {
  SourcePlacement p;
  p.field = field;
  p.distance_m = field == Field::kNear ? rng.uniform(cfg.near_min_m, cfg.near_max_m)
                                       : rng.uniform(cfg.far_min_m, cfg.far_max_m);
  p.azimuth_deg = rng.uniform(0.0, 180.0);
  p.height_m = rng.uniform(cfg.src_height_min_m, cfg.src_height_max_m);
  return p;
}

std::string attribute_key(TaskAttribute a) {
  return a == TaskAttribute::kGender ? "gender" : "language";
}

}  // namespace

SceneManifest SceneSimulator::sample_scene_params(const TaskType& task, std::uint64_t seed) const {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(task.regime),
                             static_cast<std::uint64_t>(task.attribute),
                             static_cast<std::uint64_t>(task.action)}));
  SceneManifest m;
  m.seed = seed;
  m.task = task;
  m.task_attribute = task.attribute;
  m.sample_rate = cfg_.sample_rate;
  m.duration_s = cfg_.duration_s;
  m.paper_ranges = cfg_.uses_paper_ranges();
  m.removal_flag =
      task.regime == PromptRegime::kTaskSelector && task.action == SelectorAction::kRemove;

  m.room.length_m = rng.uniform(cfg_.room_min_m, cfg_.room_max_m);
  m.room.width_m = rng.uniform(cfg_.room_min_m, cfg_.room_max_m);
  m.room.height_m = rng.uniform(cfg_.height_min_m, cfg_.height_max_m);
  m.room.rt60_s = rng.uniform(cfg_.rt60_min_s, cfg_.rt60_max_s);
  m.room.mic_height_m = m.room.height_m / 2.0;

  const bool far_near_task =
      task.regime != PromptRegime::kTaskSelector && task.attribute == TaskAttribute::kFarNear;
  Field target_field, interferer_field;
  if (far_near_task) {
    // both orderings occur across seeds
    const bool target_near = rng.bernoulli(0.5);
    target_field = target_near ? Field::kNear : Field::kFar;
    interferer_field = target_near ? Field::kFar : Field::kNear;
  } else {
    target_field = rng.bernoulli(0.5) ? Field::kNear : Field::kFar;
    interferer_field = rng.bernoulli(0.5) ? Field::kNear : Field::kFar;
  }
  m.target.placement = draw_placement(rng, cfg_, target_field);
  m.interferer.placement = draw_placement(rng, cfg_, interferer_field);

  const bool loudness_task =
      task.regime != PromptRegime::kTaskSelector && task.attribute == TaskAttribute::kLoudness;
  if (loudness_task) {
    const double mag = rng.uniform(cfg_.snr_abs_min_db, cfg_.snr_abs_max_db);
    m.snr_db = rng.bernoulli(0.5) ? mag : -mag;
  } else {
    m.snr_db = rng.uniform(-cfg_.snr_range_db, cfg_.snr_range_db);
  }
  m.overlap_ratio = rng.uniform(cfg_.overlap_min, cfg_.overlap_max);

  // speaker pair subject to the task's distinguishing attribute
  const bool class_task = task.regime != PromptRegime::kTaskSelector &&
                          (task.attribute == TaskAttribute::kGender ||
                           task.attribute == TaskAttribute::kLanguage);
  const bool snippet_task =
      task.regime != PromptRegime::kTaskSelector && task.attribute == TaskAttribute::kSnippet;
  if (snippet_task && !corpus_->supports_transcripts())
    throw DataError("corpus provides no word timestamps; snippet task unsupported");

  const int n_speakers = corpus_->speaker_count();
  m.target.corpus_speaker = rng.uniform_int(n_speakers);
  if (class_task) {
    const std::string key = attribute_key(task.attribute);
    const std::string target_value = corpus_->attribute(m.target.corpus_speaker, key);
    std::vector<int> candidates;
    for (int i = 0; i < n_speakers; ++i)
      if (corpus_->attribute(i, key) != target_value) candidates.push_back(i);
    if (candidates.empty())
      throw DataError("corpus has no speaker differing in attribute '" + key + "'");
    m.interferer.corpus_speaker = candidates[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(candidates.size())))];
  } else {
    m.interferer.corpus_speaker = rng.uniform_int(n_speakers - 1);
    if (m.interferer.corpus_speaker >= m.target.corpus_speaker) ++m.interferer.corpus_speaker;
  }

  // which speaker takes the head slot is randomized so position never
  // identifies the target
  m.target_leads = rng.bernoulli(0.5);

  // utterance draws: transcripts become part of the manifest
  const auto [ov_begin, ov_end] = overlap_window(m);
  const int total = static_cast<int>(std::lround(m.duration_s * m.sample_rate));
  const double head_dur = static_cast<double>(ov_end) / m.sample_rate;
  const double tail_dur = static_cast<double>(total - ov_begin) / m.sample_rate;
  const double target_dur = m.target_leads ? head_dur : tail_dur;
  const double interferer_dur = m.target_leads ? tail_dur : head_dur;

  m.target.utterance_seed = derive_seed(seed, {kTargetStream});
  m.enrollment_seed = m.target.utterance_seed;
  Utterance target_utt = corpus_->utterance(m.target.corpus_speaker, m.target.utterance_seed, 0,
                                            target_dur, m.sample_rate);
  Utterance interferer_utt;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 16)
      throw DataError("could not draw distinct transcripts for the snippet task");
    m.interferer.utterance_seed = derive_seed(seed, {kInterfererStream, static_cast<std::uint64_t>(attempt)});
    interferer_utt = corpus_->utterance(m.interferer.corpus_speaker, m.interferer.utterance_seed,
                                        0, interferer_dur, m.sample_rate);
    if (!snippet_task || interferer_utt.tokens != target_utt.tokens) break;
  }
  m.target.transcript_ids = target_utt.token_ids;
  m.target.transcript = target_utt.tokens;
  m.target.utterance_ref = target_utt.source_ref;
  m.interferer.transcript_ids = interferer_utt.token_ids;
  m.interferer.transcript = interferer_utt.tokens;
  m.interferer.utterance_ref = interferer_utt.source_ref;
  if (snippet_task && target_utt.tokens.empty())
    throw DataError("snippet task: target utterance has no words inside the mixture window");

  // attribute labels for prompt slots
  for (const std::string& key : {std::string("gender"), std::string("language")}) {
    if (!corpus_->has_attribute(key)) continue;
    m.target.labels[key] = corpus_->attribute(m.target.corpus_speaker, key);
    m.interferer.labels[key] = corpus_->attribute(m.interferer.corpus_speaker, key);
  }
  if (class_task) {
    const std::string key = attribute_key(task.attribute);
    m.target.labels[key] = corpus_->attribute(m.target.corpus_speaker, key);
    m.interferer.labels[key] = corpus_->attribute(m.interferer.corpus_speaker, key);
  }
  m.target.labels["loudness"] = m.snr_db > 0 ? "louder" : "quieter";
  m.interferer.labels["loudness"] = m.snr_db > 0 ? "quieter" : "louder";
  m.target.labels["far_near"] = field_name(m.target.placement.field);
  m.interferer.labels["far_near"] = field_name(m.interferer.placement.field);

  if (const auto* synth = dynamic_cast<const SyntheticCorpus*>(corpus_.get())) {
    m.target.profile = synth->profile(m.target.corpus_speaker);
    m.interferer.profile = synth->profile(m.interferer.corpus_speaker);
  }

  // the distinguishing attribute must actually distinguish
  if (task.regime != PromptRegime::kTaskSelector) {
    switch (task.attribute) {
      case TaskAttribute::kGender:
      case TaskAttribute::kLanguage: {
        const std::string key = attribute_key(task.attribute);
        if (m.target.labels.at(key) == m.interferer.labels.at(key))
          throw ContractError("scene sampling violated the attribute constraint");
        break;
      }
      case TaskAttribute::kLoudness:
        if (std::abs(m.snr_db) < cfg_.snr_abs_min_db ||
            std::abs(m.snr_db) > cfg_.snr_abs_max_db)
          throw ContractError("loudness scene outside the |snr| band");
        break;
      case TaskAttribute::kFarNear:
        if (m.target.placement.field == m.interferer.placement.field)
          throw ContractError("far/near scene with equal fields");
        break;
      case TaskAttribute::kSnippet:
        if (m.target.transcript == m.interferer.transcript)
          throw ContractError("snippet scene with identical transcripts");
        break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scene rendering
// ---------------------------------------------------------------------------

namespace {

std::vector<double> to_double(const std::vector<float>& in) {
  return std::vector<double>(in.begin(), in.end());
}

}  // namespace

SceneAudio SceneSimulator::mix_scene(const SceneManifest& manifest) const {
  const int fs = manifest.sample_rate;
  const int total = static_cast<int>(std::lround(manifest.duration_s * fs));
  const auto [ov_begin, ov_end] = overlap_window(manifest);
  const double head_dur = static_cast<double>(ov_end) / fs;
  const double tail_dur = static_cast<double>(total - ov_begin) / fs;

  Utterance target_utt =
      corpus_->utterance(manifest.target.corpus_speaker, manifest.target.utterance_seed, 0,
                         manifest.target_leads ? head_dur : tail_dur, fs);
  Utterance interferer_utt =
      corpus_->utterance(manifest.interferer.corpus_speaker, manifest.interferer.utterance_seed,
                         0, manifest.target_leads ? tail_dur : head_dur, fs);
  if (target_utt.tokens != manifest.target.transcript ||
      interferer_utt.tokens != manifest.interferer.transcript)
    throw DataError("corpus no longer reproduces the manifest transcripts");

  const auto rir_target =
      image_source_rir(manifest.room, manifest.target.placement, fs, cfg_.max_image_order);
  const auto rir_interferer =
      image_source_rir(manifest.room, manifest.interferer.placement, fs, cfg_.max_image_order);

  const auto reverb_target = fft_convolve(to_double(target_utt.audio.samples), rir_target);
  const auto reverb_interferer =
      fft_convolve(to_double(interferer_utt.audio.samples), rir_interferer);

  const int target_offset = manifest.target_leads ? 0 : ov_begin;
  const int interferer_offset = manifest.target_leads ? ov_begin : 0;
  std::vector<double> wet_target(static_cast<std::size_t>(total), 0.0);
  std::vector<double> wet_interferer(static_cast<std::size_t>(total), 0.0);
  for (std::size_t i = 0; i < reverb_target.size(); ++i) {
    const std::size_t at = i + static_cast<std::size_t>(target_offset);
    if (at >= wet_target.size()) break;
    wet_target[at] = reverb_target[i];
  }
  for (std::size_t i = 0; i < reverb_interferer.size(); ++i) {
    const std::size_t at = i + static_cast<std::size_t>(interferer_offset);
    if (at >= wet_interferer.size()) break;
    wet_interferer[at] = reverb_interferer[i];
  }

  double energy_target = 0.0, energy_interferer = 0.0;
  for (int i = ov_begin; i < ov_end; ++i) {
    energy_target += wet_target[static_cast<std::size_t>(i)] * wet_target[static_cast<std::size_t>(i)];
    energy_interferer +=
        wet_interferer[static_cast<std::size_t>(i)] * wet_interferer[static_cast<std::size_t>(i)];
  }
  if (energy_target <= 0.0 || energy_interferer <= 0.0)
    throw DataError("a source is silent over the overlap window");
  const double gain =
      std::sqrt(energy_target / (energy_interferer * std::pow(10.0, manifest.snr_db / 10.0)));
  for (auto& v : wet_interferer) v *= gain;

  std::vector<double> mixture(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i)
    mixture[static_cast<std::size_t>(i)] =
        wet_target[static_cast<std::size_t>(i)] + wet_interferer[static_cast<std::size_t>(i)];

  // joint normalization keeps mixture = target_ref + interferer_ref intact
  double peak = 0.0;
  for (int i = 0; i < total; ++i)
    peak = std::max({peak, std::abs(mixture[static_cast<std::size_t>(i)]),
                     std::abs(wet_target[static_cast<std::size_t>(i)]),
                     std::abs(wet_interferer[static_cast<std::size_t>(i)])});
  const double norm = peak > 0.99 ? 0.99 / peak : 1.0;

  auto to_buffer = [&](const std::vector<double>& v) {
    AudioBuffer b;
    b.sample_rate = fs;
    b.samples.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) b.samples[i] = static_cast<float>(v[i] * norm);
    return b;
  };

  SceneAudio out;
  out.mixture = to_buffer(mixture);
  if (manifest.removal_flag) {
    // the other speaker serves as the training target
    out.target_ref = to_buffer(wet_interferer);
    out.interferer_ref = to_buffer(wet_target);
  } else {
    out.target_ref = to_buffer(wet_target);
    out.interferer_ref = to_buffer(wet_interferer);
  }

  Utterance enrollment = corpus_->utterance(manifest.target.corpus_speaker,
                                            manifest.enrollment_seed, 1, manifest.duration_s, fs);
  out.enrollment = enrollment.audio;
  peak_normalize(out.enrollment);
  return out;
}

}  // namespace tse
