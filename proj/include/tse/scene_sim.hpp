#pragma once

// Deterministic simulator for reverberant two-speaker scenes: shoebox rooms
// with image-source impulse responses, a built-in synthetic voice corpus, an
// ingestion path for user-supplied corpora, exact SNR over the overlapped
// region, and attribute labels for prompt generation. Every scene is a pure
// function of its manifest (plus the corpus), so seeds reproduce audio
// bit for bit.

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tse/audio.hpp"
#include "tse/errors.hpp"
#include "tse/rng.hpp"
#include "tse/task.hpp"

namespace tse {

inline constexpr double kSpeedOfSound = 343.0;  // m/s

struct RoomSpec {
  double length_m = 10.0;
  double width_m = 10.0;
  double height_m = 3.0;
  double rt60_s = 0.4;
  double mic_height_m = 1.5;  // mic sits at (length/2, width/2, mic_height)
};

enum class Field { kNear, kFar };

struct SourcePlacement {
  double distance_m = 1.0;
  double azimuth_deg = 90.0;  // [0, 180]
  double height_m = 1.7;      // [1.6, 1.9]
  Field field = Field::kNear;
};

enum class PitchClass { kLow, kHigh };
enum class TokenAlphabet { kA, kB };

// Synthetic stand-in for a corpus speaker: pitch class is the gender proxy,
// the token alphabet the language proxy.
struct SpeakerProfile {
  int id = 0;
  PitchClass pitch_class = PitchClass::kLow;
  TokenAlphabet alphabet = TokenAlphabet::kA;
  double base_f0_hz = 120.0;
  std::uint64_t formant_seed = 0;
};

struct SpeakerSlot {
  int corpus_speaker = -1;
  SpeakerProfile profile;  // synthetic corpora only
  SourcePlacement placement;
  std::uint64_t utterance_seed = 0;
  std::vector<int> transcript_ids;        // alphabet-local token ids (synthetic)
  std::vector<std::string> transcript;    // rendered words
  std::string utterance_ref;              // ingested corpora: source file
  std::map<std::string, std::string> labels;  // gender/language/loudness/far_near
};

// Complete declarative description of one simulated mixture.
struct SceneManifest {
  std::uint64_t seed = 0;
  RoomSpec room;
  SpeakerSlot target;
  SpeakerSlot interferer;
  double snr_db = 0.0;          // post-reverberation, over the overlapped region
  double overlap_ratio = 0.5;   // of the mixture duration
  double duration_s = 1.5;
  int sample_rate = 8000;
  TaskType task;
  TaskAttribute task_attribute = TaskAttribute::kGender;
  bool removal_flag = false;
  bool target_leads = true;     // target takes the head slot, interferer the tail
  bool paper_ranges = true;     // room/rt60 drawn from the published ranges
  std::uint64_t enrollment_seed = 0;
  std::string enrollment_ref;   // ingested corpora: enrollment file
};

std::string manifest_to_json(const SceneManifest& m);
SceneManifest manifest_from_json(const std::string& json_text);

// Everything the training loop needs for one scene. target_ref is always the
// training reference: for removal scenes the roles are already swapped, so it
// holds the interfering speaker's reverberant signal.
struct SceneAudio {
  AudioBuffer mixture;
  AudioBuffer target_ref;
  AudioBuffer interferer_ref;
  AudioBuffer enrollment;  // dry clip of the enrolled speaker
};

// [begin, end) sample window where both speakers are active.
std::pair<int, int> overlap_window(const SceneManifest& m);

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct Utterance {
  AudioBuffer audio;
  std::vector<int> token_ids;
  std::vector<std::string> tokens;
  std::vector<std::pair<int, int>> token_bounds;  // sample ranges
  std::string source_ref;                         // file path for ingested rows
};

class Corpus {
 public:
  virtual ~Corpus() = default;
  virtual int speaker_count() const = 0;
  virtual std::string speaker_id(int speaker) const = 0;
  // Binary class label for gender/language; throws DataError when the corpus
  // cannot support the requested attribute.
  virtual std::string attribute(int speaker, const std::string& key) const = 0;
  virtual bool has_attribute(const std::string& key) const = 0;
  virtual bool supports_transcripts() const = 0;
  // Deterministic per (speaker, seed). `variant` separates the mixture
  // utterance from the enrollment utterance of the same speaker.
  virtual Utterance utterance(int speaker, std::uint64_t seed, int variant,
                              double duration_s, int sample_rate) const = 0;
};

// Procedural voices: harmonic tone complexes with per-token resonances.
class SyntheticCorpus final : public Corpus {
 public:
  explicit SyntheticCorpus(std::uint64_t corpus_seed = 1, int speakers = 32);

  int speaker_count() const override { return static_cast<int>(profiles_.size()); }
  std::string speaker_id(int speaker) const override;
  std::string attribute(int speaker, const std::string& key) const override;
  bool has_attribute(const std::string& key) const override;
  bool supports_transcripts() const override { return true; }
  Utterance utterance(int speaker, std::uint64_t seed, int variant,
                      double duration_s, int sample_rate) const override;

  const SpeakerProfile& profile(int speaker) const;

  static const std::vector<std::string>& alphabet_tokens(TokenAlphabet a);

 private:
  std::vector<SpeakerProfile> profiles_;
};

// Renders one utterance from explicit token ids (used by SyntheticCorpus and
// directly by tests). Tokens outside the profile's alphabet are rejected.
Utterance synth_utterance(const SpeakerProfile& profile, const std::vector<int>& token_ids,
                          double duration_s, int sample_rate);

// User-supplied corpus: JSON-lines manifest rows
//   {"path": ..., "speaker_id": ..., "attributes": {...}, "timestamps": [...]}
class IngestedCorpus final : public Corpus {
 public:
  int speaker_count() const override { return static_cast<int>(speakers_.size()); }
  std::string speaker_id(int speaker) const override;
  std::string attribute(int speaker, const std::string& key) const override;
  bool has_attribute(const std::string& key) const override;
  bool supports_transcripts() const override { return has_timestamps_; }
  Utterance utterance(int speaker, std::uint64_t seed, int variant,
                      double duration_s, int sample_rate) const override;

 private:
  friend std::shared_ptr<Corpus> ingest_corpus(const std::string& manifest_path);

  struct Word {
    std::string text;
    double start_s = 0.0;
    double end_s = 0.0;
  };
  struct Row {
    std::string path;
    std::map<std::string, std::string> attributes;
    std::vector<Word> words;
  };
  struct Speaker {
    std::string id;
    std::vector<int> rows;
  };

  std::vector<Row> rows_;
  std::vector<Speaker> speakers_;
  bool has_timestamps_ = false;
};

// Validates and indexes a corpus manifest file.
std::shared_ptr<Corpus> ingest_corpus(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SceneConfig {
  int sample_rate = 8000;
  double duration_s = 1.5;
  int max_image_order = 12;
  // Sampling ranges; defaults follow the published setup.
  double room_min_m = 9.0, room_max_m = 11.0;
  double height_min_m = 2.6, height_max_m = 3.5;
  double rt60_min_s = 0.3, rt60_max_s = 0.6;
  double near_min_m = 0.3, near_max_m = 0.5;
  double far_min_m = 1.5, far_max_m = 2.5;
  double src_height_min_m = 1.6, src_height_max_m = 1.9;
  double overlap_min = 0.4, overlap_max = 0.7;
  double snr_abs_min_db = 2.0, snr_abs_max_db = 3.0;  // loudness task band
  double snr_range_db = 3.0;                          // other tasks: [-3, 3]

  bool uses_paper_ranges() const {
    return room_min_m == 9.0 && room_max_m == 11.0 && height_min_m == 2.6 &&
           height_max_m == 3.5 && rt60_min_s == 0.3 && rt60_max_s == 0.6;
  }
};

// Image-source impulse response for a shoebox room with uniform wall
// absorption chosen so the simulated decay matches rt60 (Eyring inversion of
// the Sabine absorption area). Taps are scaled so the direct path has unit
// magnitude; images more than 60 dB below the direct path are dropped.
std::vector<double> image_source_rir(const RoomSpec& room, const SourcePlacement& src,
                                     int sample_rate, int max_order);

class SceneSimulator {
 public:
  SceneSimulator(SceneConfig cfg, std::shared_ptr<const Corpus> corpus);

  const SceneConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return *corpus_; }

  // Draws every scene parameter from the configured ranges. Deterministic
  // per (task, seed).
  SceneManifest sample_scene_params(const TaskType& task, std::uint64_t seed) const;

  // Renders the manifest: dry utterances, room convolution, exact SNR over
  // the overlapped window, summation, and joint peak normalization.
  SceneAudio mix_scene(const SceneManifest& manifest) const;

 private:
  SceneConfig cfg_;
  std::shared_ptr<const Corpus> corpus_;
};

}  // namespace tse
