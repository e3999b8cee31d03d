#pragma once

// Flat key = value run configuration shared by the CLI, the trainer, and the
// checkpoint header (which embeds the canonical text form).

#include <cstdint>
#include <string>
#include <vector>

#include "tse/model.hpp"
#include "tse/scene_sim.hpp"
#include "tse/task.hpp"

namespace tse {

enum class CueConfig { kAudioOnly, kTextOnly, kOneHot, kAudioText, kAudioOneHot };

std::string to_string(CueConfig c);
CueConfig cue_config_from_string(const std::string& s);

struct RunConfig {
  ModelConfig model;
  SceneConfig scene;

  int corpus_speakers = 32;
  std::uint64_t corpus_seed = 1;
  std::string corpus_manifest;  // empty = synthetic voices
  std::uint64_t bank_seed = 1;

  double lr = 1e-4;
  int warmup_steps = 1000;
  double grad_clip_norm = 30.0;
  int accumulation_factor = 2;
  int batch = 1;  // scenes per micro-batch
  int steps = 8000;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  std::vector<TaskType> tasks = {TaskType::independent(TaskAttribute::kLoudness),
                                 TaskType::independent(TaskAttribute::kGender)};
  std::vector<CueConfig> cues = {CueConfig::kTextOnly};

  int val_interval = 1000;
  int val_scenes = 8;
  int checkpoint_interval = 2000;
  int threads = 0;
  int scene_workers = 1;

  int eval_scenes = 200;
  double snippet_fraction = 1.0;

  int effective_batch() const { return batch * accumulation_factor; }

  // Cue configurations usable for a task (one-hot cannot describe snippets;
  // selector and complement regimes need the enrollment audio present).
  std::vector<CueConfig> cues_for_task(const TaskType& task) const;

  void validate() const;
};

std::string task_to_config_name(const TaskType& t);
TaskType task_from_config_name(const std::string& name);

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Canonical serialization: fixed key order, one `key = value` per line.
std::string config_to_text(const RunConfig& cfg);

std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace tse
