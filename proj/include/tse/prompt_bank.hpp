#pragma once

// Static template bank for the three text regimes, with disjoint
// train/validation/test splits by template id and snippet-length control.
// Ten base patterns per task are expanded through ten surface variations,
// giving one hundred phrasings per task.

#include <map>
#include <string>
#include <vector>

#include "tse/rng.hpp"
#include "tse/scene_sim.hpp"
#include "tse/task.hpp"

namespace tse {

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw ContractError("bad Split");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split: " + s);
}

// Slots: "{attr}" takes the task attribute value, "{snippet}" the transcript
// excerpt.
struct PromptTemplate {
  int id = 0;
  TaskType task;
  std::string pattern;
  Split split = Split::kTrain;
};

// Rendered text instruction plus its ground-truth fills.
struct CuePrompt {
  std::string text;
  TaskType task;
  int template_id = 0;
  Split split = Split::kTrain;
  std::map<std::string, std::string> slots;
  double snippet_fraction = 1.0;
};

class PromptBank {
 public:
  // The full built-in bank with splits assigned from `split_seed`.
  static PromptBank built_in(std::uint64_t split_seed = 1);

  static PromptBank from_templates(std::vector<PromptTemplate> templates);

  const std::vector<PromptTemplate>& templates() const { return templates_; }

  std::vector<const PromptTemplate*> for_task(const TaskType& task, Split split) const;

  // Uniform draw among the task's templates in the given split.
  const PromptTemplate& sample(const TaskType& task, Split split, Rng& rng) const;

  void save(const std::string& path) const;
  static PromptBank load(const std::string& path);

 private:
  std::vector<PromptTemplate> templates_;
};

// Re-partitions by template id with the 80/10/10 rule; every task keeps at
// least one validation and one test template. Requires >= 10 templates per
// task.
PromptBank split_bank(const PromptBank& bank, std::uint64_t seed);

// Contiguous excerpt of round(fraction * len) tokens with a seeded-random
// start position. Training uses fraction 1.0 only.
std::vector<std::string> make_snippet(const std::vector<std::string>& transcript,
                                      double fraction, Rng& rng);

// Fills the template's slots from the manifest's ground truth. The template
// task must match the manifest task exactly.
CuePrompt render_prompt(const PromptTemplate& tmpl, const SceneManifest& manifest,
                        double snippet_fraction = 1.0);

enum class RefSelector { kTarget, kInterferer };

// extract -> target, remove -> interferer; description regimes -> target.
// Verifies prompt/manifest consistency (a removal prompt requires the
// manifest's removal flag).
RefSelector resolve_target(const CuePrompt& prompt, const SceneManifest& manifest);

// Every task type the built-in bank covers.
const std::vector<TaskType>& all_task_types();

// Every word the bank and the synthetic corpus can emit (vocabulary source).
std::vector<std::string> bank_word_list(const PromptBank& bank);

}  // namespace tse
