#pragma once

#include <string>

#include "tse/errors.hpp"

namespace tse {

// The five attributes a cue can name. Snippet is transcript content; the
// other four are binary perceptual classes.
enum class TaskAttribute { kSnippet, kGender, kLanguage, kLoudness, kFarNear };

// The three text regimes: standalone description, extract/remove directive,
// or a description complementing enrollment audio.
enum class PromptRegime { kIndependentCue, kTaskSelector, kComplement };

enum class SelectorAction { kExtract, kRemove };

// One task type: a regime plus either an attribute (independent/complement)
// or an action (selector).
struct TaskType {
  PromptRegime regime = PromptRegime::kIndependentCue;
  TaskAttribute attribute = TaskAttribute::kGender;  // unused for selector
  SelectorAction action = SelectorAction::kExtract;  // selector only

  static TaskType independent(TaskAttribute attr) {
    return {PromptRegime::kIndependentCue, attr, SelectorAction::kExtract};
  }
  static TaskType selector(SelectorAction act) {
    return {PromptRegime::kTaskSelector, TaskAttribute::kGender, act};
  }
  static TaskType complement(TaskAttribute attr) {
    return {PromptRegime::kComplement, attr, SelectorAction::kExtract};
  }

  bool operator==(const TaskType&) const = default;
};

inline std::string to_string(TaskAttribute a) {
  switch (a) {
    case TaskAttribute::kSnippet: return "snippet";
    case TaskAttribute::kGender: return "gender";
    case TaskAttribute::kLanguage: return "language";
    case TaskAttribute::kLoudness: return "loudness";
    case TaskAttribute::kFarNear: return "far_near";
  }
  throw ContractError("bad TaskAttribute");
}

inline TaskAttribute attribute_from_string(const std::string& s) {
  if (s == "snippet") return TaskAttribute::kSnippet;
  if (s == "gender") return TaskAttribute::kGender;
  if (s == "language") return TaskAttribute::kLanguage;
  if (s == "loudness") return TaskAttribute::kLoudness;
  if (s == "far_near") return TaskAttribute::kFarNear;
  throw ConfigError("unknown task attribute: " + s);
}

inline std::string to_string(PromptRegime r) {
  switch (r) {
    case PromptRegime::kIndependentCue: return "independent_cue";
    case PromptRegime::kTaskSelector: return "task_selector";
    case PromptRegime::kComplement: return "complement";
  }
  throw ContractError("bad PromptRegime");
}

inline PromptRegime regime_from_string(const std::string& s) {
  if (s == "independent_cue") return PromptRegime::kIndependentCue;
  if (s == "task_selector") return PromptRegime::kTaskSelector;
  if (s == "complement") return PromptRegime::kComplement;
  throw ConfigError("unknown prompt regime: " + s);
}

inline std::string to_string(SelectorAction a) {
  return a == SelectorAction::kExtract ? "extract" : "remove";
}

inline SelectorAction action_from_string(const std::string& s) {
  if (s == "extract") return SelectorAction::kExtract;
  if (s == "remove") return SelectorAction::kRemove;
  throw ConfigError("unknown selector action: " + s);
}

}  // namespace tse
