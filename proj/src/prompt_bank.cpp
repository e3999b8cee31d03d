#include "tse/prompt_bank.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tse/text.hpp"

namespace tse {

using nlohmann::json;

namespace {

std::string decap(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return s;
}

std::string strip_period(std::string s) {
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

// Ten surface variations applied to every base pattern.
std::string vary(const std::string& base, int variant) {
  switch (variant) {
    case 0: return base;
    case 1: return "Please " + decap(base);
    case 2: return strip_period(base) + " now.";
    case 3: return "Can you " + decap(strip_period(base)) + "?";
    case 4: return "Would you " + decap(strip_period(base)) + "?";
    case 5: return "Hey, " + decap(base);
    case 6: return strip_period(base) + ", thanks.";
    case 7: return "Go ahead and " + decap(base);
    case 8: return "Try to " + decap(base);
    case 9: return "Just " + decap(base);
  }
  throw ContractError("bad variation index");
}

std::vector<std::string> base_patterns(const TaskType& task) {
  if (task.regime == PromptRegime::kTaskSelector) {
    if (task.action == SelectorAction::kExtract)
      return {
          "Extract the enrolled voice.",
          "Keep the speaker from the sample.",
          "Isolate the registered speaker.",
          "Pull out the given voice.",
          "Focus on the enrolled speaker.",
          "Recover the voice I gave you.",
          "Capture the sample speaker.",
          "Retain only the given voice.",
          "Grab the enrolled speaker.",
          "Fetch the voice matching the sample.",
      };
    return {
        "Remove the given voice.",
        "Eliminate the enrolled speaker.",
        "Mute the speaker from the sample.",
        "Suppress the registered voice.",
        "Drop the given speaker.",
        "Silence the voice I provided.",
        "Cancel the enrolled voice.",
        "Erase the sample speaker.",
        "Cut the given voice out.",
        "Strip away the enrolled voice.",
    };
  }

  const bool complement = task.regime == PromptRegime::kComplement;
  if (complement) {
    const char* tail = nullptr;
    switch (task.attribute) {
      case TaskAttribute::kGender: tail = "{attr} pitched"; break;
      case TaskAttribute::kLanguage: tail = "{attr} language"; break;
      case TaskAttribute::kLoudness: tail = "{attr}"; break;
      case TaskAttribute::kFarNear: tail = "{attr} field"; break;
      case TaskAttribute::kSnippet: tail = nullptr; break;
    }
    if (task.attribute == TaskAttribute::kSnippet)
      return {
          "Use the sample; the target says {snippet}.",
          "Given the recording, keep whoever says {snippet}.",
          "With the enrolled voice, find {snippet}.",
          "Based on the sample, they say {snippet}.",
          "Matching the voiceprint, track down {snippet}.",
          "From the enrolled clip, pull whoever says {snippet}.",
          "Using the given voice, track {snippet}.",
          "With the registered sample, find saying {snippet}.",
          "Per the enrollment, they mention {snippet}.",
          "Against the provided clip, isolate {snippet}.",
      };
    const std::string t(tail);
    return {
        "Use the sample; extract the " + t + " voice.",
        "Given the recording, keep the " + t + " speaker.",
        "With the enrolled voice, isolate the " + t + " talker.",
        "Based on the sample, I am the " + t + " speaker.",
        "Matching the voiceprint, extract the " + t + " one.",
        "From the enrolled clip, pull the " + t + " voice.",
        "Using the given voice, find the " + t + " speaker.",
        "With the registered sample, keep the " + t + " voice.",
        "Per the enrollment, extract the " + t + " speaker.",
        "Against the provided clip, isolate the " + t + " voice.",
    };
  }

  switch (task.attribute) {
    case TaskAttribute::kGender:
      return {
          "Extract the {attr} pitched voice.",
          "Isolate the {attr} pitched speaker.",
          "Pull out the {attr} voice.",
          "Keep only the {attr} pitched talker.",
          "Focus on the {attr} pitched person.",
          "Grab the {attr} voice from the mix.",
          "Recover the {attr} pitched speech.",
          "Give me the {attr} pitched voice.",
          "Capture the {attr} voice here.",
          "Bring out the {attr} pitched speaker.",
      };
    case TaskAttribute::kLanguage:
      return {
          "Extract the {attr} language speaker.",
          "Isolate the voice speaking {attr}.",
          "Pull out the {attr} language voice.",
          "Keep only the {attr} speaking talker.",
          "Focus on the {attr} language person.",
          "Grab the {attr} speaker from the mix.",
          "Recover the speech in {attr}.",
          "Give me the {attr} language voice.",
          "Capture whoever speaks {attr}.",
          "Bring out the {attr} language speaker.",
      };
    case TaskAttribute::kLoudness:
      return {
          "Extract the {attr} speaker.",
          "Isolate the {attr} voice.",
          "Pull out the {attr} talker.",
          "Keep only the {attr} speaker.",
          "Focus on the {attr} person.",
          "Grab the {attr} voice for me.",
          "Recover the {attr} speech.",
          "Give me the {attr} voice.",
          "Capture the {attr} speaker here.",
          "Bring out the {attr} one.",
      };
    case TaskAttribute::kFarNear:
      return {
          "Extract the {attr} field speaker.",
          "Isolate the {attr} field voice.",
          "Pull out the {attr} field talker.",
          "Keep only the {attr} field speaker.",
          "Focus on the {attr} field person.",
          "Grab the {attr} field voice.",
          "Recover the {attr} field speech.",
          "Give me the {attr} field voice.",
          "Capture the {attr} field speaker.",
          "Bring out the {attr} field one.",
      };
    case TaskAttribute::kSnippet:
      return {
          "Extract the speaker saying {snippet}.",
          "Isolate whoever says {snippet}.",
          "Pull out the voice saying {snippet}.",
          "Keep the speaker who says {snippet}.",
          "Focus on the one saying {snippet}.",
          "Grab the talker saying {snippet}.",
          "Recover the speech containing {snippet}.",
          "Give me the voice that says {snippet}.",
          "Capture whoever mentions {snippet}.",
          "Bring out the speaker of {snippet}.",
      };
  }
  throw ContractError("bad attribute");
}

std::string task_key(const TaskType& t) {
  std::string key = to_string(t.regime) + "/";
  key += t.regime == PromptRegime::kTaskSelector ? to_string(t.action) : to_string(t.attribute);
  return key;
}

std::string attribute_label_key(TaskAttribute a) { return to_string(a); }

}  // namespace

const std::vector<TaskType>& all_task_types() {
  static const std::vector<TaskType> kTasks = [] {
    std::vector<TaskType> tasks;
    for (TaskAttribute a : {TaskAttribute::kSnippet, TaskAttribute::kGender,
                            TaskAttribute::kLanguage, TaskAttribute::kLoudness,
                            TaskAttribute::kFarNear}) {
      tasks.push_back(TaskType::independent(a));
      tasks.push_back(TaskType::complement(a));
    }
    tasks.push_back(TaskType::selector(SelectorAction::kExtract));
    tasks.push_back(TaskType::selector(SelectorAction::kRemove));
    return tasks;
  }();
  return kTasks;
}

PromptBank PromptBank::built_in(std::uint64_t split_seed) {
  PromptBank bank;
  int next_id = 0;
  for (const TaskType& task : all_task_types()) {
    for (const std::string& base : base_patterns(task)) {
      for (int variant = 0; variant < 10; ++variant) {
        PromptTemplate t;
        t.id = next_id++;
        t.task = task;
        t.pattern = vary(base, variant);
        bank.templates_.push_back(std::move(t));
      }
    }
  }
  return split_bank(bank, split_seed);
}

PromptBank PromptBank::from_templates(std::vector<PromptTemplate> templates) {
  PromptBank bank;
  bank.templates_ = std::move(templates);
  return bank;
}

std::vector<const PromptTemplate*> PromptBank::for_task(const TaskType& task, Split split) const {
  std::vector<const PromptTemplate*> out;
  for (const auto& t : templates_)
    if (t.task == task && t.split == split) out.push_back(&t);
  return out;
}

const PromptTemplate& PromptBank::sample(const TaskType& task, Split split, Rng& rng) const {
  auto pool = for_task(task, split);
  if (pool.empty()) throw ContractError("prompt bank has no templates for task " + task_key(task));
  return *pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

void PromptBank::save(const std::string& path) const {
  json arr = json::array();
  for (const auto& t : templates_) {
    json row{{"id", t.id},
             {"regime", to_string(t.task.regime)},
             {"pattern", t.pattern},
             {"split", to_string(t.split)}};
    if (t.task.regime == PromptRegime::kTaskSelector)
      row["action"] = to_string(t.task.action);
    else
      row["attribute"] = to_string(t.task.attribute);
    arr.push_back(std::move(row));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write prompt bank: " + path);
  out << arr.dump(2) << "\n";
}

PromptBank PromptBank::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt bank: " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::parse_error& e) {
    throw DataError(std::string("prompt bank parse error: ") + e.what());
  }
  PromptBank bank;
  try {
    for (const auto& row : arr) {
      PromptTemplate t;
      t.id = row.at("id").get<int>();
      t.task.regime = regime_from_string(row.at("regime").get<std::string>());
      if (t.task.regime == PromptRegime::kTaskSelector)
        t.task.action = action_from_string(row.at("action").get<std::string>());
      else
        t.task.attribute = attribute_from_string(row.at("attribute").get<std::string>());
      t.pattern = row.at("pattern").get<std::string>();
      t.split = split_from_string(row.at("split").get<std::string>());
      bank.templates_.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("prompt bank field error: ") + e.what());
  }
  return bank;
}

PromptBank split_bank(const PromptBank& bank, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < bank.templates().size(); ++i)
    by_task[task_key(bank.templates()[i].task)].push_back(i);

  std::vector<PromptTemplate> out = bank.templates();
  for (auto& [key, indices] : by_task) {
    const int n = static_cast<int>(indices.size());
    if (n < 10)
      throw ConfigError("task " + key + " has " + std::to_string(n) +
                        " templates; at least 10 required for the 80/10/10 split");
    Rng rng(derive_seed(seed, {splitmix64(std::hash<std::string>{}(key))}));
    // Fisher-Yates over the task's template indices
    for (int i = n - 1; i > 0; --i)
      std::swap(indices[static_cast<std::size_t>(i)],
                indices[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    const int n_test = std::max(1, n / 10);
    const int n_val = std::max(1, n / 10);
    for (int i = 0; i < n; ++i) {
      Split split = Split::kTrain;
      if (i < n_test) split = Split::kTest;
      else if (i < n_test + n_val) split = Split::kVal;
      out[indices[static_cast<std::size_t>(i)]].split = split;
    }
  }
  return PromptBank::from_templates(std::move(out));
}

std::vector<std::string> make_snippet(const std::vector<std::string>& transcript,
                                      double fraction, Rng& rng) {
  if (transcript.empty()) throw ContractError("make_snippet: empty transcript");
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ContractError("make_snippet: fraction must be in (0, 1]");
  const int len = static_cast<int>(transcript.size());
  const int take = std::clamp(static_cast<int>(std::lround(fraction * len)), 1, len);
  const int start = rng.uniform_int(len - take + 1);
  return {transcript.begin() + start, transcript.begin() + start + take};
}

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size()))
    text.replace(pos, from.size(), to);
}

}  // namespace

CuePrompt render_prompt(const PromptTemplate& tmpl, const SceneManifest& manifest,
                        double snippet_fraction) {
  if (tmpl.task.regime != manifest.task.regime)
    throw ContractError("template regime does not match the scene");
  if (tmpl.task.regime == PromptRegime::kTaskSelector) {
    if (tmpl.task.action != manifest.task.action)
      throw ContractError("selector template action does not match the scene");
  } else if (tmpl.task.attribute != manifest.task_attribute) {
    throw ContractError("template attribute does not match the scene task");
  }

  CuePrompt prompt;
  prompt.task = tmpl.task;
  prompt.template_id = tmpl.id;
  prompt.split = tmpl.split;
  prompt.snippet_fraction = snippet_fraction;
  std::string text = tmpl.pattern;

  if (tmpl.task.regime != PromptRegime::kTaskSelector) {
    if (tmpl.task.attribute == TaskAttribute::kSnippet) {
      Rng rng(derive_seed(manifest.seed, {0x511, static_cast<std::uint64_t>(tmpl.id),
                                          static_cast<std::uint64_t>(snippet_fraction * 1000)}));
      const auto words = make_snippet(manifest.target.transcript, snippet_fraction, rng);
      const std::string snippet = join_words(words);
      replace_all(text, "{snippet}", snippet);
      prompt.slots["snippet"] = snippet;
    } else {
      const std::string key = attribute_label_key(tmpl.task.attribute);
      auto it = manifest.target.labels.find(key);
      if (it == manifest.target.labels.end() || it->second.empty())
        throw ContractError("manifest lacks the ground-truth label '" + key + "'");
      replace_all(text, "{attr}", it->second);
      prompt.slots["attr"] = it->second;
    }
  }
  prompt.text = text;

  // answerability: every slot value must be the manifest's ground truth
  for (const auto& [slot, value] : prompt.slots) {
    if (text.find(value) == std::string::npos)
      throw ContractError("rendered prompt dropped its slot value");
    if (slot == "attr" &&
        value != manifest.target.labels.at(attribute_label_key(tmpl.task.attribute)))
      throw ContractError("rendered prompt names a non-ground-truth value");
  }
  return prompt;
}

RefSelector resolve_target(const CuePrompt& prompt, const SceneManifest& manifest) {
  if (prompt.task.regime == PromptRegime::kTaskSelector) {
    const bool removing = prompt.task.action == SelectorAction::kRemove;
    if (removing != manifest.removal_flag)
      throw ContractError("selector prompt and manifest removal flag disagree");
    return removing ? RefSelector::kInterferer : RefSelector::kTarget;
  }
  return RefSelector::kTarget;
}

std::vector<std::string> bank_word_list(const PromptBank& bank) {
  std::set<std::string> words;
  for (const auto& t : bank.templates()) {
    std::string pattern = t.pattern;
    replace_all(pattern, "{attr}", " ");
    replace_all(pattern, "{snippet}", " ");
    for (auto& w : split_words(pattern)) words.insert(w);
  }
  for (const char* label : {"low", "high", "alpha", "beta", "louder", "quieter", "near", "far"})
    words.insert(label);
  for (TokenAlphabet a : {TokenAlphabet::kA, TokenAlphabet::kB})
    for (const auto& tok : SyntheticCorpus::alphabet_tokens(a)) words.insert(tok);
  return {words.begin(), words.end()};
}

}  // namespace tse
