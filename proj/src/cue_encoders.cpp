#include "tse/cue_encoders.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace tse {

Vocabulary Vocabulary::build(std::vector<std::string> words) {
  std::set<std::string> unique(words.begin(), words.end());
  unique.erase("");
  Vocabulary v;
  v.tokens_ = {"<pad>", "<unk>", "<s>"};
  for (auto& w : unique) {
    if (w == "<pad>" || w == "<unk>" || w == "<s>") continue;
    v.tokens_.push_back(w);
  }
  return v;
}

int Vocabulary::id(const std::string& word) const {
  // tokens_[3..] are sorted; binary search past the specials
  auto begin = tokens_.begin() + 3;
  auto it = std::lower_bound(begin, tokens_.end(), word);
  if (it != tokens_.end() && *it == word) return static_cast<int>(it - tokens_.begin());
  return unknown_id();
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DimensionError("vocabulary id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary: " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.tokens_.push_back(line);
  }
  if (v.tokens_.size() < 3 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>" ||
      v.tokens_[2] != "<s>")
    throw DataError("vocabulary file lacks the <pad>/<unk>/<s> specials: " + path);
  for (std::size_t i = 4; i < v.tokens_.size(); ++i)
    if (v.tokens_[i] <= v.tokens_[i - 1])
      throw DataError("vocabulary words out of order: " + path);
  return v;
}

std::vector<int> tokenize(const std::string& prompt, const Vocabulary& vocab) {
  const auto words = split_words(prompt);
  if (words.empty()) throw ContractError("empty prompt");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

int one_hot_index(TaskAttribute attribute, const std::string& label) {
  switch (attribute) {
    case TaskAttribute::kGender:
      if (label == "low") return 0;
      if (label == "high") return 1;
      break;
    case TaskAttribute::kLanguage:
      if (label == "alpha") return 2;
      if (label == "beta") return 3;
      break;
    case TaskAttribute::kLoudness:
      if (label == "louder") return 4;
      if (label == "quieter") return 5;
      break;
    case TaskAttribute::kFarNear:
      if (label == "near") return 6;
      if (label == "far") return 7;
      break;
    case TaskAttribute::kSnippet:
      throw UnsupportedCueError("transcription snippets have no one-hot representation");
  }
  throw DataError("unknown label '" + label + "' for attribute " + to_string(attribute));
}

}  // namespace tse
