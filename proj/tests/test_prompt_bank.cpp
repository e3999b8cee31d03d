#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "tse/prompt_bank.hpp"
#include "tse/text.hpp"

using namespace tse;

namespace {

SceneSimulator make_sim() {
  return SceneSimulator(SceneConfig{}, std::make_shared<SyntheticCorpus>(1, 16));
}

}  // namespace

TEST_CASE("built-in bank size and split structure") {
  auto bank = PromptBank::built_in(3);
  CHECK(bank.templates().size() == 1200);  // 12 tasks x 100 phrasings

  for (const TaskType& task : all_task_types()) {
    const auto train = bank.for_task(task, Split::kTrain);
    const auto val = bank.for_task(task, Split::kVal);
    const auto test = bank.for_task(task, Split::kTest);
    CHECK(train.size() == 80);
    CHECK(val.size() == 10);
    CHECK(test.size() == 10);

    std::set<int> ids;
    for (const auto* t : train) ids.insert(t->id);
    for (const auto* t : val) ids.insert(t->id);
    for (const auto* t : test) ids.insert(t->id);
    CHECK(ids.size() == 100);  // disjoint by id
  }

  // patterns are unique strings across the whole bank
  std::set<std::string> patterns;
  for (const auto& t : bank.templates()) patterns.insert(t.pattern);
  CHECK(patterns.size() == bank.templates().size());
}

TEST_CASE("split_bank is deterministic per seed and rejects small banks") {
  auto a = split_bank(PromptBank::built_in(1), 9);
  auto b = split_bank(PromptBank::built_in(1), 9);
  for (std::size_t i = 0; i < a.templates().size(); ++i)
    CHECK(a.templates()[i].split == b.templates()[i].split);

  std::vector<PromptTemplate> few;
  for (int i = 0; i < 5; ++i)
    few.push_back({i, TaskType::independent(TaskAttribute::kGender), "p" + std::to_string(i),
                   Split::kTrain});
  CHECK_THROWS_AS(split_bank(PromptBank::from_templates(few), 1), ConfigError);
}

TEST_CASE("bank json round trip") {
  namespace fs = std::filesystem;
  auto bank = PromptBank::built_in(5);
  const auto path = (fs::temp_directory_path() / "tse_bank.json").string();
  bank.save(path);
  auto loaded = PromptBank::load(path);
  REQUIRE(loaded.templates().size() == bank.templates().size());
  for (std::size_t i = 0; i < bank.templates().size(); ++i) {
    CHECK(loaded.templates()[i].pattern == bank.templates()[i].pattern);
    CHECK(loaded.templates()[i].split == bank.templates()[i].split);
    CHECK(loaded.templates()[i].task == bank.templates()[i].task);
  }
  fs::remove(path);
}

TEST_CASE("make_snippet") {
  Rng rng(4);
  const std::vector<std::string> words = {"ka", "to", "mi", "su", "ne", "ro", "ha", "yu", "sa", "ke"};

  SUBCASE("fraction 1.0 returns the whole transcript") {
    CHECK(make_snippet(words, 1.0, rng) == words);
  }

  SUBCASE("fraction 0.5 of 10 tokens gives 5 contiguous tokens") {
    for (int trial = 0; trial < 50; ++trial) {
      auto snip = make_snippet(words, 0.5, rng);
      CHECK(snip.size() == 5);
      // contiguous substring check
      bool found = false;
      for (std::size_t start = 0; start + snip.size() <= words.size(); ++start)
        if (std::equal(snip.begin(), snip.end(), words.begin() + start)) found = true;
      CHECK(found);
    }
  }

  SUBCASE("substring property holds for every fraction") {
    for (double fraction : {0.5, 0.8, 1.0}) {
      auto snip = make_snippet(words, fraction, rng);
      bool found = false;
      for (std::size_t start = 0; start + snip.size() <= words.size(); ++start)
        if (std::equal(snip.begin(), snip.end(), words.begin() + start)) found = true;
      CHECK(found);
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(make_snippet({}, 1.0, rng), ContractError);
    CHECK_THROWS_AS(make_snippet(words, 0.0, rng), ContractError);
    CHECK_THROWS_AS(make_snippet(words, 1.5, rng), ContractError);
  }
}

TEST_CASE("render_prompt fills ground truth") {
  auto sim = make_sim();
  auto bank = PromptBank::built_in(7);
  Rng rng(11);

  SUBCASE("loudness prompt names the louder/quieter slot") {
    auto m = sim.sample_scene_params(TaskType::independent(TaskAttribute::kLoudness), 5);
    const auto& tmpl = bank.sample(TaskType::independent(TaskAttribute::kLoudness),
                                   Split::kTrain, rng);
    auto prompt = render_prompt(tmpl, m);
    CHECK(prompt.slots.at("attr") == m.target.labels.at("loudness"));
    CHECK(prompt.text.find(prompt.slots.at("attr")) != std::string::npos);
  }

  SUBCASE("snippet prompt quotes the target transcript only") {
    auto m = sim.sample_scene_params(TaskType::independent(TaskAttribute::kSnippet), 6);
    const auto& tmpl =
        bank.sample(TaskType::independent(TaskAttribute::kSnippet), Split::kTrain, rng);
    for (double fraction : {0.5, 0.8, 1.0}) {
      auto prompt = render_prompt(tmpl, m, fraction);
      const auto snip = split_words(prompt.slots.at("snippet"));
      bool in_target = false;
      for (std::size_t s = 0; s + snip.size() <= m.target.transcript.size(); ++s)
        if (std::equal(snip.begin(), snip.end(), m.target.transcript.begin() + s)) in_target = true;
      CHECK(in_target);
      CHECK(snip != m.interferer.transcript);
    }
  }

  SUBCASE("selector prompt consistency with the removal flag") {
    auto m = sim.sample_scene_params(TaskType::selector(SelectorAction::kRemove), 7);
    REQUIRE(m.removal_flag);
    const auto& tmpl =
        bank.sample(TaskType::selector(SelectorAction::kRemove), Split::kTrain, rng);
    auto prompt = render_prompt(tmpl, m);
    CHECK(resolve_target(prompt, m) == RefSelector::kInterferer);

    // an extract prompt paired with a removal manifest is inconsistent
    const auto& wrong =
        bank.sample(TaskType::selector(SelectorAction::kExtract), Split::kTrain, rng);
    CHECK_THROWS_AS(render_prompt(wrong, m), ContractError);
    CuePrompt forged = prompt;
    forged.task.action = SelectorAction::kExtract;
    CHECK_THROWS_AS(resolve_target(forged, m), ContractError);
  }

  SUBCASE("complement prompt references enrollment and the attribute") {
    auto m = sim.sample_scene_params(TaskType::complement(TaskAttribute::kGender), 8);
    const auto& tmpl =
        bank.sample(TaskType::complement(TaskAttribute::kGender), Split::kTrain, rng);
    auto prompt = render_prompt(tmpl, m);
    CHECK(prompt.text.find(prompt.slots.at("attr")) != std::string::npos);
    const std::set<std::string> enrollment_words = {"sample",     "recording", "enrolled",
                                                    "voiceprint", "clip",      "registered",
                                                    "enrollment", "provided",  "given"};
    bool mentions_enrollment = false;
    for (const auto& w : split_words(prompt.text))
      if (enrollment_words.count(w)) mentions_enrollment = true;
    CHECK(mentions_enrollment);
  }

  SUBCASE("incompatible template and task") {
    auto m = sim.sample_scene_params(TaskType::independent(TaskAttribute::kGender), 9);
    const auto& tmpl =
        bank.sample(TaskType::independent(TaskAttribute::kLoudness), Split::kTrain, rng);
    CHECK_THROWS_AS(render_prompt(tmpl, m), ContractError);
  }

  SUBCASE("resolve_target on description regimes") {
    auto m = sim.sample_scene_params(TaskType::independent(TaskAttribute::kGender), 10);
    const auto& tmpl =
        bank.sample(TaskType::independent(TaskAttribute::kGender), Split::kTrain, rng);
    CHECK(resolve_target(render_prompt(tmpl, m), m) == RefSelector::kTarget);
  }
}

TEST_CASE("test-split phrasings never appear in a training epoch") {
  auto sim = make_sim();
  auto bank = PromptBank::built_in(13);
  Rng rng(21);

  std::set<std::string> train_texts, test_texts;
  for (const TaskType& task : all_task_types()) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      auto m = sim.sample_scene_params(task, 1000 + seed);
      train_texts.insert(render_prompt(bank.sample(task, Split::kTrain, rng), m).text);
      test_texts.insert(render_prompt(bank.sample(task, Split::kTest, rng), m).text);
    }
  }
  for (const auto& text : test_texts) CHECK(train_texts.count(text) == 0);
}

TEST_CASE("bank word list covers labels and alphabets") {
  auto words = bank_word_list(PromptBank::built_in(1));
  const std::set<std::string> set(words.begin(), words.end());
  for (const char* w : {"louder", "quieter", "near", "far", "alpha", "beta", "low", "high",
                        "extract", "remove", "ka", "blim"})
    CHECK(set.count(w) == 1);
}
