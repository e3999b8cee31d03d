// Command-line surface: scene simulation, training, evaluation, one-shot
// extraction on user files, and the gradient-check oracle suite.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "tse/gradcheck_suite.hpp"
#include "tse/train.hpp"

namespace fs = std::filesystem;

namespace {

tse::RunConfig load_run_config(const std::string& config_path, std::uint64_t seed_override,
                               bool has_seed) {
  tse::RunConfig cfg;
  if (!config_path.empty()) cfg = tse::parse_config_file(config_path);
  if (has_seed) cfg.seed = seed_override;
  cfg.model.normalize();
  return cfg;
}

std::shared_ptr<const tse::Corpus> make_corpus(const tse::RunConfig& cfg) {
  if (cfg.corpus_manifest.empty())
    return std::make_shared<tse::SyntheticCorpus>(cfg.corpus_seed, cfg.corpus_speakers);
  return tse::ingest_corpus(cfg.corpus_manifest);
}

int run_simulate(const tse::RunConfig& cfg, const std::string& task_name, int count,
                 const std::string& out_dir, bool jsonl) {
  tse::SceneSimulator sim(cfg.scene, make_corpus(cfg));
  const tse::TaskType task = tse::task_from_config_name(task_name);
  fs::create_directories(out_dir);
  std::ofstream manifest_stream;
  if (jsonl) {
    manifest_stream.open(fs::path(out_dir) / "manifests.jsonl", std::ios::trunc);
    if (!manifest_stream) throw tse::IoError("cannot write manifests.jsonl");
  }
  for (int i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = tse::derive_seed(cfg.seed, {0x51u, static_cast<std::uint64_t>(i)});
    auto manifest = sim.sample_scene_params(task, scene_seed);
    auto audio = sim.mix_scene(manifest);
    const std::string stem = "scene_" + std::to_string(i);
    if (jsonl) {
      nlohmann::json j = nlohmann::json::parse(tse::manifest_to_json(manifest));
      manifest_stream << j.dump() << "\n";
    } else {
      std::ofstream mf(fs::path(out_dir) / (stem + ".json"), std::ios::trunc);
      mf << tse::manifest_to_json(manifest) << "\n";
    }
    tse::write_wav((fs::path(out_dir) / (stem + "_mixture.wav")).string(), audio.mixture);
    tse::write_wav((fs::path(out_dir) / (stem + "_target.wav")).string(), audio.target_ref);
    tse::write_wav((fs::path(out_dir) / (stem + "_interferer.wav")).string(),
                   audio.interferer_ref);
    tse::write_wav((fs::path(out_dir) / (stem + "_enrollment.wav")).string(), audio.enrollment);
  }
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int run_train(const tse::RunConfig& cfg, const std::string& out_dir,
              const std::string& resume) {
  tse::Trainer<float> trainer(cfg, out_dir);
  if (!resume.empty()) trainer.resume_from(resume);
  auto result = trainer.run(std::cout);
  std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

// Rebuilds the model a checkpoint was trained with from its embedded config.
tse::Trainer<float> trainer_from_checkpoint(const std::string& ckpt_path,
                                            const std::string& scratch_dir) {
  auto ckpt = tse::Checkpoint<float>::load(ckpt_path);
  tse::RunConfig cfg = tse::parse_config_text(ckpt.config_text);
  tse::Trainer<float> trainer(cfg, scratch_dir);
  trainer.restore(ckpt);
  return trainer;
}

int run_evaluate(const std::string& ckpt_path, const std::string& cue_filter, int scenes,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto trainer = trainer_from_checkpoint(ckpt_path, out_dir);
  const tse::RunConfig& cfg = trainer.run_config();

  std::vector<tse::CueConfig> cue_rows = cfg.cues;
  if (!cue_filter.empty()) cue_rows = {tse::cue_config_from_string(cue_filter)};
  tse::EvalOptions opt;
  opt.scenes = scenes > 0 ? scenes : cfg.eval_scenes;
  opt.workers = std::max(1, cfg.scene_workers);
  opt.per_scene_jsonl = (fs::path(out_dir) / "scene_metrics.jsonl").string();

  auto report =
      tse::evaluate(trainer.model(), trainer.simulator(), trainer.bank(), cfg, cfg.tasks,
                    cue_rows, opt);
  std::ofstream json_out(fs::path(out_dir) / "eval_report.json", std::ios::trunc);
  json_out << report.to_json() << "\n";
  std::cout << report.to_table();
  std::cout << "report written to " << out_dir << "\n";
  return 0;
}

int run_extract(const std::string& ckpt_path, const std::string& mixture_path,
                const std::string& enroll_path, const std::string& text,
                const std::string& out_path) {
  if (enroll_path.empty() && text.empty())
    throw tse::NoCueError("extract needs --enroll and/or --text");
  const std::string scratch = (fs::temp_directory_path() / "tse_extract").string();
  auto trainer = trainer_from_checkpoint(ckpt_path, scratch);
  const auto& model = trainer.model();

  tse::AudioBuffer mixture = tse::read_wav(mixture_path);
  if (mixture.sample_rate != model.config().codec.sample_rate)
    mixture = tse::resample(mixture, model.config().codec.sample_rate);
  std::optional<tse::AudioBuffer> enrollment;
  if (!enroll_path.empty()) {
    enrollment = tse::read_wav(enroll_path);
    if (enrollment->sample_rate != model.config().codec.sample_rate)
      enrollment = tse::resample(*enrollment, model.config().codec.sample_rate);
  }
  auto out = model.extract_waveform(mixture, enrollment ? &*enrollment : nullptr,
                                    text.empty() ? nullptr : &text);
  tse::peak_normalize(out);
  tse::write_wav(out_path, out);
  std::cout << "wrote " << out_path << " (" << out.length() << " samples)\n";
  return 0;
}

int run_gradcheck() {
  const auto results = tse::run_gradcheck_suite();
  bool all_ok = true;
  for (const auto& c : results) {
    all_ok = all_ok && c.passed();
    std::cout << std::left << std::setw(28) << c.name << std::scientific
              << std::setprecision(3) << c.max_rel_error << (c.passed() ? "  ok" : "  FAIL")
              << "\n";
  }
  std::cout << (all_ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cue-conditioned target speaker extraction (desk scale)"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", task_name = "loudness", resume, checkpoint;
  std::string mixture_path, enroll_path, text, out_path = "extracted.wav", cue_filter;
  std::uint64_t seed = 0;
  bool has_seed = false, jsonl = false;
  int count = 10, scenes = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
      has_seed = true;
    });
    cmd->add_option("--out-dir", out_dir, "output directory");
  };

  auto* sim_cmd = app.add_subcommand("simulate", "render scenes and manifests");
  add_common(sim_cmd);
  sim_cmd->add_option("--task", task_name, "task name (gender, loudness, selector_remove, ...)");
  sim_cmd->add_option("--count", count, "number of scenes");
  sim_cmd->add_flag("--jsonl", jsonl, "single JSON-lines manifest file");

  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  add_common(train_cmd);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("evaluate", "per-task evaluation report");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--cue", cue_filter, "restrict to one cue configuration");
  eval_cmd->add_option("--count", scenes, "scenes per task");

  auto* extract_cmd = app.add_subcommand("extract", "extract from a wav file");
  extract_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  extract_cmd->add_option("--mixture", mixture_path, "input mixture wav")->required();
  extract_cmd->add_option("--enroll", enroll_path, "enrollment wav (audio cue)");
  extract_cmd->add_option("--text", text, "text prompt (text cue)");
  extract_cmd->add_option("--out", out_path, "output wav");

  app.add_subcommand("gradcheck", "finite-difference oracle over every op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;  // bad flags -> usage error
  }

  try {
    if (sim_cmd->parsed())
      return run_simulate(load_run_config(config_path, seed, has_seed), task_name, count,
                          out_dir, jsonl);
    if (train_cmd->parsed())
      return run_train(load_run_config(config_path, seed, has_seed), out_dir, resume);
    if (eval_cmd->parsed()) return run_evaluate(checkpoint, cue_filter, scenes, out_dir);
    if (extract_cmd->parsed())
      return run_extract(checkpoint, mixture_path, enroll_path, text, out_path);
    return run_gradcheck();
  } catch (const tse::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
