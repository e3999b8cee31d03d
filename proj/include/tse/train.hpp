#pragma once

// Optimizer, warmup schedule, the accumulating training loop with gradient
// clipping and resumable checkpoints, and the per-task evaluation harness.

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "tse/checkpoint.hpp"
#include "tse/config.hpp"
#include "tse/model.hpp"
#include "tse/objective.hpp"
#include "tse/parallel.hpp"
#include "tse/prompt_bank.hpp"

namespace tse {

// Linear 0 -> lr over warmup_steps, then constant.
inline double lr_at_step(int step, double lr, int warmup_steps) {
  if (step < 0) throw ContractError("lr_at_step: negative step");
  if (warmup_steps <= 0 || step >= warmup_steps) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class S>
class AdamW {
 public:
  AdamW(NamedParams<S> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<S>::zeros(p.shape()));
      v_.push_back(Tensor<S>::zeros(p.shape()));
    }
  }

  double global_grad_norm() const {
    double acc = 0.0;
    for (const auto& [name, p] : params_) {
      if (!p.has_grad()) continue;
      for (S g : p.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
  }

  // Scales every gradient by max_norm / norm when the global norm exceeds
  // max_norm. Returns the pre-clip norm.
  double clip_global_norm(double max_norm) {
    const double norm = global_grad_norm();
    if (!std::isfinite(norm) || norm <= max_norm) return norm;
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& [name, p] : params_) {
      if (!p.has_grad()) continue;
      S* g = p.grad_slot();
      const std::int64_t n = p.size();
      for (std::int64_t i = 0; i < n; ++i) g[i] *= factor;
    }
    return norm;
  }

  // Decoupled weight-decay Adam with bias correction. Steps with any
  // non-finite gradient are skipped (with a warning) and the gradients
  // cleared so they cannot poison later steps.
  bool step(double lr) {
    for (const auto& [name, p] : params_) {
      if (!p.has_grad()) continue;
      for (S g : p.grad())
        if (!std::isfinite(static_cast<double>(g))) {
          std::cerr << "[tse] warning: non-finite gradient in '" << name
                    << "'; skipping the update\n";
          zero_grad();
          return false;
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i].second;
      S* m = m_[i].data();
      S* v = v_[i].data();
      S* w = p.data();
      const S* g = p.has_grad() ? p.grad().data() : nullptr;
      const std::int64_t n = p.size();
      for (std::int64_t j = 0; j < n; ++j) {
        const double gj = g ? static_cast<double>(g[j]) : 0.0;
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<S>(mj);
        v[j] = static_cast<S>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(w[j]);
        w[j] = static_cast<S>(static_cast<double>(w[j]) - lr * update);
      }
    }
    return true;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  NamedParams<S> moments() const {
    NamedParams<S> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back(params_[i].first + ".adam_m", m_[i]);
      out.emplace_back(params_[i].first + ".adam_v", v_[i]);
    }
    return out;
  }

  void load_moments(const Checkpoint<S>& ckpt) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Tensor<S>* m = ckpt.find(params_[i].first + ".adam_m");
      const Tensor<S>* v = ckpt.find(params_[i].first + ".adam_v");
      if (!m || !v)
        throw DataError("checkpoint lacks optimizer state for " + params_[i].first);
      if (m->size() != m_[i].size() || v->size() != v_[i].size())
        throw DimensionError("optimizer state shape mismatch for " + params_[i].first);
      m_[i].values() = m->values();
      v_[i].values() = v->values();
    }
  }

 private:
  NamedParams<S> params_;
  AdamWConfig cfg_;
  std::vector<Tensor<S>> m_, v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Deterministic sample stream
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kTrainStream = 0x7A;
inline constexpr std::uint64_t kValStream = 0x7B;
inline constexpr std::uint64_t kEvalStream = 0xE7;

struct TrainSample {
  SceneManifest manifest;
  SceneAudio audio;
  CueConfig cue = CueConfig::kTextOnly;
  std::optional<CuePrompt> prompt;
};

// Pure function of (config, stream, index): task and cue pick, scene seed.
struct DrawSpec {
  TaskType task;
  CueConfig cue;
  std::uint64_t scene_seed = 0;
};

inline DrawSpec draw_for_index(const RunConfig& cfg, std::uint64_t stream, std::uint64_t index) {
  Rng rng(derive_seed(cfg.seed, {stream, index}));
  DrawSpec d;
  d.task = cfg.tasks[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cfg.tasks.size())))];
  const auto usable = cfg.cues_for_task(d.task);
  if (usable.empty())
    throw ConfigError("no usable cue configuration for task " + task_to_config_name(d.task));
  d.cue = usable[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(usable.size())))];
  d.scene_seed = rng.next_u64();
  return d;
}

inline TrainSample make_sample(const SceneSimulator& sim, const PromptBank& bank,
                               const RunConfig& cfg, std::uint64_t stream, std::uint64_t index,
                               Split split, double snippet_fraction) {
  const DrawSpec d = draw_for_index(cfg, stream, index);
  TrainSample s;
  s.cue = d.cue;
  s.manifest = sim.sample_scene_params(d.task, d.scene_seed);
  s.audio = sim.mix_scene(s.manifest);
  const bool needs_prompt = d.cue == CueConfig::kTextOnly || d.cue == CueConfig::kAudioText;
  if (needs_prompt) {
    Rng trng(derive_seed(d.scene_seed, {0x9}));
    const auto& tmpl = bank.sample(d.task, split, trng);
    s.prompt = render_prompt(tmpl, s.manifest, snippet_fraction);
    // data-pipeline assertion: removal prompts pair with removal scenes, and
    // the training reference is the requested one
    resolve_target(*s.prompt, s.manifest);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass for one sample
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> forward_estimate(const TseModel<S>& model, const TrainSample& sample, bool training,
                           Rng& dropout_rng) {
  std::optional<CueEmbedding<S>> audio_cue, text_cue;
  const bool wants_audio = sample.cue == CueConfig::kAudioOnly ||
                           sample.cue == CueConfig::kAudioText ||
                           sample.cue == CueConfig::kAudioOneHot;
  const bool wants_text = sample.cue == CueConfig::kTextOnly ||
                          sample.cue == CueConfig::kAudioText;
  const bool wants_onehot = sample.cue == CueConfig::kOneHot ||
                            sample.cue == CueConfig::kAudioOneHot;
  if (wants_audio)
    audio_cue = model.encode_audio_cue(TseModel<S>::to_tensor(sample.audio.enrollment));
  if (wants_text) {
    if (!sample.prompt) throw ContractError("sample lacks the prompt its cue config needs");
    text_cue = model.encode_text_cue(sample.prompt->text, dropout_rng, training);
  }
  if (wants_onehot) {
    const std::string key = to_string(sample.manifest.task_attribute);
    text_cue = model.encode_one_hot_cue(sample.manifest.task_attribute,
                                        sample.manifest.target.labels.at(key));
  }
  Tensor<S> mixture = TseModel<S>::to_tensor(sample.audio.mixture);
  return model.extract(mixture, audio_cue ? &*audio_cue : nullptr,
                       text_cue ? &*text_cue : nullptr);
}

// ---------------------------------------------------------------------------
// Prefetching scene workers
// ---------------------------------------------------------------------------

// Renders samples for sequential indices on background threads. Samples are
// pure functions of their index, so worker count never changes results.
class ScenePrefetcher {
 public:
  ScenePrefetcher(const SceneSimulator& sim, const PromptBank& bank, const RunConfig& cfg,
                  std::uint64_t stream, std::uint64_t begin, std::uint64_t end, int workers,
                  int depth = 8)
      : sim_(sim), bank_(bank), cfg_(cfg), stream_(stream), next_(begin), consumer_(begin),
        end_(end), depth_(depth) {
    for (int w = 0; w < std::max(0, workers); ++w)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~ScenePrefetcher() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  // Must be called with strictly increasing indices.
  TrainSample take(std::uint64_t index) {
    if (workers_.empty())
      return make_sample(sim_, bank_, cfg_, stream_, index, Split::kTrain,
                         cfg_.snippet_fraction);
    std::unique_lock<std::mutex> lock(mutex_);
    consumer_ = index;
    cv_.notify_all();
    ready_cv_.wait(lock, [&] { return done_.count(index) || failure_; });
    if (failure_) std::rethrow_exception(failure_);
    TrainSample s = std::move(done_.at(index));
    done_.erase(index);
    cv_.notify_all();
    return s;
  }

 private:
  void worker_loop() {
    InlineParallelGuard serial_ops;
    for (;;) {
      std::uint64_t index;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] {
          return stop_ || (next_ < end_ && next_ < consumer_ + static_cast<std::uint64_t>(depth_));
        });
        if (stop_) return;
        index = next_++;
      }
      try {
        TrainSample s =
            make_sample(sim_, bank_, cfg_, stream_, index, Split::kTrain, cfg_.snippet_fraction);
        std::lock_guard<std::mutex> lock(mutex_);
        done_.emplace(index, std::move(s));
        ready_cv_.notify_all();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mutex_);
        failure_ = std::current_exception();
        ready_cv_.notify_all();
        return;
      }
    }
  }

  const SceneSimulator& sim_;
  const PromptBank& bank_;
  const RunConfig& cfg_;
  std::uint64_t stream_;
  std::mutex mutex_;
  std::condition_variable cv_, ready_cv_;
  std::map<std::uint64_t, TrainSample> done_;
  std::vector<std::thread> workers_;
  std::uint64_t next_, consumer_, end_;
  int depth_;
  bool stop_ = false;
  std::exception_ptr failure_;
};

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string task;
  std::string cue;  // cue configuration, "unprocessed", or "oracle"
  double mean_si_sdr = 0.0;
  double mean_si_sdri = 0.0;
  double selector_accuracy = 0.0;  // fraction closer to the requested reference
  int scenes = 0;
  bool supported = true;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& task, const std::string& cue) const {
    for (const auto& r : rows)
      if (r.task == task && r.cue == cue) return &r;
    return nullptr;
  }

  std::string to_json() const;
  std::string to_table() const;
};

struct EvalOptions {
  int scenes = 200;
  Split split = Split::kTest;
  std::uint64_t stream = kEvalStream;
  std::vector<double> snippet_fractions = {0.5, 0.8, 1.0};
  bool include_unprocessed = true;
  bool include_oracle = true;
  std::string per_scene_jsonl;  // empty = skip
  int workers = 1;
};

namespace detail {

struct SceneMetrics {
  double si_sdr = 0.0;
  double si_sdri = 0.0;
  bool closer = false;
  bool supported = true;
};

template <class S>
SceneMetrics score_estimate(const std::vector<float>& estimate, const SceneAudio& audio) {
  SceneMetrics m;
  m.si_sdr = si_sdr(estimate, audio.target_ref.samples);
  m.si_sdri = m.si_sdr - si_sdr(audio.mixture.samples, audio.target_ref.samples);
  m.closer = m.si_sdr > si_sdr(estimate, audio.interferer_ref.samples);
  return m;
}

// Ideal bounded mask in the model's own filterbank: the per-coefficient
// least-squares mask clamp(ref * mix / mix^2, 0, 1) from the reference
// features. Upper-bounds what any [0,1] mask through this codec can reach.
template <class S>
std::vector<float> oracle_estimate(const TseModel<S>& model, const SceneAudio& audio) {
  Tensor<S> mix = TseModel<S>::to_tensor(audio.mixture);
  Tensor<S> ref = TseModel<S>::to_tensor(audio.target_ref);
  Tensor<S> fm = model.encode_mixture(mix);
  Tensor<S> fr = model.encode_mixture(ref);
  Tensor<S> mask(fm.shape());
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    const double m = static_cast<double>(fm.data()[i]);
    const double r = static_cast<double>(fr.data()[i]);
    mask.data()[i] = static_cast<S>(std::clamp(r * m / (m * m + 1e-8), 0.0, 1.0));
  }
  Tensor<S> est = model.decode_features(apply_mask(fm, mask), mix.dim(0));
  std::vector<float> out(static_cast<std::size_t>(est.size()));
  for (std::int64_t i = 0; i < est.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<float>(est.data()[i]);
  return out;
}

}  // namespace detail

// Per task x cue-configuration means over held-out scenes with unseen
// prompts. Snippet tasks evaluate once per snippet fraction.
template <class S>
EvalReport evaluate(const TseModel<S>& model, const SceneSimulator& sim, const PromptBank& bank,
                    const RunConfig& cfg, const std::vector<TaskType>& tasks,
                    const std::vector<CueConfig>& cue_rows, const EvalOptions& opt) {
  if (opt.scenes < 1) throw ContractError("evaluate: empty test set");
  std::ostringstream jsonl;
  EvalReport report;

  for (const TaskType& task : tasks) {
    const bool is_snippet = task.regime != PromptRegime::kTaskSelector &&
                            task.attribute == TaskAttribute::kSnippet;
    const std::vector<double> fractions =
        is_snippet ? opt.snippet_fractions : std::vector<double>{1.0};
    for (double fraction : fractions) {
      std::string task_name = task_to_config_name(task);
      if (is_snippet)
        task_name += "@" + std::to_string(static_cast<int>(std::lround(fraction * 100)));

      struct RowSpec {
        std::string name;
        std::optional<CueConfig> cue;
      };
      std::vector<RowSpec> row_specs;
      if (opt.include_unprocessed) row_specs.push_back({"unprocessed", std::nullopt});
      if (opt.include_oracle) row_specs.push_back({"oracle", std::nullopt});
      for (CueConfig c : cue_rows) row_specs.push_back({to_string(c), c});

      // metrics[row][scene]; filled scene-parallel, reduced sequentially
      std::vector<std::vector<detail::SceneMetrics>> metrics(
          row_specs.size(), std::vector<detail::SceneMetrics>(static_cast<std::size_t>(opt.scenes)));

      std::atomic<int> next_scene{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      auto run_scene = [&](int i) {
        const std::uint64_t scene_seed =
            derive_seed(cfg.seed, {opt.stream, splitmix64(std::hash<std::string>{}(task_name)),
                                   static_cast<std::uint64_t>(i)});
        SceneManifest manifest = sim.sample_scene_params(task, scene_seed);
        SceneAudio audio = sim.mix_scene(manifest);
        for (std::size_t r = 0; r < row_specs.size(); ++r) {
          auto& cell = metrics[r][static_cast<std::size_t>(i)];
          if (!row_specs[r].cue) {
            const auto& estimate = row_specs[r].name == "oracle"
                                       ? detail::oracle_estimate(model, audio)
                                       : audio.mixture.samples;
            cell = detail::score_estimate<S>(estimate, audio);
            continue;
          }
          TrainSample sample;
          sample.manifest = manifest;
          sample.cue = *row_specs[r].cue;
          const bool needs_prompt =
              sample.cue == CueConfig::kTextOnly || sample.cue == CueConfig::kAudioText;
          try {
            if (needs_prompt) {
              Rng trng(derive_seed(scene_seed, {0x9}));
              sample.prompt = render_prompt(bank.sample(task, opt.split, trng), manifest, fraction);
              resolve_target(*sample.prompt, manifest);
            }
            if ((sample.cue == CueConfig::kOneHot || sample.cue == CueConfig::kAudioOneHot) &&
                manifest.task_attribute == TaskAttribute::kSnippet)
              throw UnsupportedCueError("transcription snippets have no one-hot representation");
            sample.audio = audio;
            Rng drng(0);
            Tensor<S> est = forward_estimate(model, sample, false, drng);
            std::vector<float> est_f(static_cast<std::size_t>(est.size()));
            for (std::int64_t j = 0; j < est.size(); ++j)
              est_f[static_cast<std::size_t>(j)] = static_cast<float>(est.data()[j]);
            cell = detail::score_estimate<S>(est_f, audio);
          } catch (const UnsupportedCueError&) {
            cell.supported = false;
          }
        }
      };

      if (opt.workers > 1) {
        std::vector<std::thread> pool;
        for (int w = 0; w < opt.workers; ++w)
          pool.emplace_back([&] {
            InlineParallelGuard serial_ops;
            for (;;) {
              const int i = next_scene.fetch_add(1);
              if (i >= opt.scenes) return;
              try {
                run_scene(i);
              } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
              }
            }
          });
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
      } else {
        for (int i = 0; i < opt.scenes; ++i) run_scene(i);
      }

      for (std::size_t r = 0; r < row_specs.size(); ++r) {
        EvalRow row;
        row.task = task_name;
        row.cue = row_specs[r].name;
        int supported = 0, closer = 0;
        double sdr = 0.0, sdri = 0.0;
        for (int i = 0; i < opt.scenes; ++i) {
          const auto& cell = metrics[r][static_cast<std::size_t>(i)];
          if (!cell.supported) continue;
          ++supported;
          sdr += cell.si_sdr;
          sdri += cell.si_sdri;
          closer += cell.closer ? 1 : 0;
          if (!opt.per_scene_jsonl.empty()) {
            jsonl << "{\"task\":\"" << task_name << "\",\"cue\":\"" << row.cue
                  << "\",\"scene\":" << i << ",\"si_sdr_db\":" << cell.si_sdr
                  << ",\"si_sdri_db\":" << cell.si_sdri
                  << ",\"closer_to_requested\":" << (cell.closer ? "true" : "false") << "}\n";
          }
        }
        row.scenes = supported;
        row.supported = supported > 0;
        if (supported > 0) {
          row.mean_si_sdr = sdr / supported;
          row.mean_si_sdri = sdri / supported;
          row.selector_accuracy = static_cast<double>(closer) / supported;
        }
        report.rows.push_back(std::move(row));
      }
    }
  }

  if (!opt.per_scene_jsonl.empty()) {
    std::ofstream out(opt.per_scene_jsonl, std::ios::trunc);
    if (!out) throw IoError("cannot write per-scene metrics: " + opt.per_scene_jsonl);
    out << jsonl.str();
  }
  return report;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> loss_curve;       // per optimizer step
  std::vector<double> grad_norms;       // pre-clip
  std::vector<std::pair<int, double>> val_si_sdri;  // (step, mean)
  std::string final_checkpoint;
};

template <class S>
class Trainer {
 public:
  Trainer(RunConfig cfg, std::string out_dir)
      : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)) {
    cfg_.validate();
    std::filesystem::create_directories(out_dir_);
    std::shared_ptr<const Corpus> corpus;
    if (cfg_.corpus_manifest.empty())
      corpus = std::make_shared<SyntheticCorpus>(cfg_.corpus_seed, cfg_.corpus_speakers);
    else
      corpus = ingest_corpus(cfg_.corpus_manifest);
    sim_ = std::make_unique<SceneSimulator>(cfg_.scene, corpus);
    bank_ = PromptBank::built_in(cfg_.bank_seed);
    Rng init_rng(derive_seed(cfg_.seed, {0x0D}));
    model_ = TseModel<S>(init_rng, Vocabulary::build(bank_word_list(bank_)), cfg_.model);
    opt_ = std::make_unique<AdamW<S>>(model_.trainable_parameters(),
                                      AdamWConfig{cfg_.adam_beta1, cfg_.adam_beta2,
                                                  cfg_.adam_eps, cfg_.weight_decay});
    for (const auto& w : model_.text_encoder().warnings())
      std::cerr << "[tse] config warning: " << w << "\n";
  }

  const RunConfig& run_config() const { return cfg_; }
  const TseModel<S>& model() const { return model_; }
  const SceneSimulator& simulator() const { return *sim_; }
  const PromptBank& bank() const { return bank_; }
  AdamW<S>& optimizer() { return *opt_; }

  Checkpoint<S> make_checkpoint(int step) const {
    Checkpoint<S> ckpt;
    ckpt.step = static_cast<std::uint64_t>(step);
    ckpt.config_hash = config_hash(cfg_);
    ckpt.config_text = config_to_text(cfg_);
    ckpt.tensors = model_.all_parameters();
    for (auto& p : opt_->moments()) ckpt.tensors.push_back(p);
    return ckpt;
  }

  void restore(const Checkpoint<S>& ckpt) {
    if (ckpt.config_hash != config_hash(cfg_))
      throw ContractError("checkpoint was produced by a different configuration");
    for (auto& [name, param] : model_.all_parameters()) {
      const Tensor<S>* stored = ckpt.find(name);
      if (!stored) throw DataError("checkpoint lacks tensor " + name);
      if (stored->shape() != param.shape())
        throw DimensionError("checkpoint shape mismatch for " + name);
      param.values() = stored->values();  // handles share the model's storage
    }
    opt_->load_moments(ckpt);
    opt_->set_step_count(static_cast<std::int64_t>(ckpt.step));
    start_step_ = static_cast<int>(ckpt.step);
  }

  void resume_from(const std::string& path) { restore(Checkpoint<S>::load(path)); }

  TrainResult run(std::ostream& log) {
    if (cfg_.threads > 0) set_num_threads(cfg_.threads);
    TrainResult result;
    const std::uint64_t samples_per_step =
        static_cast<std::uint64_t>(cfg_.accumulation_factor) * cfg_.batch;
    ScenePrefetcher prefetch(*sim_, bank_, cfg_, kTrainStream,
                             static_cast<std::uint64_t>(start_step_) * samples_per_step,
                             static_cast<std::uint64_t>(cfg_.steps) * samples_per_step,
                             cfg_.scene_workers);
    const S loss_scale = S(1) / static_cast<S>(cfg_.effective_batch());

    for (int step = start_step_; step < cfg_.steps; ++step) {
      double step_loss = 0.0;
      for (int micro = 0; micro < cfg_.accumulation_factor; ++micro) {
        for (int b = 0; b < cfg_.batch; ++b) {
          const std::uint64_t index =
              static_cast<std::uint64_t>(step) * samples_per_step +
              static_cast<std::uint64_t>(micro) * cfg_.batch + static_cast<std::uint64_t>(b);
          TrainSample sample = prefetch.take(index);
          Rng dropout_rng(derive_seed(cfg_.seed, {0xD0, index}));
          Tape<S> tape;
          Tensor<S> estimate = forward_estimate(model_, sample, true, dropout_rng);
          Tensor<S> reference = TseModel<S>::to_tensor(sample.audio.target_ref);
          Tensor<S> loss = scale(si_sdr_loss(estimate, reference), loss_scale);
          const double loss_value = static_cast<double>(loss.value());
          if (!std::isfinite(loss_value)) {
            dump_diagnostics(step, index, sample, loss_value);
            throw Error("non-finite loss at step " + std::to_string(step) +
                        "; diagnostic dump written to " + out_dir_);
          }
          tape.backward(loss);
          step_loss += loss_value;
        }
      }
      const double lr = lr_at_step(step, cfg_.lr, cfg_.warmup_steps);
      const double norm = opt_->clip_global_norm(cfg_.grad_clip_norm);
      opt_->step(lr);
      opt_->zero_grad();
      result.loss_curve.push_back(step_loss);
      result.grad_norms.push_back(norm);

      if ((step + 1) % 100 == 0 || step + 1 == cfg_.steps)
        log << "step " << (step + 1) << "/" << cfg_.steps << "  loss " << step_loss
            << "  lr " << lr << "  grad_norm " << norm << "\n" << std::flush;
      if (cfg_.val_interval > 0 && (step + 1) % cfg_.val_interval == 0) {
        const double val = validate(step + 1);
        result.val_si_sdri.emplace_back(step + 1, val);
        log << "step " << (step + 1) << "  val si-sdri " << val << " dB\n" << std::flush;
      }
      if (cfg_.checkpoint_interval > 0 && (step + 1) % cfg_.checkpoint_interval == 0 &&
          step + 1 < cfg_.steps)
        make_checkpoint(step + 1).save(checkpoint_path(step + 1));
    }

    result.final_checkpoint = checkpoint_path(cfg_.steps);
    make_checkpoint(cfg_.steps).save(result.final_checkpoint);
    write_log_csv(result);
    return result;
  }

  // Mean SI-SDRi over validation-split prompts and scenes.
  double validate(int step) const {
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < cfg_.val_scenes; ++i) {
      const std::uint64_t index =
          derive_seed(cfg_.seed, {kValStream, static_cast<std::uint64_t>(step)}) + i;
      TrainSample sample = make_sample(*sim_, bank_, cfg_, kValStream, index, Split::kVal,
                                       cfg_.snippet_fraction);
      Rng drng(0);
      Tensor<S> est = forward_estimate(model_, sample, false, drng);
      std::vector<float> est_f(static_cast<std::size_t>(est.size()));
      for (std::int64_t j = 0; j < est.size(); ++j)
        est_f[static_cast<std::size_t>(j)] = static_cast<float>(est.data()[j]);
      total += si_sdr(est_f, sample.audio.target_ref.samples) -
               si_sdr(sample.audio.mixture.samples, sample.audio.target_ref.samples);
      ++count;
    }
    return total / std::max(1, count);
  }

  std::string checkpoint_path(int step) const {
    return (std::filesystem::path(out_dir_) / ("checkpoint_" + std::to_string(step) + ".tse"))
        .string();
  }

 private:
  void dump_diagnostics(int step, std::uint64_t index, const TrainSample& sample,
                        double loss_value) const {
    std::ofstream out(std::filesystem::path(out_dir_) / "diagnostic_dump.json",
                      std::ios::trunc);
    out << "{\n  \"step\": " << step << ",\n  \"sample_index\": " << index
        << ",\n  \"loss\": \"" << loss_value << "\",\n  \"cue\": \""
        << to_string(sample.cue) << "\",\n  \"prompt\": \""
        << (sample.prompt ? sample.prompt->text : "") << "\",\n  \"manifest\": "
        << manifest_to_json(sample.manifest) << "\n}\n";
  }

  void write_log_csv(const TrainResult& result) const {
    std::ofstream out(std::filesystem::path(out_dir_) / "train_log.csv", std::ios::trunc);
    out << "step,loss,grad_norm\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
      out << (start_step_ + static_cast<int>(i) + 1) << "," << result.loss_curve[i] << ","
          << result.grad_norms[i] << "\n";
  }

  RunConfig cfg_;
  std::string out_dir_;
  std::unique_ptr<SceneSimulator> sim_;
  PromptBank bank_;
  TseModel<S> model_;
  std::unique_ptr<AdamW<S>> opt_;
  int start_step_ = 0;
};

}  // namespace tse
