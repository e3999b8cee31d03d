#include "tse/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace tse {

std::string to_string(CueConfig c) {
  switch (c) {
    case CueConfig::kAudioOnly: return "audio";
    case CueConfig::kTextOnly: return "text";
    case CueConfig::kOneHot: return "one_hot";
    case CueConfig::kAudioText: return "audio_text";
    case CueConfig::kAudioOneHot: return "audio_one_hot";
  }
  throw ContractError("bad CueConfig");
}

CueConfig cue_config_from_string(const std::string& s) {
  if (s == "audio") return CueConfig::kAudioOnly;
  if (s == "text") return CueConfig::kTextOnly;
  if (s == "one_hot" || s == "onehot") return CueConfig::kOneHot;
  if (s == "audio_text" || s == "both") return CueConfig::kAudioText;
  if (s == "audio_one_hot" || s == "audio_onehot") return CueConfig::kAudioOneHot;
  throw ConfigError("unknown cue configuration: " + s);
}

std::string task_to_config_name(const TaskType& t) {
  switch (t.regime) {
    case PromptRegime::kIndependentCue: return to_string(t.attribute);
    case PromptRegime::kTaskSelector:
      return t.action == SelectorAction::kExtract ? "selector_extract" : "selector_remove";
    case PromptRegime::kComplement: return "complement_" + to_string(t.attribute);
  }
  throw ContractError("bad TaskType");
}

TaskType task_from_config_name(const std::string& name) {
  if (name == "selector_extract") return TaskType::selector(SelectorAction::kExtract);
  if (name == "selector_remove") return TaskType::selector(SelectorAction::kRemove);
  if (name.rfind("complement_", 0) == 0)
    return TaskType::complement(attribute_from_string(name.substr(11)));
  return TaskType::independent(attribute_from_string(name));
}

std::vector<CueConfig> RunConfig::cues_for_task(const TaskType& task) const {
  std::vector<CueConfig> out;
  for (CueConfig c : cues) {
    const bool has_audio = c == CueConfig::kAudioOnly || c == CueConfig::kAudioText ||
                           c == CueConfig::kAudioOneHot;
    const bool has_text = c == CueConfig::kTextOnly || c == CueConfig::kAudioText;
    const bool has_onehot = c == CueConfig::kOneHot || c == CueConfig::kAudioOneHot;
    switch (task.regime) {
      case PromptRegime::kTaskSelector:
        // the directive rides in the text; the voice to act on in the audio
        if (c == CueConfig::kAudioText) out.push_back(c);
        break;
      case PromptRegime::kComplement:
        if (has_audio && (has_text || has_onehot) &&
            !(has_onehot && task.attribute == TaskAttribute::kSnippet))
          out.push_back(c);
        break;
      case PromptRegime::kIndependentCue:
        if (has_onehot && task.attribute == TaskAttribute::kSnippet) break;
        out.push_back(c);
        break;
    }
  }
  return out;
}

void RunConfig::validate() const {
  model.codec.validate();
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (grad_clip_norm <= 0) throw ConfigError("grad_clip_norm must be positive");
  if (accumulation_factor < 1) throw ConfigError("accumulation_factor must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (tasks.empty()) throw ConfigError("at least one task required");
  if (cues.empty()) throw ConfigError("at least one cue configuration required");
  for (const auto& task : tasks)
    if (cues_for_task(task).empty())
      throw ConfigError("no usable cue configuration for task " + task_to_config_name(task));
  if (scene.sample_rate != model.codec.sample_rate)
    throw ConfigError("scene and codec sample rates differ");
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "sample_rate") {
        cfg.model.codec.sample_rate = std::stoi(value);
        cfg.scene.sample_rate = cfg.model.codec.sample_rate;
      } else if (key == "duration_s") cfg.scene.duration_s = std::stod(value);
      else if (key == "n_filters") cfg.model.codec.n_filters = std::stoi(value);
      else if (key == "filter_len") cfg.model.codec.filter_len = std::stoi(value);
      else if (key == "hop") cfg.model.codec.hop = std::stoi(value);
      else if (key == "embed_dim") cfg.model.embed_dim = std::stoi(value);
      else if (key == "text_width") cfg.model.text.width = std::stoi(value);
      else if (key == "text_heads") cfg.model.text.heads = std::stoi(value);
      else if (key == "text_blocks") cfg.model.text.blocks = std::stoi(value);
      else if (key == "text_max_len") cfg.model.text.max_len = std::stoi(value);
      else if (key == "text_avg_last_blocks") cfg.model.text.avg_last_blocks = std::stoi(value);
      else if (key == "lora_rank") cfg.model.text.lora_rank = std::stoi(value);
      else if (key == "lora_alpha") cfg.model.text.lora_alpha = std::stod(value);
      else if (key == "lora_dropout") cfg.model.text.lora_dropout = std::stod(value);
      else if (key == "audio_bottleneck") cfg.model.audio_cue.bottleneck = std::stoi(value);
      else if (key == "audio_hidden") cfg.model.audio_cue.hidden = std::stoi(value);
      else if (key == "audio_tcn_blocks") cfg.model.audio_cue.tcn_blocks = std::stoi(value);
      else if (key == "mask_bottleneck") cfg.model.masknet.bottleneck = std::stoi(value);
      else if (key == "mask_hidden") cfg.model.masknet.hidden = std::stoi(value);
      else if (key == "mask_stacks") cfg.model.masknet.stacks = std::stoi(value);
      else if (key == "mask_blocks") cfg.model.masknet.blocks_per_stack = std::stoi(value);
      else if (key == "max_image_order") cfg.scene.max_image_order = std::stoi(value);
      else if (key == "lr") cfg.lr = std::stod(value);
      else if (key == "warmup_steps") cfg.warmup_steps = std::stoi(value);
      else if (key == "grad_clip_norm") cfg.grad_clip_norm = std::stod(value);
      else if (key == "accumulation_factor") cfg.accumulation_factor = std::stoi(value);
      else if (key == "batch") cfg.batch = std::stoi(value);
      else if (key == "steps") cfg.steps = std::stoi(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "corpus_speakers") cfg.corpus_speakers = std::stoi(value);
      else if (key == "corpus_seed") cfg.corpus_seed = std::stoull(value);
      else if (key == "corpus_manifest") cfg.corpus_manifest = value;
      else if (key == "bank_seed") cfg.bank_seed = std::stoull(value);
      else if (key == "val_interval") cfg.val_interval = std::stoi(value);
      else if (key == "val_scenes") cfg.val_scenes = std::stoi(value);
      else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stoi(value);
      else if (key == "threads") cfg.threads = std::stoi(value);
      else if (key == "scene_workers") cfg.scene_workers = std::stoi(value);
      else if (key == "eval_scenes") cfg.eval_scenes = std::stoi(value);
      else if (key == "snippet_fraction") cfg.snippet_fraction = std::stod(value);
      else if (key == "tasks") {
        cfg.tasks.clear();
        for (const auto& name : split_list(value)) cfg.tasks.push_back(task_from_config_name(name));
      } else if (key == "cues") {
        cfg.cues.clear();
        for (const auto& name : split_list(value)) cfg.cues.push_back(cue_config_from_string(name));
      } else {
        throw ConfigError("unknown config key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(line_no) + ": bad value for " + key);
    } catch (const std::out_of_range&) {
      throw ConfigError("config line " + std::to_string(line_no) + ": value out of range for " + key);
    }
  }
  cfg.model.normalize();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "sample_rate = " << cfg.model.codec.sample_rate << "\n";
  out << "duration_s = " << cfg.scene.duration_s << "\n";
  out << "n_filters = " << cfg.model.codec.n_filters << "\n";
  out << "filter_len = " << cfg.model.codec.filter_len << "\n";
  out << "hop = " << cfg.model.codec.hop << "\n";
  out << "embed_dim = " << cfg.model.embed_dim << "\n";
  out << "text_width = " << cfg.model.text.width << "\n";
  out << "text_heads = " << cfg.model.text.heads << "\n";
  out << "text_blocks = " << cfg.model.text.blocks << "\n";
  out << "text_max_len = " << cfg.model.text.max_len << "\n";
  out << "text_avg_last_blocks = " << cfg.model.text.avg_last_blocks << "\n";
  out << "lora_rank = " << cfg.model.text.lora_rank << "\n";
  out << "lora_alpha = " << cfg.model.text.lora_alpha << "\n";
  out << "lora_dropout = " << cfg.model.text.lora_dropout << "\n";
  out << "audio_bottleneck = " << cfg.model.audio_cue.bottleneck << "\n";
  out << "audio_hidden = " << cfg.model.audio_cue.hidden << "\n";
  out << "audio_tcn_blocks = " << cfg.model.audio_cue.tcn_blocks << "\n";
  out << "mask_bottleneck = " << cfg.model.masknet.bottleneck << "\n";
  out << "mask_hidden = " << cfg.model.masknet.hidden << "\n";
  out << "mask_stacks = " << cfg.model.masknet.stacks << "\n";
  out << "mask_blocks = " << cfg.model.masknet.blocks_per_stack << "\n";
  out << "max_image_order = " << cfg.scene.max_image_order << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "warmup_steps = " << cfg.warmup_steps << "\n";
  out << "grad_clip_norm = " << cfg.grad_clip_norm << "\n";
  out << "accumulation_factor = " << cfg.accumulation_factor << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "weight_decay = " << cfg.weight_decay << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "corpus_speakers = " << cfg.corpus_speakers << "\n";
  out << "corpus_seed = " << cfg.corpus_seed << "\n";
  out << "corpus_manifest = " << cfg.corpus_manifest << "\n";
  out << "bank_seed = " << cfg.bank_seed << "\n";
  out << "val_interval = " << cfg.val_interval << "\n";
  out << "val_scenes = " << cfg.val_scenes << "\n";
  out << "checkpoint_interval = " << cfg.checkpoint_interval << "\n";
  out << "threads = " << cfg.threads << "\n";
  out << "scene_workers = " << cfg.scene_workers << "\n";
  out << "eval_scenes = " << cfg.eval_scenes << "\n";
  out << "snippet_fraction = " << cfg.snippet_fraction << "\n";
  out << "tasks = ";
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i)
    out << (i ? "," : "") << task_to_config_name(cfg.tasks[i]);
  out << "\n";
  out << "cues = ";
  for (std::size_t i = 0; i < cfg.cues.size(); ++i)
    out << (i ? "," : "") << to_string(cfg.cues[i]);
  out << "\n";
  return out.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = config_to_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tse
