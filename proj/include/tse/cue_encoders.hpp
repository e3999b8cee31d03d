#pragma once

// Cue embedding paths: a small LoRA-adapted causal transformer for text, a
// conv+TCN encoder with temporal averaging for enrollment audio, and a linear
// projection of one-hot attribute labels. All three emit vectors of the same
// dimension E.

#include <string>
#include <utility>
#include <vector>

#include "tse/codec.hpp"
#include "tse/errors.hpp"
#include "tse/task.hpp"
#include "tse/tcn.hpp"
#include "tse/tensor.hpp"
#include "tse/text.hpp"

namespace tse {

// ---------------------------------------------------------------------------
// Vocabulary / tokenizer
// ---------------------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPadId = 0;

  // Specials <pad>, <unk>, <s> occupy ids 0..2; words follow sorted.
  static Vocabulary build(std::vector<std::string> words);

  int size() const { return static_cast<int>(tokens_.size()); }
  int unknown_id() const { return 1; }
  int begin_id() const { return 2; }

  // Unknown words map to unknown_id().
  int id(const std::string& word) const;
  const std::string& token(int id) const;

  // Plain text, one token per line; the line number is the id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
};

// Whitespace/punctuation split to ids; deterministic; empty prompts rejected.
std::vector<int> tokenize(const std::string& prompt, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

template <class S>
struct LoraAdapter {
  Tensor<S> a;  // [rank x d_in], small random
  Tensor<S> b;  // [d_out x rank], zero so the adapter starts as identity
  int rank = 0;
  S alpha = S(0);
  double dropout_p = 0.0;

  LoraAdapter() = default;

  LoraAdapter(Rng& rng, int d_in, int d_out, int rank_, S alpha_, double dropout)
      : rank(rank_), alpha(alpha_), dropout_p(dropout) {
    if (rank_ < 1 || rank_ > std::min(d_in, d_out))
      throw ConfigError("lora rank must be in [1, min(d_in, d_out)]");
    a = init_fan_in<S>(rng, Shape{rank_, d_in}, d_in);
    b = Tensor<S>::zeros(Shape{d_out, rank_}, true);
  }
};

// base_out + (alpha/rank) * B (A dropout(x)); dropout only during training.
template <class S>
Tensor<S> lora_apply(const LoraAdapter<S>& adapter, const Tensor<S>& base_out,
                     const Tensor<S>& x, Rng& rng, bool training) {
  if (x.rank() != 2 || x.dim(1) != adapter.a.dim(1))
    throw DimensionError("lora_apply: input width does not match the adapter");
  if (base_out.dim(0) != x.dim(0) || base_out.dim(1) != adapter.b.dim(0))
    throw DimensionError("lora_apply: base output shape mismatch");
  Tensor<S> h = dropout(x, adapter.dropout_p, rng, training);
  Tensor<S> low = matmul(h, transpose(adapter.a));
  Tensor<S> delta = matmul(low, transpose(adapter.b));
  return add(base_out, scale(delta, adapter.alpha / static_cast<S>(adapter.rank)));
}

// ---------------------------------------------------------------------------
// Cue embeddings
// ---------------------------------------------------------------------------

enum class Modality { kText, kAudio, kOneHot, kNull };

template <class S>
struct CueEmbedding {
  Tensor<S> vector;  // [E]
  Modality modality = Modality::kNull;
};

template <class S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>>>;

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

struct TextEncoderConfig {
  int width = 64;
  int heads = 4;
  int blocks = 2;
  int max_len = 32;
  int mlp_mult = 4;
  int lora_rank = 16;
  double lora_alpha = 16.0;
  double lora_dropout = 0.05;
  // 0 = min(4, blocks) with a recorded warning when fewer than 4 blocks
  // exist; an explicit value larger than `blocks` is a configuration error.
  int avg_last_blocks = 0;
  int embed_dim = 64;
};

// Pre-normalization decoder blocks with causal self-attention. The frozen
// base is adapted only on the query/key projections; the text embedding
// averages the outputs of the last `avg_last_blocks` blocks, mean-pools over
// non-pad positions, and projects to E.
template <class S>
class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(Rng& rng, int vocab_size, TextEncoderConfig cfg) : cfg_(cfg) {
    if (cfg.width % cfg.heads != 0)
      throw ConfigError("text encoder: heads must divide width");
    if (cfg.blocks < 1) throw ConfigError("text encoder: needs at least one block");
    if (cfg.avg_last_blocks > cfg.blocks)
      throw ConfigError("text encoder: cannot average over more blocks than exist");
    if (cfg.avg_last_blocks == 0) {
      avg_blocks_ = std::min(4, cfg.blocks);
      if (cfg.blocks < 4)
        warnings_.push_back("averaging the outputs of all " + std::to_string(cfg.blocks) +
                            " blocks; fewer than 4 exist");
    } else {
      avg_blocks_ = cfg.avg_last_blocks;
    }

    embed_ = init_fan_in<S>(rng, Shape{vocab_size, cfg.width}, cfg.width);
    pos_ = init_fan_in<S>(rng, Shape{cfg.max_len, cfg.width}, cfg.width);
    blocks_.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& blk : blocks_) {
      blk.ln1 = LayerNorm<S>(cfg.width);
      blk.wq = Affine<S>(rng, cfg.width, cfg.width);
      blk.wk = Affine<S>(rng, cfg.width, cfg.width);
      blk.wv = Affine<S>(rng, cfg.width, cfg.width);
      blk.wo = Affine<S>(rng, cfg.width, cfg.width);
      blk.lora_q = LoraAdapter<S>(rng, cfg.width, cfg.width, cfg.lora_rank,
                                  static_cast<S>(cfg.lora_alpha), cfg.lora_dropout);
      blk.lora_k = LoraAdapter<S>(rng, cfg.width, cfg.width, cfg.lora_rank,
                                  static_cast<S>(cfg.lora_alpha), cfg.lora_dropout);
      blk.ln2 = LayerNorm<S>(cfg.width);
      blk.mlp_in = Affine<S>(rng, cfg.width, cfg.width * cfg.mlp_mult);
      blk.mlp_out = Affine<S>(rng, cfg.width * cfg.mlp_mult, cfg.width);
    }
    proj_ = Affine<S>(rng, cfg.width, cfg.embed_dim);
    freeze_base();
  }

  const TextEncoderConfig& config() const { return cfg_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  int averaged_blocks() const { return avg_blocks_; }

  CueEmbedding<S> encode(const std::vector<int>& ids, Rng& rng, bool training,
                         bool use_adapters = true) const {
    if (ids.empty()) throw ContractError("text encoder: empty id sequence");
    bool any_real = false;
    for (int id : ids) any_real = any_real || id != Vocabulary::kPadId;
    if (!any_real) throw ContractError("text encoder: all-pad prompt is empty");
    if (static_cast<int>(ids.size()) + 1 > cfg_.max_len)
      throw DimensionError("text encoder: sequence longer than max_len");

    std::vector<int> seq;
    seq.reserve(ids.size() + 1);
    seq.push_back(2);  // begin id
    seq.insert(seq.end(), ids.begin(), ids.end());
    const int s_len = static_cast<int>(seq.size());

    std::vector<int> positions(static_cast<std::size_t>(s_len));
    for (int i = 0; i < s_len; ++i) positions[static_cast<std::size_t>(i)] = i;

    Tensor<S> x = add(embedding_rows(embed_, seq), embedding_rows(pos_, positions));
    Tensor<S> summed;
    const int first_kept = cfg_.blocks - avg_blocks_;
    for (int bi = 0; bi < cfg_.blocks; ++bi) {
      const auto& blk = blocks_[static_cast<std::size_t>(bi)];
      Tensor<S> h = blk.ln1.forward(x);
      Tensor<S> q = blk.wq.forward(h);
      Tensor<S> k = blk.wk.forward(h);
      if (use_adapters) {
        q = lora_apply(blk.lora_q, q, h, rng, training);
        k = lora_apply(blk.lora_k, k, h, rng, training);
      }
      Tensor<S> v = blk.wv.forward(h);
      x = add(x, blk.wo.forward(multi_head_attention(q, k, v)));
      Tensor<S> m = blk.mlp_out.forward(relu(blk.mlp_in.forward(blk.ln2.forward(x))));
      x = add(x, m);
      if (bi >= first_kept) summed = summed.defined() ? add(summed, x) : x;
    }
    Tensor<S> hidden = scale(summed, S(1) / static_cast<S>(avg_blocks_));

    std::vector<std::uint8_t> keep(static_cast<std::size_t>(s_len), 1);
    for (int i = 1; i < s_len; ++i)
      keep[static_cast<std::size_t>(i)] = seq[static_cast<std::size_t>(i)] != Vocabulary::kPadId;
    Tensor<S> pooled = masked_mean_rows(hidden, keep);
    return {proj_.forward(pooled), Modality::kText};
  }

  NamedParams<S> base_parameters() const {
    NamedParams<S> out = {{"text.embed", embed_}, {"text.pos", pos_}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& blk = blocks_[i];
      const std::string p = "text.b" + std::to_string(i) + ".";
      out.emplace_back(p + "ln1.gain", blk.ln1.gain);
      out.emplace_back(p + "ln1.bias", blk.ln1.bias);
      out.emplace_back(p + "wq.w", blk.wq.weight);
      out.emplace_back(p + "wq.b", blk.wq.bias);
      out.emplace_back(p + "wk.w", blk.wk.weight);
      out.emplace_back(p + "wk.b", blk.wk.bias);
      out.emplace_back(p + "wv.w", blk.wv.weight);
      out.emplace_back(p + "wv.b", blk.wv.bias);
      out.emplace_back(p + "wo.w", blk.wo.weight);
      out.emplace_back(p + "wo.b", blk.wo.bias);
      out.emplace_back(p + "ln2.gain", blk.ln2.gain);
      out.emplace_back(p + "ln2.bias", blk.ln2.bias);
      out.emplace_back(p + "mlp_in.w", blk.mlp_in.weight);
      out.emplace_back(p + "mlp_in.b", blk.mlp_in.bias);
      out.emplace_back(p + "mlp_out.w", blk.mlp_out.weight);
      out.emplace_back(p + "mlp_out.b", blk.mlp_out.bias);
    }
    return out;
  }

  NamedParams<S> adapter_parameters() const {
    NamedParams<S> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& blk = blocks_[i];
      const std::string p = "text.b" + std::to_string(i) + ".";
      out.emplace_back(p + "lora_q.a", blk.lora_q.a);
      out.emplace_back(p + "lora_q.b", blk.lora_q.b);
      out.emplace_back(p + "lora_k.a", blk.lora_k.a);
      out.emplace_back(p + "lora_k.b", blk.lora_k.b);
    }
    return out;
  }

  NamedParams<S> projection_parameters() const {
    return {{"text.proj.w", proj_.weight}, {"text.proj.b", proj_.bias}};
  }

  std::int64_t base_param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : base_parameters()) n += t.size();
    return n;
  }

  std::int64_t adapter_param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : adapter_parameters()) n += t.size();
    return n;
  }

 private:
  struct Block {
    LayerNorm<S> ln1;
    Affine<S> wq, wk, wv, wo;
    LoraAdapter<S> lora_q, lora_k;
    LayerNorm<S> ln2;
    Affine<S> mlp_in, mlp_out;
  };

  Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k,
                                 const Tensor<S>& v) const {
    const int d_head = cfg_.width / cfg_.heads;
    Tensor<S> out;
    for (int h = 0; h < cfg_.heads; ++h) {
      Tensor<S> head = attention_block(slice_cols(q, h * d_head, d_head),
                                       slice_cols(k, h * d_head, d_head),
                                       slice_cols(v, h * d_head, d_head));
      out = out.defined() ? concat_cols(out, head) : head;
    }
    return out;
  }

  void freeze_base() {
    for (auto& [name, t] : base_parameters()) t.set_requires_grad(false);
    for (auto& [name, t] : adapter_parameters()) t.set_requires_grad(true);
    for (auto& [name, t] : projection_parameters()) t.set_requires_grad(true);
  }

  TextEncoderConfig cfg_;
  int avg_blocks_ = 0;
  Tensor<S> embed_;  // [vocab x width]
  Tensor<S> pos_;    // [max_len x width]
  std::vector<Block> blocks_;
  Affine<S> proj_;
  std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Audio cue encoder
// ---------------------------------------------------------------------------

struct AudioCueConfig {
  CodecConfig codec;      // separate analysis filters from the mixture codec
  int bottleneck = 64;
  int hidden = 64;
  int kernel = 3;
  int tcn_blocks = 4;
  int embed_dim = 64;
};

// conv filterbank -> TCN blocks -> temporal mean -> projection to E.
template <class S>
class AudioCueEncoder {
 public:
  AudioCueEncoder() = default;

  AudioCueEncoder(Rng& rng, AudioCueConfig cfg) : cfg_(cfg) {
    cfg.codec.validate();
    filters_ = init_fan_in<S>(rng, Shape{cfg.codec.n_filters, cfg.codec.filter_len},
                              cfg.codec.filter_len);
    in_proj_ = Affine<S>(rng, cfg.codec.n_filters, cfg.bottleneck);
    in_norm_ = GlobalNorm<S>(cfg.bottleneck);
    tcn_ = TcnStack<S>(rng, cfg.bottleneck, cfg.hidden, cfg.kernel, cfg.tcn_blocks);
    out_proj_ = Affine<S>(rng, cfg.bottleneck, cfg.embed_dim);
  }

  const AudioCueConfig& config() const { return cfg_; }

  CueEmbedding<S> encode(const Tensor<S>& enrollment, bool* degenerate = nullptr) const {
    if (enrollment.rank() != 1) throw DimensionError("audio cue: enrollment must be rank-1");
    if (enrollment.dim(0) < cfg_.codec.filter_len)
      throw DimensionError("audio cue: enrollment shorter than one frame");
    bool silent = true;
    for (std::int64_t i = 0; i < enrollment.size() && silent; ++i)
      silent = enrollment.data()[i] == S(0);
    if (degenerate) *degenerate = silent;

    Tensor<S> frames = conv1d(enrollment, filters_, cfg_.codec.hop);
    Tensor<S> h = in_norm_.forward(in_proj_.forward(frames));
    h = tcn_.forward(h);
    Tensor<S> speaker = mean_rows(h);
    return {out_proj_.forward(speaker), Modality::kAudio};
  }

  NamedParams<S> parameters() const {
    NamedParams<S> out = {{"audio.filters", filters_},
                          {"audio.in.w", in_proj_.weight},
                          {"audio.in.b", in_proj_.bias},
                          {"audio.in_norm.gain", in_norm_.gain},
                          {"audio.in_norm.bias", in_norm_.bias}};
    for (std::size_t i = 0; i < tcn_.blocks.size(); ++i)
      append_block_params(out, "audio.tcn" + std::to_string(i) + ".", tcn_.blocks[i]);
    out.emplace_back("audio.out.w", out_proj_.weight);
    out.emplace_back("audio.out.b", out_proj_.bias);
    return out;
  }

  static void append_block_params(NamedParams<S>& out, const std::string& p,
                                  const TcnBlock<S>& blk) {
    out.emplace_back(p + "in.w", blk.in_proj.weight);
    out.emplace_back(p + "in.b", blk.in_proj.bias);
    out.emplace_back(p + "act1", blk.act1.slope);
    out.emplace_back(p + "norm1.gain", blk.norm1.gain);
    out.emplace_back(p + "norm1.bias", blk.norm1.bias);
    out.emplace_back(p + "dconv", blk.dconv.kernels);
    out.emplace_back(p + "act2", blk.act2.slope);
    out.emplace_back(p + "norm2.gain", blk.norm2.gain);
    out.emplace_back(p + "norm2.bias", blk.norm2.bias);
    out.emplace_back(p + "out.w", blk.out_proj.weight);
    out.emplace_back(p + "out.b", blk.out_proj.bias);
  }

 private:
  AudioCueConfig cfg_;
  Tensor<S> filters_;
  Affine<S> in_proj_;
  GlobalNorm<S> in_norm_;
  TcnStack<S> tcn_;
  Affine<S> out_proj_;
};

// ---------------------------------------------------------------------------
// One-hot attribute encoder
// ---------------------------------------------------------------------------

inline constexpr int kOneHotClasses = 8;  // 4 binary attributes

// Position in the class inventory; snippets have no one-hot form.
int one_hot_index(TaskAttribute attribute, const std::string& label);

// The raw inventory vector (mostly for tests).
template <class S>
Tensor<S> one_hot_vector(TaskAttribute attribute, const std::string& label) {
  Tensor<S> v(Shape{kOneHotClasses});
  v.at(one_hot_index(attribute, label)) = S(1);
  return v;
}

template <class S>
class OneHotEncoder {
 public:
  OneHotEncoder() = default;

  OneHotEncoder(Rng& rng, int embed_dim) : proj_(rng, kOneHotClasses, embed_dim) {}

  CueEmbedding<S> encode(TaskAttribute attribute, const std::string& label) const {
    return {proj_.forward(one_hot_vector<S>(attribute, label)), Modality::kOneHot};
  }

  NamedParams<S> parameters() const {
    return {{"onehot.w", proj_.weight}, {"onehot.b", proj_.bias}};
  }

 private:
  Affine<S> proj_;
};

}  // namespace tse
