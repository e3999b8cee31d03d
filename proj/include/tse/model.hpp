#pragma once

// Encoding-Fusion-Extraction-Decoding assembly: the mixture codec, the three
// cue paths with learned null-cue vectors, the TCN mask estimator, and the
// waveform-level extraction entry points.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tse/audio.hpp"
#include "tse/cue_encoders.hpp"
#include "tse/codec.hpp"
#include "tse/tcn.hpp"

namespace tse {

struct MaskNetConfig {
  int bottleneck = 64;
  int hidden = 64;
  int kernel = 3;
  int stacks = 2;
  int blocks_per_stack = 6;
};

// Mask estimator: a first TCN stack over the mixture features, conditioning
// by broadcast-concatenating the fused cue to every frame with a 1x1
// projection back to the bottleneck width, the remaining stacks, and a
// sigmoid output head. Masks live in [0, 1] with the feature map's shape.
template <class S>
class MaskNet {
 public:
  MaskNet() = default;

  static constexpr int kBilinearChannels = 8;

  MaskNet(Rng& rng, int n_channels, int fused_dim, MaskNetConfig cfg)
      : cfg_(cfg), fused_dim_(fused_dim) {
    if (cfg.stacks < 2) throw ConfigError("masknet: needs at least two stacks");
    in_proj_ = Affine<S>(rng, n_channels, cfg.bottleneck);
    in_norm_ = GlobalNorm<S>(cfg.bottleneck);
    stacks_.emplace_back(rng, cfg.bottleneck, cfg.hidden, cfg.kernel, cfg.blocks_per_stack);
    // Conditioning: the cue is joined with a scene-wide summary of the first
    // stack (the global statistics that relational cues such as
    // louder/quieter name), passed through a small MLP, and injected both
    // additively and through bilinear channels - a per-frame product between
    // a cue-selected direction and projected frame features, i.e. a matched
    // filter whose polarity the cue can flip.
    ctx_hidden_ = Affine<S>(rng, fused_dim + cfg.bottleneck, cfg.bottleneck);
    ctx_mod_ = Affine<S>(rng, cfg.bottleneck, kBilinearChannels);
    frame_mod_ = Affine<S>(rng, cfg.bottleneck, kBilinearChannels);
    cond_proj_ =
        Affine<S>(rng, 2 * cfg.bottleneck + kBilinearChannels, cfg.bottleneck);
    for (int s = 1; s < cfg.stacks; ++s)
      stacks_.emplace_back(rng, cfg.bottleneck, cfg.hidden, cfg.kernel, cfg.blocks_per_stack);
    out_proj_ = Affine<S>(rng, cfg.bottleneck, n_channels);
  }

  Tensor<S> estimate(const Tensor<S>& features, const Tensor<S>& fused_cue) const {
    if (features.rank() != 2 || features.dim(0) < 1)
      throw DimensionError("masknet: empty feature map");
    if (fused_cue.rank() != 1 || fused_cue.dim(0) != fused_dim_)
      throw DimensionError("masknet: fused cue width mismatch");
    Tensor<S> h = in_norm_.forward(in_proj_.forward(features));
    h = stacks_.front().forward(h);
    const int frames = features.dim(0);
    Tensor<S> ctx = relu(ctx_hidden_.forward(concat1d(fused_cue, mean_rows(h))));
    Tensor<S> bilinear =
        mul(tile_rows(ctx_mod_.forward(ctx), frames), frame_mod_.forward(h));
    Tensor<S> cond_in = concat_cols(concat_cols(h, tile_rows(ctx, frames)), bilinear);
    h = cond_proj_.forward(cond_in);
    for (std::size_t s = 1; s < stacks_.size(); ++s) h = stacks_[s].forward(h);
    return sigmoid(out_proj_.forward(h));
  }

  NamedParams<S> parameters() const {
    NamedParams<S> out = {{"mask.in.w", in_proj_.weight},
                          {"mask.in.b", in_proj_.bias},
                          {"mask.in_norm.gain", in_norm_.gain},
                          {"mask.in_norm.bias", in_norm_.bias},
                          {"mask.ctx.w", ctx_hidden_.weight},
                          {"mask.ctx.b", ctx_hidden_.bias},
                          {"mask.ctx_mod.w", ctx_mod_.weight},
                          {"mask.ctx_mod.b", ctx_mod_.bias},
                          {"mask.frame_mod.w", frame_mod_.weight},
                          {"mask.frame_mod.b", frame_mod_.bias},
                          {"mask.cond.w", cond_proj_.weight},
                          {"mask.cond.b", cond_proj_.bias}};
    for (std::size_t s = 0; s < stacks_.size(); ++s)
      for (std::size_t b = 0; b < stacks_[s].blocks.size(); ++b)
        AudioCueEncoder<S>::append_block_params(
            out, "mask.s" + std::to_string(s) + ".b" + std::to_string(b) + ".",
            stacks_[s].blocks[b]);
    out.emplace_back("mask.out.w", out_proj_.weight);
    out.emplace_back("mask.out.b", out_proj_.bias);
    return out;
  }

 private:
  MaskNetConfig cfg_;
  int fused_dim_ = 0;
  Affine<S> in_proj_;
  GlobalNorm<S> in_norm_;
  std::vector<TcnStack<S>> stacks_;
  Affine<S> ctx_hidden_, ctx_mod_, frame_mod_;
  Affine<S> cond_proj_;
  Affine<S> out_proj_;
};

// Elementwise Hadamard masking.
template <class S>
Tensor<S> apply_mask(const Tensor<S>& features, const Tensor<S>& mask) {
  if (!features.same_shape(mask)) throw DimensionError("apply_mask: shape mismatch");
  return mul(features, mask);
}

struct ModelConfig {
  CodecConfig codec;
  TextEncoderConfig text;
  AudioCueConfig audio_cue;
  MaskNetConfig masknet;
  int embed_dim = 64;

  void normalize() {
    text.embed_dim = embed_dim;
    audio_cue.embed_dim = embed_dim;
    audio_cue.codec = codec;
  }
};

template <class S>
class TseModel {
 public:
  TseModel() = default;

  TseModel(Rng& rng, Vocabulary vocab, ModelConfig cfg)
      : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.normalize();
    cfg_.codec.validate();
    codec_ = FilterBank<S>(rng, cfg_.codec);
    text_ = TextEncoder<S>(rng, vocab_.size(), cfg_.text);
    audio_ = AudioCueEncoder<S>(rng, cfg_.audio_cue);
    onehot_ = OneHotEncoder<S>(rng, cfg_.embed_dim);
    null_audio_ = init_fan_in<S>(rng, Shape{cfg_.embed_dim}, cfg_.embed_dim, true);
    null_text_ = init_fan_in<S>(rng, Shape{cfg_.embed_dim}, cfg_.embed_dim, true);
    masknet_ = MaskNet<S>(rng, cfg_.codec.n_filters, 2 * cfg_.embed_dim, cfg_.masknet);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TextEncoder<S>& text_encoder() const { return text_; }
  const AudioCueEncoder<S>& audio_encoder() const { return audio_; }
  const OneHotEncoder<S>& onehot_encoder() const { return onehot_; }
  const FilterBank<S>& filter_bank() const { return codec_; }

  Tensor<S> encode_mixture(const Tensor<S>& signal) const {
    return encode(signal, cfg_.codec, codec_.analysis);
  }

  Tensor<S> decode_features(const Tensor<S>& features, int target_len) const {
    return decode(features, cfg_.codec, codec_.synthesis, target_len);
  }

  CueEmbedding<S> encode_text_cue(const std::string& prompt, Rng& rng, bool training) const {
    return text_.encode(tokenize(prompt, vocab_), rng, training);
  }

  CueEmbedding<S> encode_audio_cue(const Tensor<S>& enrollment, bool* degenerate = nullptr) const {
    return audio_.encode(enrollment, degenerate);
  }

  CueEmbedding<S> encode_one_hot_cue(TaskAttribute attribute, const std::string& label) const {
    return onehot_.encode(attribute, label);
  }

  // Missing modalities take the learned null-cue vector for their slot; the
  // audio slot always comes first. One-hot cues ride in the text slot.
  Tensor<S> fuse(const CueEmbedding<S>* audio_cue, const CueEmbedding<S>* text_cue) const {
    if (!audio_cue && !text_cue) throw NoCueError("extraction needs at least one cue");
    const Tensor<S>& a = audio_cue ? audio_cue->vector : null_audio_;
    const Tensor<S>& t = text_cue ? text_cue->vector : null_text_;
    if (a.dim(0) != cfg_.embed_dim || t.dim(0) != cfg_.embed_dim)
      throw DimensionError("fuse: cue dimension mismatch");
    return concat1d(a, t);
  }

  Tensor<S> estimate_mask(const Tensor<S>& features, const Tensor<S>& fused_cue) const {
    return masknet_.estimate(features, fused_cue);
  }

  // Full pipeline on tensors (differentiable when run under a tape).
  Tensor<S> extract(const Tensor<S>& mixture, const CueEmbedding<S>* audio_cue,
                    const CueEmbedding<S>* text_cue) const {
    Tensor<S> features = encode_mixture(mixture);
    Tensor<S> fused = fuse(audio_cue, text_cue);
    Tensor<S> mask = estimate_mask(features, fused);
    return decode_features(apply_mask(features, mask), mixture.dim(0));
  }

  // Waveform-level inference entry point.
  AudioBuffer extract_waveform(const AudioBuffer& mixture, const AudioBuffer* enrollment,
                               const std::string* text_prompt) const {
    if (!enrollment && !text_prompt) throw NoCueError("extraction needs at least one cue");
    if (mixture.sample_rate != cfg_.codec.sample_rate)
      throw DimensionError("mixture sample rate does not match the model codec");
    Tensor<S> signal = to_tensor(mixture);
    std::optional<CueEmbedding<S>> audio_cue, text_cue;
    if (enrollment) audio_cue = encode_audio_cue(to_tensor(*enrollment));
    if (text_prompt) {
      Rng rng(0);  // inference: dropout disabled, rng unused
      text_cue = encode_text_cue(*text_prompt, rng, false);
    }
    Tensor<S> out = extract(signal, audio_cue ? &*audio_cue : nullptr,
                            text_cue ? &*text_cue : nullptr);
    AudioBuffer result;
    result.sample_rate = mixture.sample_rate;
    result.samples.resize(static_cast<std::size_t>(out.size()));
    for (std::int64_t i = 0; i < out.size(); ++i)
      result.samples[static_cast<std::size_t>(i)] = static_cast<float>(out.data()[i]);
    return result;
  }

  static Tensor<S> to_tensor(const AudioBuffer& audio) {
    Tensor<S> t(Shape{audio.length()});
    for (int i = 0; i < audio.length(); ++i) t.at(i) = static_cast<S>(audio.samples[i]);
    return t;
  }

  NamedParams<S> all_parameters() const {
    NamedParams<S> out = {{"codec.analysis", codec_.analysis},
                          {"codec.synthesis", codec_.synthesis},
                          {"null.audio", null_audio_},
                          {"null.text", null_text_}};
    for (auto& p : text_.base_parameters()) out.push_back(p);
    for (auto& p : text_.adapter_parameters()) out.push_back(p);
    for (auto& p : text_.projection_parameters()) out.push_back(p);
    for (auto& p : audio_.parameters()) out.push_back(p);
    for (auto& p : onehot_.parameters()) out.push_back(p);
    for (auto& p : masknet_.parameters()) out.push_back(p);
    return out;
  }

  // Everything the optimizer touches; the frozen text base is excluded.
  NamedParams<S> trainable_parameters() const {
    NamedParams<S> out;
    for (auto& p : all_parameters())
      if (p.second.requires_grad()) out.push_back(p);
    return out;
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  FilterBank<S> codec_;
  TextEncoder<S> text_;
  AudioCueEncoder<S> audio_;
  OneHotEncoder<S> onehot_;
  Tensor<S> null_audio_, null_text_;
  MaskNet<S> masknet_;
};

}  // namespace tse
