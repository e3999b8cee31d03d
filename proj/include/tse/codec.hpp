#pragma once

// Learnable analysis/synthesis filterbank between waveforms and frame-channel
// feature maps. encode() is a strided convolution against N analysis filters,
// decode() the matching transposed convolution against N synthesis filters.

#include "tse/errors.hpp"
#include "tse/layers.hpp"
#include "tse/tensor.hpp"

namespace tse {

struct CodecConfig {
  int n_filters = 64;
  int filter_len = 16;  // samples
  int hop = 8;          // samples
  int sample_rate = 8000;

  void validate() const {
    if (n_filters < 1) throw ConfigError("codec: n_filters must be >= 1");
    if (hop < 1 || hop > filter_len)
      throw ConfigError("codec: hop must satisfy 1 <= hop <= filter_len");
    if (sample_rate <= 0) throw ConfigError("codec: sample_rate must be positive");
  }

  int frame_count(int signal_len) const {
    if (signal_len < filter_len) throw DimensionError("codec: input shorter than one frame");
    return (signal_len - filter_len) / hop + 1;
  }

  int raw_output_len(int frames) const { return (frames - 1) * hop + filter_len; }
};

template <class S>
struct FilterBank {
  Tensor<S> analysis;   // [N x L]
  Tensor<S> synthesis;  // [N x L]

  FilterBank() = default;

  FilterBank(Rng& rng, const CodecConfig& cfg) {
    cfg.validate();
    analysis = init_fan_in<S>(rng, Shape{cfg.n_filters, cfg.filter_len}, cfg.filter_len);
    synthesis = init_fan_in<S>(rng, Shape{cfg.n_filters, cfg.filter_len}, cfg.filter_len);
  }
};

// Waveform [T] -> feature map [K x N].
template <class S>
Tensor<S> encode(const Tensor<S>& signal, const CodecConfig& cfg,
                 const Tensor<S>& analysis_filters) {
  if (signal.rank() != 1) throw DimensionError("encode: signal must be rank-1");
  if (signal.dim(0) < cfg.filter_len)
    throw DimensionError("encode: input shorter than one frame");
  return conv1d(signal, analysis_filters, cfg.hop);
}

// Feature map [K x N] -> waveform [target_len], truncating or zero-padding
// the raw (K-1)H+L synthesis output to the mixture length.
template <class S>
Tensor<S> decode(const Tensor<S>& frames, const CodecConfig& cfg,
                 const Tensor<S>& synthesis_filters, int target_len) {
  if (frames.rank() != 2 || frames.dim(1) != cfg.n_filters)
    throw DimensionError("decode: feature map shape mismatch");
  Tensor<S> raw = conv1d_transpose(frames, synthesis_filters, cfg.hop);
  return crop_or_pad(raw, target_len);
}

}  // namespace tse
