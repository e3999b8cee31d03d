#pragma once

// Temporal convolutional blocks shared by the audio cue encoder and the mask
// estimator: 1x1 projection, PReLU, per-frame norm, dilated depthwise
// convolution, PReLU, norm, 1x1 back, residual.

#include <vector>

#include "tse/layers.hpp"

namespace tse {

template <class S>
struct TcnBlock {
  Affine<S> in_proj;
  PReLU<S> act1;
  GlobalNorm<S> norm1;
  DepthwiseConv<S> dconv;
  PReLU<S> act2;
  GlobalNorm<S> norm2;
  Affine<S> out_proj;

  TcnBlock() = default;

  TcnBlock(Rng& rng, int channels, int hidden, int kernel, int dilation)
      : in_proj(rng, channels, hidden),
        norm1(hidden),
        dconv(rng, hidden, kernel, dilation),
        norm2(hidden),
        out_proj(rng, hidden, channels) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = norm1.forward(act1.forward(in_proj.forward(x)));
    h = norm2.forward(act2.forward(dconv.forward(h)));
    return add(x, out_proj.forward(h));
  }
};

// Blocks with exponentially growing dilation: 1, 2, 4, ...
template <class S>
struct TcnStack {
  std::vector<TcnBlock<S>> blocks;

  TcnStack() = default;

  TcnStack(Rng& rng, int channels, int hidden, int kernel, int n_blocks) {
    int dilation = 1;
    for (int b = 0; b < n_blocks; ++b) {
      blocks.emplace_back(rng, channels, hidden, kernel, dilation);
      dilation *= 2;
    }
  }

  Tensor<S> forward(Tensor<S> x) const {
    for (const auto& block : blocks) x = block.forward(x);
    return x;
  }
};

}  // namespace tse
