#pragma once

// Small layer zoo built on the tensor ops, plus a descriptor-driven
// dispatcher for generic layer application. Weight layout is row-major
// x[rows x in] * W[in x out] + b[out].

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "tse/errors.hpp"
#include "tse/rng.hpp"
#include "tse/tensor.hpp"

namespace tse {

// Zero-mean uniform scaled by fan-in.
template <class S>
Tensor<S> init_fan_in(Rng& rng, Shape shape, int fan_in, bool requires_grad = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor<S>::uniform(rng, std::move(shape), -bound, bound, requires_grad);
}

template <class S>
struct Affine {
  Tensor<S> weight;  // [in x out]
  Tensor<S> bias;    // [out]

  Affine() = default;

  Affine(Rng& rng, int in, int out) {
    weight = init_fan_in<S>(rng, Shape{in, out}, in);
    bias = Tensor<S>::zeros(Shape{out}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const;
};

template <class S>
struct LayerNorm {
  Tensor<S> gain;  // [width]
  Tensor<S> bias;  // [width]

  LayerNorm() = default;

  explicit LayerNorm(int width) {
    gain = Tensor<S>::full(Shape{width}, S(1), true);
    bias = Tensor<S>::zeros(Shape{width}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return layer_norm_affine(x, gain, bias);
  }
};

// Whole-tensor normalization with per-channel affine; keeps relative frame
// energies (the TCN stacks use this, the transformer uses LayerNorm).
template <class S>
struct GlobalNorm {
  Tensor<S> gain;  // [width]
  Tensor<S> bias;  // [width]

  GlobalNorm() = default;

  explicit GlobalNorm(int width) {
    gain = Tensor<S>::full(Shape{width}, S(1), true);
    bias = Tensor<S>::zeros(Shape{width}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return global_norm_affine(x, gain, bias);
  }
};

template <class S>
struct PReLU {
  Tensor<S> slope;

  PReLU() : slope(Tensor<S>::full(Shape{1}, S(0.25), true)) {}

  Tensor<S> forward(const Tensor<S>& x) const { return prelu(x, slope); }
};

template <class S>
struct DepthwiseConv {
  Tensor<S> kernels;  // [channels x width]
  int dilation = 1;

  DepthwiseConv() = default;

  DepthwiseConv(Rng& rng, int channels, int width, int dil)
      : kernels(init_fan_in<S>(rng, Shape{channels, width}, width)), dilation(dil) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    return depthwise_conv1d(x, kernels, dilation);
  }
};

// ---------------------------------------------------------------------------
// Descriptor-driven application
// ---------------------------------------------------------------------------

template <class S>
struct TemporalMean {};  // frames x channels -> channels

template <class S>
struct Rectifier {};

template <class S>
struct SigmoidGate {};

template <class S>
using Layer = std::variant<Affine<S>, LayerNorm<S>, PReLU<S>, DepthwiseConv<S>,
                           TemporalMean<S>, Rectifier<S>, SigmoidGate<S>>;

template <class S>
Tensor<S> apply_layer(const Layer<S>& layer, const Tensor<S>& x) {
  return std::visit(
      [&](const auto& l) -> Tensor<S> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Affine<S>>) return l.forward(x);
        else if constexpr (std::is_same_v<L, LayerNorm<S>>) return l.forward(x);
        else if constexpr (std::is_same_v<L, PReLU<S>>) return l.forward(x);
        else if constexpr (std::is_same_v<L, DepthwiseConv<S>>) return l.forward(x);
        else if constexpr (std::is_same_v<L, TemporalMean<S>>) return mean_rows(x);
        else if constexpr (std::is_same_v<L, Rectifier<S>>) return relu(x);
        else return sigmoid(x);
      },
      layer);
}

// Builds an unparameterized layer from its config name; parameterized kinds
// need explicit dimensions, so only the stateless ones are constructible here.
template <class S>
Layer<S> layer_from_config(const std::string& kind) {
  if (kind == "relu") return Rectifier<S>{};
  if (kind == "sigmoid") return SigmoidGate<S>{};
  if (kind == "temporal_mean") return TemporalMean<S>{};
  throw ConfigError("unknown layer kind: " + kind);
}

// ---------------------------------------------------------------------------
// Affine helpers for rank-1 inputs
// ---------------------------------------------------------------------------

namespace detail {

// Reinterprets [n] as [1 x n] while keeping the autodiff graph connected.
template <class S>
Tensor<S> reshape_view(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) throw DimensionError("reshape: element count mismatch");
  Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
  record_if(x.live(), out, [ix = x.impl(), io = out.impl()] {
    const S* g = incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    const std::int64_t n = static_cast<std::int64_t>(ix->data.size());
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
  });
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> as_row_matrix(const Tensor<S>& v) {
  if (v.rank() != 1) throw DimensionError("as_row_matrix expects a rank-1 tensor");
  return detail::reshape_view(v, Shape{1, v.dim(0)});
}

template <class S>
Tensor<S> as_flat_vector(const Tensor<S>& m) {
  return detail::reshape_view(m, Shape{static_cast<int>(m.size())});
}

template <class S>
Tensor<S> Affine<S>::forward(const Tensor<S>& x) const {
  if (x.rank() == 1)
    return as_flat_vector(linear(as_row_matrix(x), weight, bias));
  return linear(x, weight, bias);
}

}  // namespace tse
