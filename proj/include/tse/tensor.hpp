#pragma once

// Reverse-mode automatic differentiation on dense rank-1/rank-2 tensors.
// Operations execute eagerly; when a Tape is active on the current thread,
// each op records a backward closure. Tape::backward seeds the scalar loss
// with 1 and replays the closures in reverse execution order, which is a
// valid reverse-topological order, visiting each node exactly once.
// Gradients accumulate into leaf tensors until explicitly cleared, which is
// what gradient accumulation over micro-batches relies on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tse/errors.hpp"
#include "tse/parallel.hpp"
#include "tse/rng.hpp"

namespace tse {

using Shape = std::vector<int>;

namespace detail {

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

template <class S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first written
  bool requires_grad = false;
  bool tracked = false;  // produced by (or feeding) a recorded op

  S* grad_slot() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad.data();
  }
};

}  // namespace detail

template <class S>
class Tensor {
 public:
  using Impl = detail::TensorImpl<S>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(detail::shape_numel(impl_->shape), S(0));
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    Tensor t(Shape{1}, requires_grad);
    t.impl_->data[0] = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) != detail::shape_numel(t.impl_->shape))
      throw DimensionError("value count does not match shape");
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor uniform(Rng& rng, Shape shape, double lo, double hi, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  S* data() { return impl_->data.data(); }
  const S* data() const { return impl_->data.data(); }
  std::vector<S>& values() { return impl_->data; }
  const std::vector<S>& values() const { return impl_->data; }

  S value() const {
    if (size() != 1) throw ContractError("value() requires a scalar tensor");
    return impl_->data[0];
  }

  S at(int i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  S at(int r, int c) const {
    return impl_->data[static_cast<std::size_t>(r) * dim(1) + c];
  }
  S& at(int i) { return impl_->data[static_cast<std::size_t>(i)]; }
  S& at(int r, int c) {
    return impl_->data[static_cast<std::size_t>(r) * dim(1) + c];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return impl_->grad;
  }
  S* grad_slot() { return impl_->grad_slot(); }

  void zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  void drop_grad() {
    if (impl_) impl_->grad.clear();
  }

  // True when this tensor participates in gradient tracking.
  bool live() const { return impl_ && (impl_->requires_grad || impl_->tracked); }

  std::shared_ptr<Impl> impl() const { return impl_; }
  void mark_tracked() { impl_->tracked = true; }

  bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Records backward closures for every differentiable op executed while the
// tape is the current one on this thread. Tapes nest; the innermost wins.
template <class S>
class Tape {
 public:
  Tape() : parent_(current_) { current_ = this; }

  ~Tape() { current_ = parent_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(Tensor<S>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ContractError("backward expects a scalar loss");
    loss.grad_slot()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  static thread_local Tape* current_;
  Tape* parent_;
  std::vector<std::function<void()>> nodes_;
};

template <class S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

namespace detail {

template <class S>
bool should_record() {
  return Tape<S>::current() != nullptr;
}

template <class S, class Fn>
void record_if(bool any_input_live, Tensor<S>& out, Fn&& backward) {
  if (!any_input_live || !should_record<S>()) return;
  out.mark_tracked();
  Tape<S>::current()->record(std::forward<Fn>(backward));
}

// Gradient of `t` if anything was propagated into it, else null.
template <class S>
const S* incoming_grad(const std::shared_ptr<TensorImpl<S>>& t) {
  return t->grad.empty() ? nullptr : t->grad.data();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch");
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] + pb[i];
  });
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i];
      });
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) gb[i] += g[i];
      });
    }
  });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] - pb[i];
  });
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i];
      });
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) gb[i] -= g[i];
      });
    }
  });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] * pb[i];
  });
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      const S* pb2 = ib->data.data();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i] * pb2[i];
      });
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      const S* pa2 = ia->data.data();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) gb[i] += g[i] * pa2[i];
      });
    }
  });
  return out;
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "div");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S* pa2 = ia->data.data();
    const S* pb2 = ib->data.data();
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb2[i];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i] * pa2[i] / (pb2[i] * pb2[i]);
    }
  });
  return out;
}

// Multiplies every element of `a` by a scalar tensor (gradient flows to both).
template <class S>
Tensor<S> scale_by(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be a scalar tensor");
  Tensor<S> out(a.shape());
  const S factor = s.data()[0];
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] * factor;
  });
  detail::record_if(a.live() || s.live(), out,
                    [ia = a.impl(), is = s.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S factor2 = is->data[0];
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i] * factor2;
      });
    }
    if (is->requires_grad || is->tracked) {
      const S* pa2 = ia->data.data();
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        acc += static_cast<double>(g[i]) * static_cast<double>(pa2[i]);
      is->grad_slot()[0] += static_cast<S>(acc);
    }
  });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.size();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] * factor;
  });
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), factor, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i] * factor;
    });
  });
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S shift) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + shift;
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
  });
  return out;
}

// Elementwise max(x, floor_value); gradient passes only where x >= floor.
template <class S>
Tensor<S> floor_at(const Tensor<S>& a, S floor_value) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] >= floor_value ? pa[i] : floor_value;
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), floor_value, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S* pa2 = ia->data.data();
    for (std::int64_t i = 0; i < n; ++i)
      if (pa2[i] >= floor_value) ga[i] += g[i];
  });
  return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  });
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S* pa2 = ia->data.data();
    parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i)
        if (pa2[i] > S(0)) ga[i] += g[i];
    });
  });
  return out;
}

// Leaky rectifier with a single learnable slope for the negative part.
template <class S>
Tensor<S> prelu(const Tensor<S>& a, const Tensor<S>& slope) {
  if (slope.size() != 1) throw DimensionError("prelu: slope must be a scalar tensor");
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  const S alpha = slope.data()[0];
  S* po = out.data();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = pa[i] > S(0) ? pa[i] : alpha * pa[i];
  });
  detail::record_if(a.live() || slope.live(), out,
                    [ia = a.impl(), is = slope.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S* pa2 = ia->data.data();
    const S alpha2 = is->data[0];
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i)
          ga[i] += pa2[i] > S(0) ? g[i] : alpha2 * g[i];
      });
    }
    if (is->requires_grad || is->tracked) {
      S acc = S(0);
      for (std::int64_t i = 0; i < n; ++i)
        acc += g[i] * std::min(pa2[i], S(0));
      is->grad_slot()[0] += acc;
    }
  });
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = S(1) / (S(1) + std::exp(-pa[i]));
  });
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S* po2 = io->data.data();
    parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i] * po2[i] * (S(1) - po2[i]);
    });
  });
  return out;
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) po[i] = std::tanh(pa[i]);
  });
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S* po2 = io->data.data();
    parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) ga[i] += g[i] * (S(1) - po2[i] * po2[i]);
    });
  });
  return out;
}

// Natural logarithm; inputs must be positive.
template <class S>
Tensor<S> log_op(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = std::log(pa[i]);
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S* pa2 = ia->data.data();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] / pa2[i];
  });
  return out;
}

// Inverted-dropout. Active only when `training`; scaling keeps expectation.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return a;
  Tensor<S> out(a.shape());
  const std::int64_t n = a.size();
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  const S* pa = a.data();
  S* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const S m = rng.bernoulli(p) ? S(0) : keep_scale;
    (*mask)[static_cast<std::size_t>(i)] = m;
    po[i] = pa[i] * m;
  }
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), mask, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * (*mask)[static_cast<std::size_t>(i)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  double acc = 0.0;
  const S* pa = a.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S gv = g[0];
    for (std::int64_t i = 0; i < n; ++i) ga[i] += gv;
  });
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  const std::int64_t n = a.size();
  double acc = 0.0;
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    const S gv = g[0] / static_cast<S>(n);
    for (std::int64_t i = 0; i < n; ++i) ga[i] += gv;
  });
  return out;
}

template <class S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  const S* pa = a.data();
  const S* pb = b.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i)
    acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S gv = g[0];
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      const S* pb2 = ib->data.data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gv * pb2[i];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      const S* pa2 = ia->data.data();
      for (std::int64_t i = 0; i < n; ++i) gb[i] += gv * pa2[i];
    }
  });
  return out;
}

// Column means over rows: [K x N] -> [N].
template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows expects a rank-2 tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{cols});
  const S* px = x.data();
  S* po = out.data();
  std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
  for (int r = 0; r < rows; ++r) {
    const S* xrow = px + static_cast<std::int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += static_cast<double>(xrow[c]);
  }
  for (int c = 0; c < cols; ++c) po[c] = static_cast<S>(acc[static_cast<std::size_t>(c)] / rows);
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    const S inv = S(1) / static_cast<S>(rows);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) gx[static_cast<std::int64_t>(r) * cols + c] += g[c] * inv;
  });
  return out;
}

// Column means over the rows selected by `keep` (at least one required).
template <class S>
Tensor<S> masked_mean_rows(const Tensor<S>& x, const std::vector<std::uint8_t>& keep) {
  if (x.rank() != 2) throw DimensionError("masked_mean_rows expects a rank-2 tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  if (static_cast<int>(keep.size()) != rows)
    throw DimensionError("masked_mean_rows: mask length mismatch");
  int count = 0;
  for (auto k : keep) count += k ? 1 : 0;
  if (count == 0) throw ContractError("masked_mean_rows: empty row selection");
  Tensor<S> out(Shape{cols});
  const S* px = x.data();
  S* po = out.data();
  for (int c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r)
      if (keep[static_cast<std::size_t>(r)]) acc += static_cast<double>(px[static_cast<std::int64_t>(r) * cols + c]);
    po[c] = static_cast<S>(acc / count);
  }
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), keep, rows, cols, count] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    const S inv = S(1) / static_cast<S>(count);
    for (int r = 0; r < rows; ++r) {
      if (!keep[static_cast<std::size_t>(r)]) continue;
      for (int c = 0; c < cols; ++c) gx[static_cast<std::int64_t>(r) * cols + c] += g[c] * inv;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 tensors");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) throw DimensionError("matmul: inner dimensions differ");
  Tensor<S> out(Shape{m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  parallel_for(m, static_cast<std::int64_t>(k) * n, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      S* orow = po + i * n;
      for (int l = 0; l < k; ++l) {
        const S av = pa[i * k + l];
        const S* brow = pb + static_cast<std::int64_t>(l) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), m, k, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      // dA = g * B^T, written with an elementwise inner loop over l
      S* ga = ia->grad_slot();
      const S* pb2 = ib->data.data();
      std::vector<S> bt(static_cast<std::size_t>(k) * n);
      for (int l = 0; l < k; ++l)
        for (int j = 0; j < n; ++j)
          bt[static_cast<std::size_t>(j) * k + l] = pb2[static_cast<std::int64_t>(l) * n + j];
      const S* pbt = bt.data();
      parallel_for(m, static_cast<std::int64_t>(k) * n, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
          S* garow = ga + i * k;
          const S* grow = g + i * n;
          for (int j = 0; j < n; ++j) {
            const S gv = grow[j];
            const S* btrow = pbt + static_cast<std::int64_t>(j) * k;
            for (int l = 0; l < k; ++l) garow[l] += gv * btrow[l];
          }
        }
      });
    }
    if (ib->requires_grad || ib->tracked) {
      // dB = A^T * g; threads own disjoint l-ranges, inner loop over j
      S* gb = ib->grad_slot();
      const S* pa2 = ia->data.data();
      parallel_for(k, static_cast<std::int64_t>(m) * n, [&](std::int64_t l0, std::int64_t l1) {
        for (int i = 0; i < m; ++i) {
          const S* arow = pa2 + static_cast<std::int64_t>(i) * k;
          const S* grow = g + static_cast<std::int64_t>(i) * n;
          for (std::int64_t l = l0; l < l1; ++l) {
            const S av = arow[l];
            S* brow = gb + l * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      });
    }
  });
  return out;
}

// Fused x[m x k] * w[k x n] + b[n]. One node instead of matmul + add_rowvec.
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw DimensionError("linear expects x[m,k], w[k,n], b[n]");
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || b.dim(0) != n) throw DimensionError("linear: shape mismatch");
  Tensor<S> out(Shape{m, n});
  const S* px = x.data();
  const S* pw = w.data();
  const S* pb = b.data();
  S* po = out.data();
  parallel_for(m, static_cast<std::int64_t>(k) * n, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      S* orow = po + i * n;
      std::copy(pb, pb + n, orow);
      const S* xrow = px + i * k;
      for (int l = 0; l < k; ++l) {
        const S xv = xrow[l];
        const S* wrow = pw + static_cast<std::int64_t>(l) * n;
        for (int j = 0; j < n; ++j) orow[j] += xv * wrow[j];
      }
    }
  });
  detail::record_if(x.live() || w.live() || b.live(), out,
                    [ix = x.impl(), iw = w.impl(), ib = b.impl(), io = out.impl(), m, k, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pw2 = iw->data.data();
      std::vector<S> wt(static_cast<std::size_t>(k) * n);
      for (int l = 0; l < k; ++l)
        for (int j = 0; j < n; ++j)
          wt[static_cast<std::size_t>(j) * k + l] = pw2[static_cast<std::int64_t>(l) * n + j];
      const S* pwt = wt.data();
      parallel_for(m, static_cast<std::int64_t>(k) * n, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
          S* gxrow = gx + i * k;
          const S* grow = g + i * n;
          for (int j = 0; j < n; ++j) {
            const S gv = grow[j];
            const S* wtrow = pwt + static_cast<std::int64_t>(j) * k;
            for (int l = 0; l < k; ++l) gxrow[l] += gv * wtrow[l];
          }
        }
      });
    }
    if (iw->requires_grad || iw->tracked) {
      S* gw = iw->grad_slot();
      const S* px2 = ix->data.data();
      parallel_for(k, static_cast<std::int64_t>(m) * n, [&](std::int64_t l0, std::int64_t l1) {
        for (int i = 0; i < m; ++i) {
          const S* xrow = px2 + static_cast<std::int64_t>(i) * k;
          const S* grow = g + static_cast<std::int64_t>(i) * n;
          for (std::int64_t l = l0; l < l1; ++l) {
            const S xv = xrow[l];
            S* wrow = gw + l * n;
            for (int j = 0; j < n; ++j) wrow[j] += xv * grow[j];
          }
        }
      });
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(n), S(0));
      for (int i = 0; i < m; ++i) {
        const S* grow = g + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += grow[j];
      }
      for (int j = 0; j < n; ++j) gb[j] += acc[static_cast<std::size_t>(j)];
    }
  });
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<S> out(Shape{n, m});
  const S* pa = a.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::int64_t>(j) * m + i] = pa[static_cast<std::int64_t>(i) * n + j];
  detail::record_if(a.live(), out, [ia = a.impl(), io = out.impl(), m, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* ga = ia->grad_slot();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::int64_t>(i) * n + j] += g[static_cast<std::int64_t>(j) * m + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Strided frame analysis: x[T] against filters[N x L] with hop H gives
// out[K x N], K = floor((T - L) / H) + 1, out(k, n) = sum_t x(t + kH) f(n, t).
template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& filters, int hop) {
  if (x.rank() != 1) throw DimensionError("conv1d: signal must be rank-1");
  if (filters.rank() != 2) throw DimensionError("conv1d: filters must be rank-2 [N x L]");
  if (hop < 1) throw DimensionError("conv1d: hop must be >= 1");
  const int t_len = x.dim(0), n_filters = filters.dim(0), f_len = filters.dim(1);
  if (t_len < f_len) throw DimensionError("conv1d: input too short for filter length");
  const int k_frames = (t_len - f_len) / hop + 1;
  Tensor<S> out(Shape{k_frames, n_filters});
  const S* px = x.data();
  const S* pf = filters.data();
  S* po = out.data();
  parallel_for(k_frames, static_cast<std::int64_t>(n_filters) * f_len,
               [&](std::int64_t k0, std::int64_t k1) {
    for (std::int64_t k = k0; k < k1; ++k) {
      const S* seg = px + k * hop;
      S* orow = po + k * n_filters;
      for (int n = 0; n < n_filters; ++n) {
        const S* frow = pf + static_cast<std::int64_t>(n) * f_len;
        S acc = S(0);
        for (int t = 0; t < f_len; ++t) acc += seg[t] * frow[t];
        orow[n] = acc;
      }
    }
  });
  detail::record_if(x.live() || filters.live(), out,
                    [ix = x.impl(), ifl = filters.impl(), io = out.impl(),
                     t_len, n_filters, f_len, hop, k_frames] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pf2 = ifl->data.data();
      parallel_for(t_len, n_filters * (f_len / hop + 1), [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
          // frames k with 0 <= t - kH < L
          const std::int64_t lo_num = t - f_len + 1;
          const std::int64_t k_lo = lo_num <= 0 ? 0 : (lo_num + hop - 1) / hop;
          const std::int64_t k_hi = std::min<std::int64_t>(t / hop, k_frames - 1);
          S acc = S(0);
          for (std::int64_t k = k_lo; k <= k_hi; ++k) {
            const std::int64_t off = t - k * hop;
            const S* grow = g + k * n_filters;
            for (int n = 0; n < n_filters; ++n)
              acc += grow[n] * pf2[static_cast<std::int64_t>(n) * f_len + off];
          }
          gx[t] += acc;
        }
      });
    }
    if (ifl->requires_grad || ifl->tracked) {
      S* gf = ifl->grad_slot();
      const S* px2 = ix->data.data();
      parallel_for(n_filters, static_cast<std::int64_t>(k_frames) * f_len,
                   [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t n = n0; n < n1; ++n) {
          S* frow = gf + n * f_len;
          for (std::int64_t k = 0; k < k_frames; ++k) {
            const S gv = g[k * n_filters + n];
            const S* seg = px2 + k * hop;
            for (int t = 0; t < f_len; ++t) frow[t] += gv * seg[t];
          }
        }
      });
    }
  });
  return out;
}

// Overlap-add synthesis: frames[K x N] against filters[N x L] with hop H gives
// y[T'], T' = (K - 1) H + L, y(t) = sum_k sum_n F(k, n) f(n, t - kH).
template <class S>
Tensor<S> conv1d_transpose(const Tensor<S>& frames, const Tensor<S>& filters, int hop) {
  if (frames.rank() != 2) throw DimensionError("conv1d_transpose: frames must be rank-2 [K x N]");
  if (filters.rank() != 2) throw DimensionError("conv1d_transpose: filters must be rank-2 [N x L]");
  if (hop < 1) throw DimensionError("conv1d_transpose: hop must be >= 1");
  const int k_frames = frames.dim(0), n_filters = frames.dim(1), f_len = filters.dim(1);
  if (filters.dim(0) != n_filters)
    throw DimensionError("conv1d_transpose: filter count does not match frame channels");
  const int t_len = (k_frames - 1) * hop + f_len;
  Tensor<S> out(Shape{t_len});
  const S* pf = filters.data();
  const S* pm = frames.data();
  S* po = out.data();
  parallel_for(t_len, n_filters * (f_len / hop + 1), [&](std::int64_t t0, std::int64_t t1) {
    for (std::int64_t t = t0; t < t1; ++t) {
      std::int64_t k_lo = t - f_len + 1 <= 0 ? 0 : (t - f_len + 1 + hop - 1) / hop;
      std::int64_t k_hi = std::min<std::int64_t>(t / hop, k_frames - 1);
      S acc = S(0);
      for (std::int64_t k = k_lo; k <= k_hi; ++k) {
        const std::int64_t off = t - k * hop;
        const S* mrow = pm + k * n_filters;
        for (int n = 0; n < n_filters; ++n)
          acc += mrow[n] * pf[static_cast<std::int64_t>(n) * f_len + off];
      }
      po[t] = acc;
    }
  });
  detail::record_if(frames.live() || filters.live(), out,
                    [im = frames.impl(), ifl = filters.impl(), io = out.impl(),
                     k_frames, n_filters, f_len, hop] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (im->requires_grad || im->tracked) {
      S* gm = im->grad_slot();
      const S* pf2 = ifl->data.data();
      parallel_for(k_frames, static_cast<std::int64_t>(n_filters) * f_len,
                   [&](std::int64_t k0, std::int64_t k1) {
        for (std::int64_t k = k0; k < k1; ++k) {
          const S* gseg = g + k * hop;
          S* mrow = gm + k * n_filters;
          for (int n = 0; n < n_filters; ++n) {
            const S* frow = pf2 + static_cast<std::int64_t>(n) * f_len;
            S acc = S(0);
            for (int t = 0; t < f_len; ++t) acc += gseg[t] * frow[t];
            mrow[n] += acc;
          }
        }
      });
    }
    if (ifl->requires_grad || ifl->tracked) {
      S* gf = ifl->grad_slot();
      const S* pm2 = im->data.data();
      parallel_for(n_filters, static_cast<std::int64_t>(k_frames) * f_len,
                   [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t n = n0; n < n1; ++n) {
          S* frow = gf + n * f_len;
          for (std::int64_t k = 0; k < k_frames; ++k) {
            const S mv = pm2[k * n_filters + n];
            const S* gseg = g + k * hop;
            for (int t = 0; t < f_len; ++t) frow[t] += mv * gseg[t];
          }
        }
      });
    }
  });
  return out;
}

// Per-channel dilated convolution over frames with centered zero padding:
// x[K x C], kernels[C x W] -> out[K x C] of the same length.
template <class S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& kernels, int dilation) {
  if (x.rank() != 2 || kernels.rank() != 2)
    throw DimensionError("depthwise_conv1d expects rank-2 tensors");
  if (dilation < 1) throw DimensionError("depthwise_conv1d: dilation must be >= 1");
  const int k_frames = x.dim(0), channels = x.dim(1), width = kernels.dim(1);
  if (kernels.dim(0) != channels)
    throw DimensionError("depthwise_conv1d: kernel count does not match channels");
  if (width % 2 == 0) throw ConfigError("depthwise_conv1d: kernel width must be odd");
  const int half = width / 2;
  Tensor<S> out(Shape{k_frames, channels});
  const S* px = x.data();
  const S* pw = kernels.data();
  S* po = out.data();
  parallel_for(k_frames, static_cast<std::int64_t>(channels) * width,
               [&](std::int64_t k0, std::int64_t k1) {
    for (std::int64_t k = k0; k < k1; ++k) {
      S* orow = po + k * channels;
      for (int j = 0; j < width; ++j) {
        const std::int64_t src = k + static_cast<std::int64_t>(j - half) * dilation;
        if (src < 0 || src >= k_frames) continue;
        const S* xrow = px + src * channels;
        for (int c = 0; c < channels; ++c) orow[c] += xrow[c] * pw[static_cast<std::int64_t>(c) * width + j];
      }
    }
  });
  detail::record_if(x.live() || kernels.live(), out,
                    [ix = x.impl(), iw = kernels.impl(), io = out.impl(),
                     k_frames, channels, width, dilation, half] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pw2 = iw->data.data();
      parallel_for(k_frames, static_cast<std::int64_t>(channels) * width,
                   [&](std::int64_t k0, std::int64_t k1) {
        for (std::int64_t k = k0; k < k1; ++k) {
          S* xrow = gx + k * channels;
          for (int j = 0; j < width; ++j) {
            const std::int64_t dst = k - static_cast<std::int64_t>(j - half) * dilation;
            if (dst < 0 || dst >= k_frames) continue;
            const S* grow = g + dst * channels;
            for (int c = 0; c < channels; ++c)
              xrow[c] += grow[c] * pw2[static_cast<std::int64_t>(c) * width + j];
          }
        }
      });
    }
    if (iw->requires_grad || iw->tracked) {
      S* gw = iw->grad_slot();
      const S* px2 = ix->data.data();
      parallel_for(channels, static_cast<std::int64_t>(k_frames) * width,
                   [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t c = c0; c < c1; ++c)
          for (int j = 0; j < width; ++j) {
            S acc = S(0);
            for (std::int64_t k = 0; k < k_frames; ++k) {
              const std::int64_t src = k + static_cast<std::int64_t>(j - half) * dilation;
              if (src < 0 || src >= k_frames) continue;
              acc += g[k * channels + c] * px2[src * channels + c];
            }
            gw[c * width + j] += acc;
          }
      });
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Broadcast / layout ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
    throw DimensionError("add_rowvec: incompatible shapes");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{rows, cols});
  const S* px = x.data();
  const S* pv = v.data();
  S* po = out.data();
  parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r)
      for (int c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pv[c];
  });
  detail::record_if(x.live() || v.live(), out,
                    [ix = x.impl(), iv = v.impl(), io = out.impl(), rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const std::int64_t n = static_cast<std::int64_t>(rows) * cols;
      parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) gx[i] += g[i];
      });
    }
    if (iv->requires_grad || iv->tracked) {
      S* gv = iv->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c];
      }
      for (int c = 0; c < cols; ++c) gv[c] += acc[static_cast<std::size_t>(c)];
    }
  });
  return out;
}

template <class S>
Tensor<S> mul_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
    throw DimensionError("mul_rowvec: incompatible shapes");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{rows, cols});
  const S* px = x.data();
  const S* pv = v.data();
  S* po = out.data();
  parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r)
      for (int c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] * pv[c];
  });
  detail::record_if(x.live() || v.live(), out,
                    [ix = x.impl(), iv = v.impl(), io = out.impl(), rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pv2 = iv->data.data();
      parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r)
          for (int c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * pv2[c];
      });
    }
    if (iv->requires_grad || iv->tracked) {
      S* gv = iv->grad_slot();
      const S* px2 = ix->data.data();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        const S* xrow = px2 + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c] * xrow[c];
      }
      for (int c = 0; c < cols; ++c) gv[c] += acc[static_cast<std::size_t>(c)];
    }
  });
  return out;
}

// Repeats vector v as every row of a [rows x len(v)] matrix.
template <class S>
Tensor<S> tile_rows(const Tensor<S>& v, int rows) {
  if (v.rank() != 1) throw DimensionError("tile_rows expects a rank-1 tensor");
  if (rows < 1) throw DimensionError("tile_rows: rows must be >= 1");
  const int cols = v.dim(0);
  Tensor<S> out(Shape{rows, cols});
  const S* pv = v.data();
  S* po = out.data();
  for (int r = 0; r < rows; ++r) std::copy(pv, pv + cols, po + static_cast<std::int64_t>(r) * cols);
  detail::record_if(v.live(), out, [iv = v.impl(), io = out.impl(), rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gv = iv->grad_slot();
    std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
    for (int r = 0; r < rows; ++r) {
      const S* grow = g + static_cast<std::int64_t>(r) * cols;
      for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c];
    }
    for (int c = 0; c < cols; ++c) gv[c] += acc[static_cast<std::size_t>(c)];
  });
  return out;
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw DimensionError("concat_cols: row counts differ");
  const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<S> out(Shape{rows, ca + cb});
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
      std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
    }
  });
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), rows, ca, cb] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < ca; ++c) ga[static_cast<std::int64_t>(r) * ca + c] += g[static_cast<std::int64_t>(r) * (ca + cb) + c];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cb; ++c) gb[static_cast<std::int64_t>(r) * cb + c] += g[static_cast<std::int64_t>(r) * (ca + cb) + ca + c];
    }
  });
  return out;
}

template <class S>
Tensor<S> concat1d(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 1 || b.rank() != 1) throw DimensionError("concat1d expects rank-1 tensors");
  const int na = a.dim(0), nb = b.dim(0);
  Tensor<S> out(Shape{na + nb});
  std::copy(a.data(), a.data() + na, out.data());
  std::copy(b.data(), b.data() + nb, out.data() + na);
  detail::record_if(a.live() || b.live(), out,
                    [ia = a.impl(), ib = b.impl(), io = out.impl(), na, nb] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    if (ia->requires_grad || ia->tracked) {
      S* ga = ia->grad_slot();
      for (int i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
    }
  });
  return out;
}

template <class S>
Tensor<S> slice1d(const Tensor<S>& x, int start, int len) {
  if (x.rank() != 1) throw DimensionError("slice1d expects a rank-1 tensor");
  if (start < 0 || len < 1 || start + len > x.dim(0))
    throw DimensionError("slice1d: range out of bounds");
  Tensor<S> out(Shape{len});
  std::copy(x.data() + start, x.data() + start + len, out.data());
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), start, len] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    for (int i = 0; i < len; ++i) gx[start + i] += g[i];
  });
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int start, int len) {
  if (x.rank() != 2) throw DimensionError("slice_cols expects a rank-2 tensor");
  if (start < 0 || len < 1 || start + len > x.dim(1))
    throw DimensionError("slice_cols: range out of bounds");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{rows, len});
  const S* px = x.data();
  S* po = out.data();
  for (int r = 0; r < rows; ++r)
    std::copy(px + static_cast<std::int64_t>(r) * cols + start,
              px + static_cast<std::int64_t>(r) * cols + start + len,
              po + static_cast<std::int64_t>(r) * len);
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), rows, cols, start, len] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c)
        gx[static_cast<std::int64_t>(r) * cols + start + c] += g[static_cast<std::int64_t>(r) * len + c];
  });
  return out;
}

// Truncates or zero-pads a rank-1 tensor to the target length.
template <class S>
Tensor<S> crop_or_pad(const Tensor<S>& x, int target_len) {
  if (x.rank() != 1) throw DimensionError("crop_or_pad expects a rank-1 tensor");
  if (target_len < 1) throw DimensionError("crop_or_pad: target length must be >= 1");
  const int n = x.dim(0);
  if (n == target_len) return x;
  if (n > target_len) return slice1d(x, 0, target_len);
  Tensor<S> out(Shape{target_len});
  std::copy(x.data(), x.data() + n, out.data());
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    for (int i = 0; i < n; ++i) gx[i] += g[i];
  });
  return out;
}

// Gathers embedding rows: table[V x d], ids[S] -> out[S x d].
template <class S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_rows expects a rank-2 table");
  if (ids.empty()) throw ContractError("embedding_rows: empty id sequence");
  const int vocab = table.dim(0), width = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab) throw DimensionError("embedding_rows: id out of range");
  const int rows = static_cast<int>(ids.size());
  Tensor<S> out(Shape{rows, width});
  const S* pt = table.data();
  S* po = out.data();
  for (int r = 0; r < rows; ++r)
    std::copy(pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(r)]) * width,
              pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(r)] + 1) * width,
              po + static_cast<std::int64_t>(r) * width);
  detail::record_if(table.live(), out, [it = table.impl(), io = out.impl(), ids, width] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gt = it->grad_slot();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (int c = 0; c < width; ++c)
        gt[static_cast<std::int64_t>(ids[r]) * width + c] += g[static_cast<std::int64_t>(r) * width + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention
// ---------------------------------------------------------------------------

// Normalizes each row to zero mean and unit variance (no gain/bias).
template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, S eps = S(1e-5)) {
  if (x.rank() != 2) throw DimensionError("layer_norm_rows expects a rank-2 tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{rows, cols});
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  const S* px = x.data();
  S* po = out.data();
  S* pinv = inv_std->data();
  parallel_for(rows, 4 * cols, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const S* xrow = px + r * cols;
      double m = 0.0;
      for (int c = 0; c < cols; ++c) m += static_cast<double>(xrow[c]);
      m /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double d = static_cast<double>(xrow[c]) - m;
        var += d * d;
      }
      var /= cols;
      const S inv = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      pinv[r] = inv;
      S* orow = po + r * cols;
      for (int c = 0; c < cols; ++c) orow[c] = (xrow[c] - static_cast<S>(m)) * inv;
    }
  });
  detail::record_if(x.live(), out, [ix = x.impl(), io = out.impl(), inv_std, rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gx = ix->grad_slot();
    const S* py = io->data.data();
    parallel_for(rows, 4 * cols, [&](std::int64_t r0, std::int64_t r1) {
      for (std::int64_t r = r0; r < r1; ++r) {
        const S* grow = g + r * cols;
        const S* yrow = py + r * cols;
        double gsum = 0.0, gysum = 0.0;
        for (int c = 0; c < cols; ++c) {
          gsum += static_cast<double>(grow[c]);
          gysum += static_cast<double>(grow[c]) * static_cast<double>(yrow[c]);
        }
        const double gm = gsum / cols, gym = gysum / cols;
        const S inv = (*inv_std)[static_cast<std::size_t>(r)];
        S* xrow = gx + r * cols;
        for (int c = 0; c < cols; ++c)
          xrow[c] += inv * static_cast<S>(static_cast<double>(grow[c]) - gm -
                                          static_cast<double>(yrow[c]) * gym);
      }
    });
  });
  return out;
}

// Fused per-row normalization with gain and bias:
//   y = (x - mean) / sqrt(var + eps) * gain + bias.
template <class S>
Tensor<S> layer_norm_affine(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                            S eps = S(1e-5)) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1))
    throw DimensionError("layer_norm_affine: shape mismatch");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(Shape{rows, cols});
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  auto normalized = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows) * cols);
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pbias = bias.data();
  S* po = out.data();
  S* pinv = inv_std->data();
  S* pn = normalized->data();
  parallel_for(rows, 6 * cols, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const S* xrow = px + r * cols;
      S msum = S(0);
      for (int c = 0; c < cols; ++c) msum += xrow[c];
      const S m = msum / static_cast<S>(cols);
      S vsum = S(0);
      for (int c = 0; c < cols; ++c) {
        const S d = xrow[c] - m;
        vsum += d * d;
      }
      const S inv = S(1) / std::sqrt(vsum / static_cast<S>(cols) + eps);
      pinv[r] = inv;
      S* nrow = pn + r * cols;
      S* orow = po + r * cols;
      for (int c = 0; c < cols; ++c) {
        nrow[c] = (xrow[c] - m) * inv;
        orow[c] = nrow[c] * pg[c] + pbias[c];
      }
    }
  });
  detail::record_if(x.live() || gain.live() || bias.live(), out,
                    [ix = x.impl(), ig = gain.impl(), ib = bias.impl(), io = out.impl(),
                     inv_std, normalized, rows, cols] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S* pn2 = normalized->data();
    if (ig->requires_grad || ig->tracked) {
      S* gg = ig->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        const S* nrow = pn2 + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c] * nrow[c];
      }
      for (int c = 0; c < cols; ++c) gg[c] += acc[static_cast<std::size_t>(c)];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c];
      }
      for (int c = 0; c < cols; ++c) gb[c] += acc[static_cast<std::size_t>(c)];
    }
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pg2 = ig->data.data();
      parallel_for(rows, 6 * cols, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
          const S* grow = g + r * cols;
          const S* nrow = pn2 + r * cols;
          S gsum = S(0), gnsum = S(0);
          for (int c = 0; c < cols; ++c) {
            const S gc = grow[c] * pg2[c];
            gsum += gc;
            gnsum += gc * nrow[c];
          }
          const S gm = gsum / static_cast<S>(cols);
          const S gnm = gnsum / static_cast<S>(cols);
          const S inv = (*inv_std)[static_cast<std::size_t>(r)];
          S* xrow = gx + r * cols;
          for (int c = 0; c < cols; ++c)
            xrow[c] += inv * (grow[c] * pg2[c] - gm - nrow[c] * gnm);
        }
      });
    }
  });
  return out;
}

// Normalization over the whole tensor (one group) with per-channel affine:
//   y = (x - mean_all) / sqrt(var_all + eps) * gain + bias.
// Unlike per-row normalization this preserves relative energies between
// frames, which relational cues (louder/quieter) depend on.
template <class S>
Tensor<S> global_norm_affine(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                             S eps = S(1e-5)) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1))
    throw DimensionError("global_norm_affine: shape mismatch");
  const int rows = x.dim(0), cols = x.dim(1);
  const std::int64_t n = static_cast<std::int64_t>(rows) * cols;
  Tensor<S> out(Shape{rows, cols});
  auto normalized = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pb = bias.data();
  S* po = out.data();
  S* pn = normalized->data();

  double msum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) msum += static_cast<double>(px[i]);
  const double mean_all = msum / static_cast<double>(n);
  double vsum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(px[i]) - mean_all;
    vsum += d * d;
  }
  const S inv = static_cast<S>(1.0 / std::sqrt(vsum / static_cast<double>(n) +
                                               static_cast<double>(eps)));
  const S mean_s = static_cast<S>(mean_all);
  auto inv_holder = std::make_shared<S>(inv);
  parallel_for(rows, 2 * cols, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const S* xrow = px + r * cols;
      S* nrow = pn + r * cols;
      S* orow = po + r * cols;
      for (int c = 0; c < cols; ++c) {
        nrow[c] = (xrow[c] - mean_s) * inv;
        orow[c] = nrow[c] * pg[c] + pb[c];
      }
    }
  });
  detail::record_if(x.live() || gain.live() || bias.live(), out,
                    [ix = x.impl(), ig = gain.impl(), ib = bias.impl(), io = out.impl(),
                     normalized, inv_holder, rows, cols, n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    const S* pn2 = normalized->data();
    if (ig->requires_grad || ig->tracked) {
      S* gg = ig->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        const S* nrow = pn2 + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c] * nrow[c];
      }
      for (int c = 0; c < cols; ++c) gg[c] += acc[static_cast<std::size_t>(c)];
    }
    if (ib->requires_grad || ib->tracked) {
      S* gb = ib->grad_slot();
      std::vector<S> acc(static_cast<std::size_t>(cols), S(0));
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += grow[c];
      }
      for (int c = 0; c < cols; ++c) gb[c] += acc[static_cast<std::size_t>(c)];
    }
    if (ix->requires_grad || ix->tracked) {
      S* gx = ix->grad_slot();
      const S* pg2 = ig->data.data();
      double gsum = 0.0, gnsum = 0.0;
      for (int r = 0; r < rows; ++r) {
        const S* grow = g + static_cast<std::int64_t>(r) * cols;
        const S* nrow = pn2 + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          const double gc = static_cast<double>(grow[c]) * pg2[c];
          gsum += gc;
          gnsum += gc * static_cast<double>(nrow[c]);
        }
      }
      const S gm = static_cast<S>(gsum / static_cast<double>(n));
      const S gnm = static_cast<S>(gnsum / static_cast<double>(n));
      const S inv2 = *inv_holder;
      parallel_for(rows, 2 * cols, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
          const S* grow = g + r * cols;
          const S* nrow = pn2 + r * cols;
          S* xrow = gx + r * cols;
          for (int c = 0; c < cols; ++c)
            xrow[c] += inv2 * (grow[c] * pg2[c] - gm - nrow[c] * gnm);
        }
      });
    }
  });
  return out;
}

// Row-wise softmax over the causal prefix: row i attends to columns 0..i.
template <class S>
Tensor<S> causal_row_softmax(const Tensor<S>& scores) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1))
    throw DimensionError("causal_row_softmax expects a square score matrix");
  const int n = scores.dim(0);
  Tensor<S> out(Shape{n, n});
  const S* ps = scores.data();
  S* po = out.data();
  for (int i = 0; i < n; ++i) {
    const S* srow = ps + static_cast<std::int64_t>(i) * n;
    S* orow = po + static_cast<std::int64_t>(i) * n;
    S max_v = srow[0];
    for (int j = 1; j <= i; ++j) max_v = std::max(max_v, srow[j]);
    double z = 0.0;
    for (int j = 0; j <= i; ++j) {
      const double e = std::exp(static_cast<double>(srow[j] - max_v));
      orow[j] = static_cast<S>(e);
      z += e;
    }
    const S inv = static_cast<S>(1.0 / z);
    for (int j = 0; j <= i; ++j) orow[j] *= inv;
  }
  detail::record_if(scores.live(), out, [is = scores.impl(), io = out.impl(), n] {
    const S* g = detail::incoming_grad<S>(io);
    if (!g) return;
    S* gs = is->grad_slot();
    const S* py = io->data.data();
    for (int i = 0; i < n; ++i) {
      const S* grow = g + static_cast<std::int64_t>(i) * n;
      const S* yrow = py + static_cast<std::int64_t>(i) * n;
      double gy = 0.0;
      for (int j = 0; j <= i; ++j) gy += static_cast<double>(grow[j]) * static_cast<double>(yrow[j]);
      S* srow = gs + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j <= i; ++j)
        srow[j] += yrow[j] * static_cast<S>(static_cast<double>(grow[j]) - gy);
    }
  });
  return out;
}

// Scaled dot-product attention with causal masking over one head.
// q, k, v: [S x d]. Softmax rows over the causal prefix sum to 1.
template <class S>
Tensor<S> attention_block(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("attention_block expects rank-2 tensors");
  const int s_len = q.dim(0), d_head = q.dim(1);
  if (s_len == 0 || d_head == 0) throw DimensionError("attention_block: empty sequence or head");
  if (k.dim(0) != s_len || v.dim(0) != s_len || k.dim(1) != d_head || v.dim(1) != d_head)
    throw DimensionError("attention_block: q/k/v shapes differ");
  Tensor<S> scores = matmul(q, transpose(k));
  scores = scale(scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_head))));
  Tensor<S> weights = causal_row_softmax(scores);
  return matmul(weights, v);
}

}  // namespace tse
