#pragma once

// Central finite-difference oracle for the reverse-mode engine. Runs the
// function under test once with a tape to collect analytic gradients, then
// perturbs every input coordinate by +/- eps without a tape and compares.

#include <functional>
#include <vector>

#include "tse/errors.hpp"
#include "tse/rng.hpp"
#include "tse/tensor.hpp"

namespace tse {

using GradCheckFn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;

namespace detail {

// Contracts an arbitrary output with a fixed random projection so the checked
// quantity is always scalar, regardless of what the op returns.
inline Tensor<double> projected_loss(const Tensor<double>& out, std::uint64_t seed) {
  if (out.size() == 1) return sum(out);
  Rng rng(seed);
  Tensor<double> w(out.shape());
  for (auto& v : w.values()) v = rng.uniform(0.5, 1.5);
  return dot(out, w);
}

}  // namespace detail

// Maximum over all input coordinates of
//   |analytic - central_difference| / max(1, |central_difference|).
inline double grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                         double eps = 1e-5) {
  if (!(eps > 0.0) || eps > 1e-3) throw ContractError("grad_check: eps must be in (0, 1e-3]");
  constexpr std::uint64_t kProjectionSeed = 0x9d2c5680u;

  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = detail::projected_loss(fn(inputs), kProjectionSeed);
    tape.backward(loss);
    for (auto& t : inputs)
      analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));
    for (auto& t : inputs) t.drop_grad();
  }
  for (auto& t : inputs) t.set_requires_grad(false);

  auto eval = [&]() {
    return detail::projected_loss(fn(inputs), kProjectionSeed).value();
  };

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    auto& vals = inputs[which].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = eval();
      vals[i] = saved - eps;
      const double down = eval();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[which][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace tse
