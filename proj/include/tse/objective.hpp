#pragma once

// Scale-invariant signal-to-distortion ratio: the training loss and the
// evaluation metric. No mean subtraction is applied before the projection;
// some SI-SDR definitions differ here.

#include <vector>

#include "tse/audio.hpp"
#include "tse/tensor.hpp"

namespace tse {

inline constexpr double kSiSdrClampDb = 60.0;

struct MetricReport {
  double si_sdr_db = 0.0;
  double si_sdr_improvement_db = 0.0;
  bool clamped = false;
};

// 10 log10(||a y||^2 / ||a y - e||^2) with a = <e,y>/||y||^2, clamped to
// +/-60 dB. Throws on length mismatch or an all-zero reference.
double si_sdr(const std::vector<float>& estimate, const std::vector<float>& reference);
double si_sdr(const std::vector<double>& estimate, const std::vector<double>& reference);
double si_sdr(const AudioBuffer& estimate, const AudioBuffer& reference);

// si_sdr(estimate, reference) - si_sdr(mixture, reference).
double si_sdr_improvement(const std::vector<float>& estimate,
                          const std::vector<float>& reference,
                          const std::vector<float>& mixture);

MetricReport si_sdr_report(const std::vector<float>& estimate,
                           const std::vector<float>& reference,
                           const std::vector<float>& mixture);

// Differentiable negative SI-SDR. Unclamped except for a 1e-8 floor on the
// error energy inside the log argument.
template <class S>
Tensor<S> si_sdr_loss(const Tensor<S>& estimate, const Tensor<S>& reference) {
  if (estimate.rank() != 1 || reference.rank() != 1 ||
      estimate.dim(0) != reference.dim(0))
    throw DimensionError("si_sdr_loss: length mismatch");
  Tensor<S> ref_energy = dot(reference, reference);
  if (ref_energy.value() == S(0)) throw ContractError("si_sdr_loss: all-zero reference");
  Tensor<S> alpha = div(dot(estimate, reference), ref_energy);
  Tensor<S> projection = scale_by(reference, alpha);
  Tensor<S> error = sub(projection, estimate);
  Tensor<S> num = dot(projection, projection);
  Tensor<S> den = floor_at(dot(error, error), S(1e-8));
  Tensor<S> ratio = div(num, den);
  return scale(log_op(ratio), static_cast<S>(-10.0 / 2.302585092994045684));
}

}  // namespace tse
