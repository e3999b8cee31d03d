#include "tse/objective.hpp"

#include <algorithm>
#include <cmath>

#include "tse/errors.hpp"

namespace tse {
namespace {

struct SiSdrParts {
  double value_db;
  bool clamped;
};

template <class V>
SiSdrParts si_sdr_impl(const std::vector<V>& estimate, const std::vector<V>& reference) {
  if (estimate.size() != reference.size() || estimate.empty())
    throw DimensionError("si_sdr: signals must have equal nonzero length");
  double dot_er = 0.0, dot_rr = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    dot_er += static_cast<double>(estimate[i]) * reference[i];
    dot_rr += static_cast<double>(reference[i]) * reference[i];
  }
  if (dot_rr == 0.0) throw ContractError("si_sdr: reference is all zero");
  const double alpha = dot_er / dot_rr;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double proj = alpha * reference[i];
    const double err = proj - estimate[i];
    num += proj * proj;
    den += err * err;
  }
  if (den == 0.0) return {kSiSdrClampDb, true};
  if (num == 0.0) return {-kSiSdrClampDb, true};
  const double raw = 10.0 * std::log10(num / den);
  if (raw > kSiSdrClampDb) return {kSiSdrClampDb, true};
  if (raw < -kSiSdrClampDb) return {-kSiSdrClampDb, true};
  return {raw, false};
}

}  // namespace

double si_sdr(const std::vector<float>& estimate, const std::vector<float>& reference) {
  return si_sdr_impl(estimate, reference).value_db;
}

double si_sdr(const std::vector<double>& estimate, const std::vector<double>& reference) {
  return si_sdr_impl(estimate, reference).value_db;
}

double si_sdr(const AudioBuffer& estimate, const AudioBuffer& reference) {
  return si_sdr(estimate.samples, reference.samples);
}

double si_sdr_improvement(const std::vector<float>& estimate,
                          const std::vector<float>& reference,
                          const std::vector<float>& mixture) {
  return si_sdr(estimate, reference) - si_sdr(mixture, reference);
}

MetricReport si_sdr_report(const std::vector<float>& estimate,
                           const std::vector<float>& reference,
                           const std::vector<float>& mixture) {
  const SiSdrParts est = si_sdr_impl(estimate, reference);
  const SiSdrParts mix = si_sdr_impl(mixture, reference);
  MetricReport report;
  report.si_sdr_db = est.value_db;
  report.si_sdr_improvement_db = est.value_db - mix.value_db;
  report.clamped = est.clamped || mix.clamped;
  return report;
}

}  // namespace tse
