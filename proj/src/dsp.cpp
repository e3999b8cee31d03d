#include "tse/dsp.hpp"

#include <algorithm>
#include <cmath>

#include "tse/errors.hpp"

namespace tse {

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ContractError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * 3.141592653589793238462643383280 / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t size = 1;
  while (size < out_len) size <<= 1;
  std::vector<std::complex<double>> fa(size), fb(size);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  fft(fa, false);
  fft(fb, false);
  for (std::size_t i = 0; i < size; ++i) fa[i] *= fb[i];
  fft(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

double schroeder_rt60(const std::vector<double>& rir, int sample_rate) {
  if (rir.size() < 8 || sample_rate <= 0)
    throw ContractError("schroeder_rt60: degenerate input");
  std::vector<double> edc(rir.size());
  double acc = 0.0;
  for (std::size_t i = rir.size(); i-- > 0;) {
    acc += rir[i] * rir[i];
    edc[i] = acc;
  }
  if (edc[0] <= 0.0) throw ContractError("schroeder_rt60: silent impulse response");
  const double total = edc[0];

  // collect (time, level) pairs inside the -5 .. -25 dB window; the last
  // 15% of a finite response is excluded because truncation bends the tail
  const std::size_t fit_end = edc.size() - edc.size() / 7;
  std::vector<double> ts, dbs;
  for (std::size_t i = 0; i < fit_end; ++i) {
    if (edc[i] <= 0.0) break;
    const double db = 10.0 * std::log10(edc[i] / total);
    if (db > -5.0) continue;
    if (db < -25.0) break;
    ts.push_back(static_cast<double>(i) / sample_rate);
    dbs.push_back(db);
  }
  if (ts.size() < 2) throw ContractError("schroeder_rt60: decay range too short");

  double mt = 0.0, md = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i];
    md += dbs[i];
  }
  mt /= static_cast<double>(ts.size());
  md /= static_cast<double>(ts.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    num += (ts[i] - mt) * (dbs[i] - md);
    den += (ts[i] - mt) * (ts[i] - mt);
  }
  if (den <= 0.0) throw ContractError("schroeder_rt60: decay range too short");
  const double slope = num / den;  // dB per second, negative
  if (slope >= 0.0) throw ContractError("schroeder_rt60: no decay detected");
  return -60.0 / slope;
}

double spectral_centroid(const std::vector<float>& samples, int sample_rate) {
  if (samples.empty() || sample_rate <= 0)
    throw ContractError("spectral_centroid: degenerate input");
  std::size_t size = 1;
  while (size < samples.size()) size <<= 1;
  std::vector<std::complex<double>> buf(size);
  for (std::size_t i = 0; i < samples.size(); ++i) buf[i] = samples[i];
  fft(buf, false);
  double weighted = 0.0, total = 0.0;
  for (std::size_t k = 0; k <= size / 2; ++k) {
    const double mag = std::abs(buf[k]);
    const double freq = static_cast<double>(k) * sample_rate / static_cast<double>(size);
    weighted += mag * freq;
    total += mag;
  }
  return total > 0.0 ? weighted / total : 0.0;
}

}  // namespace tse
