#pragma once

#include <complex>
#include <vector>

namespace tse {

// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// Full linear convolution, length a.size() + b.size() - 1.
std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b);

// Reverberation time from a decay curve: backward-integrates the squared
// impulse response and extrapolates the -5 dB .. -25 dB slope to -60 dB.
double schroeder_rt60(const std::vector<double>& rir, int sample_rate);

// First moment of the magnitude spectrum in Hz.
double spectral_centroid(const std::vector<float>& samples, int sample_rate);

}  // namespace tse
