#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tse {

// Mono time-domain signal. The unit of all waveform I/O.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 0;

  int length() const { return static_cast<int>(samples.size()); }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavFormat { kPcm16, kFloat32 };

// RIFF/WAVE, mono, little-endian. Multichannel input files are mixed down.
AudioBuffer read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioBuffer& audio,
               WavFormat format = WavFormat::kFloat32);

// Scales so the absolute peak is at most `peak`. Silent input is returned
// unchanged.
void peak_normalize(AudioBuffer& audio, float peak = 0.99f);

// Linear-interpolation resampler.
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

double rms(const std::vector<float>& samples);

}  // namespace tse
