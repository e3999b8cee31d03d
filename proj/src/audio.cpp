#include "tse/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tse/errors.hpp"

namespace tse {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 44 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  int channels = 0, sample_rate = 0, bits = 0, audio_format = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t off = 12;
  while (off + 8 <= n) {
    const std::uint32_t chunk_len = get_u32(p + off + 4);
    if (std::memcmp(p + off, "fmt ", 4) == 0 && off + 8 + 16 <= n) {
      audio_format = get_u16(p + off + 8);
      channels = get_u16(p + off + 10);
      sample_rate = static_cast<int>(get_u32(p + off + 12));
      bits = get_u16(p + off + 22);
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data_off = off + 8;
      data_len = std::min<std::size_t>(chunk_len, n - data_off);
    }
    off += 8 + chunk_len + (chunk_len & 1);
  }
  if (channels <= 0 || sample_rate <= 0 || data_off == 0)
    throw IoError("malformed wav file: " + path);

  AudioBuffer audio;
  audio.sample_rate = sample_rate;
  const unsigned char* d = p + data_off;
  if (audio_format == 1 && bits == 16) {
    const std::size_t frames = data_len / (2 * channels);
    audio.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) {
        const std::int16_t s =
            static_cast<std::int16_t>(get_u16(d + (i * channels + c) * 2));
        acc += s / 32768.0;
      }
      audio.samples[i] = static_cast<float>(acc / channels);
    }
  } else if (audio_format == 3 && bits == 32) {
    const std::size_t frames = data_len / (4 * channels);
    audio.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) {
        const std::uint32_t u = get_u32(d + (i * channels + c) * 4);
        float f;
        std::memcpy(&f, &u, 4);
        acc += f;
      }
      audio.samples[i] = static_cast<float>(acc / channels);
    }
  } else {
    throw IoError("unsupported wav encoding (need PCM16 or float32): " + path);
  }
  return audio;
}

void write_wav(const std::string& path, const AudioBuffer& audio, WavFormat format) {
  if (audio.sample_rate <= 0) throw ContractError("write_wav: sample rate not set");
  const std::uint32_t frames = static_cast<std::uint32_t>(audio.samples.size());
  const std::uint16_t bits = format == WavFormat::kPcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(bits / 8);
  const std::uint32_t data_len = frames * block;

  std::string out;
  out.reserve(44 + data_len);
  out.append("RIFF");
  put_u32(out, 36 + data_len);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, format == WavFormat::kPcm16 ? 1 : 3);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  out.append("data");
  put_u32(out, data_len);
  if (format == WavFormat::kPcm16) {
    for (float v : audio.samples) {
      const float clamped = std::clamp(v, -1.0f, 1.0f);
      const auto s = static_cast<std::int16_t>(std::lrint(clamped * 32767.0f));
      put_u16(out, static_cast<std::uint16_t>(s));
    }
  } else {
    for (float v : audio.samples) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      put_u32(out, u);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write wav file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

void peak_normalize(AudioBuffer& audio, float peak) {
  float max_abs = 0.0f;
  for (float v : audio.samples) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs <= 0.0f || max_abs <= peak) return;
  const float g = peak / max_abs;
  for (auto& v : audio.samples) v *= g;
}

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
  if (target_rate <= 0) throw ContractError("resample: bad target rate");
  if (audio.sample_rate == target_rate || audio.samples.empty()) {
    AudioBuffer out = audio;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(audio.sample_rate) / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::floor((audio.samples.size() - 1) / ratio)) + 1;
  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double src = i * ratio;
    const auto lo = static_cast<std::size_t>(src);
    const double frac = src - lo;
    const float a = audio.samples[lo];
    const float b = lo + 1 < audio.samples.size() ? audio.samples[lo + 1] : a;
    out.samples[i] = static_cast<float>(a + frac * (b - a));
  }
  return out;
}

double rms(const std::vector<float>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (float v : samples) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / samples.size());
}

}  // namespace tse
