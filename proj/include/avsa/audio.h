#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace avsa {

// Mono sample buffer. Samples are nominally in [-1, 1] but mixtures are
// allowed to exceed that range.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  AudioClip() = default;
  AudioClip(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Throws DataError on empty clips, non-positive rates or non-finite samples.
void validate_clip(const AudioClip& clip);

double energy(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

// Elementwise sum of equal-length, equal-rate clips. No normalization.
AudioClip mix(const std::vector<AudioClip>& clips);

enum class WavEncoding { kPcm16, kFloat32 };

// Mono little-endian WAV, 16-bit PCM or 32-bit IEEE float.
void write_wav(const std::string& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::kFloat32);
// expected_rate = 0 accepts any rate; otherwise a mismatch is a DataError.
AudioClip read_wav(const std::string& path, int expected_rate = 0);

}  // namespace avsa
