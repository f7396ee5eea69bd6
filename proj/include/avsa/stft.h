#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "avsa/audio.h"

namespace avsa {

enum class WindowKind { kHann, kSqrtHann, kRectangular };

std::string to_string(WindowKind kind);
WindowKind window_kind_from_string(const std::string& name);

struct StftConfig {
  int fft_size = 1024;
  int hop = 256;
  WindowKind window = WindowKind::kHann;
  int sample_rate = 11025;

  size_t bins() const { return static_cast<size_t>(fft_size) / 2 + 1; }
  // Periodic analysis window of length fft_size.
  std::vector<double> window_samples() const;
  // Sum over k of window[n + k*hop]^2 for n in [0, hop). Constant for a
  // constant-overlap-add pair.
  std::vector<double> overlap_sums() const;
  // Max relative deviation of overlap_sums() from its mean.
  double cola_deviation() const;
  // Throws ConfigError on a bad hop/size or a non-COLA window pair.
  void validate() const;
};

inline constexpr double kColaTolerance = 1e-10;

// Row-major [frames x bins] grid of reals, shared by masks and log spectra.
struct RealGrid {
  size_t frames = 0;
  size_t bins = 0;
  std::vector<double> values;

  RealGrid() = default;
  RealGrid(size_t t, size_t f, double fill = 0.0) : frames(t), bins(f), values(t * f, fill) {}
  double& at(size_t t, size_t f) { return values[t * bins + f]; }
  double at(size_t t, size_t f) const { return values[t * bins + f]; }
  size_t size() const { return values.size(); }
  bool same_shape(const RealGrid& o) const { return frames == o.frames && bins == o.bins; }
};

struct Spectrogram {
  size_t frames = 0;
  size_t bins = 0;
  std::vector<std::complex<double>> values;
  StftConfig config;
  // Length of the analysed clip; istft pads its output back to this.
  size_t num_samples = 0;

  std::complex<double>& at(size_t t, size_t f) { return values[t * bins + f]; }
  const std::complex<double>& at(size_t t, size_t f) const { return values[t * bins + f]; }
  bool same_shape(const Spectrogram& o) const { return frames == o.frames && bins == o.bins; }
};

// log(|z| + kLogEps) per cell.
struct LogMagSpectrogram : RealGrid {
  StftConfig config;
};

// Values in [0, 1]; a binary mask holds only 0 and 1.
struct Mask : RealGrid {
  using RealGrid::RealGrid;
  bool is_binary() const;
};

inline constexpr double kLogEps = 1e-7;

size_t frame_count(size_t num_samples, const StftConfig& cfg);

// Frame t is the windowed DFT of samples [t*hop, t*hop + fft_size).
Spectrogram stft(const AudioClip& clip, const StftConfig& cfg);
// Frames [first, first + count) only; num_samples still reports the clip length.
Spectrogram stft_frames(const AudioClip& clip, const StftConfig& cfg, size_t first, size_t count);
// Full fft_size-point spectrum of one frame, exposing conjugate symmetry.
std::vector<std::complex<double>> frame_spectrum_full(const AudioClip& clip,
                                                      const StftConfig& cfg, size_t frame);

// Weighted overlap-add with the analysis window, normalized by the constant
// overlap sum. Samples outside interior_range() are attenuated edge samples.
AudioClip istft(const Spectrogram& spec);

// Half-open sample range where every sample is covered by fft_size/hop frames.
std::pair<size_t, size_t> interior_range(size_t frames, const StftConfig& cfg);

LogMagSpectrogram log_magnitude(const Spectrogram& spec);

// 1 where |target| >= |other| for every other, else 0.
Mask ideal_binary_mask(const Spectrogram& target, const std::vector<Spectrogram>& others);
// Partition of every cell among the sources; ties go to the lowest index.
std::vector<Mask> ideal_binary_masks(const std::vector<Spectrogram>& sources);

Spectrogram masked(const Spectrogram& mixture, const Mask& mask);
// istft(mask * mixture), reusing the mixture phase.
AudioClip apply_mask(const Spectrogram& mixture, const Mask& mask);

}  // namespace avsa
