#include "avsa/stft.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "avsa/error.h"

namespace avsa {

std::string to_string(WindowKind kind) {
  switch (kind) {
    case WindowKind::kHann: return "hann";
    case WindowKind::kSqrtHann: return "sqrt-hann";
    case WindowKind::kRectangular: return "rect";
  }
  return "unknown";
}

WindowKind window_kind_from_string(const std::string& name) {
  if (name == "hann") return WindowKind::kHann;
  if (name == "sqrt-hann") return WindowKind::kSqrtHann;
  if (name == "rect" || name == "rectangular") return WindowKind::kRectangular;
  throw ConfigError("unknown window kind: " + name);
}

std::vector<double> StftConfig::window_samples() const {
  std::vector<double> w(static_cast<size_t>(fft_size));
  for (int n = 0; n < fft_size; ++n) {
    double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / fft_size);
    switch (window) {
      case WindowKind::kHann: w[n] = hann; break;
      case WindowKind::kSqrtHann: w[n] = std::sqrt(hann); break;
      case WindowKind::kRectangular: w[n] = 1.0; break;
    }
  }
  return w;
}

std::vector<double> StftConfig::overlap_sums() const {
  const std::vector<double> w = window_samples();
  std::vector<double> sums(static_cast<size_t>(hop), 0.0);
  for (int n = 0; n < hop; ++n)
    for (int k = n; k < fft_size; k += hop) sums[n] += w[k] * w[k];
  return sums;
}

double StftConfig::cola_deviation() const {
  const std::vector<double> sums = overlap_sums();
  double mean = 0.0;
  for (double s : sums) mean += s;
  mean /= static_cast<double>(sums.size());
  if (mean <= 0.0) return std::numeric_limits<double>::infinity();
  double dev = 0.0;
  for (double s : sums) dev = std::max(dev, std::abs(s - mean) / mean);
  return dev;
}

void StftConfig::validate() const {
  if (fft_size < 2 || fft_size % 2 != 0)
    throw ConfigError("fft_size must be even and >= 2, got " + std::to_string(fft_size));
  if (hop <= 0 || hop > fft_size)
    throw ConfigError("hop must satisfy 0 < hop <= fft_size, got " + std::to_string(hop));
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  const double dev = cola_deviation();
  if (!(dev <= kColaTolerance))
    throw ConfigError("window " + to_string(window) + " with fft_size " +
                      std::to_string(fft_size) + " and hop " + std::to_string(hop) +
                      " violates constant overlap-add (deviation " + std::to_string(dev) + ")");
}

bool Mask::is_binary() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

size_t frame_count(size_t num_samples, const StftConfig& cfg) {
  const size_t n = static_cast<size_t>(cfg.fft_size);
  if (num_samples < n) return 0;
  return 1 + (num_samples - n) / static_cast<size_t>(cfg.hop);
}

namespace {

void check_finite(const AudioClip& clip) {
  for (size_t i = 0; i < clip.samples.size(); ++i)
    if (!std::isfinite(clip.samples[i]))
      throw DataError("stft: non-finite sample at index " + std::to_string(i));
}

}  // namespace

Spectrogram stft_frames(const AudioClip& clip, const StftConfig& cfg, size_t first, size_t count) {
  cfg.validate();
  check_finite(clip);
  const size_t total = frame_count(clip.size(), cfg);
  if (total == 0)
    throw LengthError("clip of " + std::to_string(clip.size()) +
                      " samples is shorter than one frame (" + std::to_string(cfg.fft_size) + ")");
  if (first + count > total)
    throw LengthError("frame range [" + std::to_string(first) + ", " +
                      std::to_string(first + count) + ") exceeds " + std::to_string(total));

  const size_t n = static_cast<size_t>(cfg.fft_size);
  const std::vector<double> w = cfg.window_samples();
  Spectrogram spec;
  spec.frames = count;
  spec.bins = cfg.bins();
  spec.config = cfg;
  spec.num_samples = clip.size();
  spec.values.resize(spec.frames * spec.bins);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> out;
  for (size_t t = 0; t < count; ++t) {
    const size_t start = (first + t) * static_cast<size_t>(cfg.hop);
    for (size_t i = 0; i < n; ++i) frame[i] = clip.samples[start + i] * w[i];
    fft.fwd(out, frame);
    std::copy(out.begin(), out.begin() + static_cast<long>(spec.bins),
              spec.values.begin() + static_cast<long>(t * spec.bins));
  }
  return spec;
}

Spectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  return stft_frames(clip, cfg, 0, frame_count(clip.size(), cfg));
}

std::vector<std::complex<double>> frame_spectrum_full(const AudioClip& clip, const StftConfig& cfg,
                                                      size_t frame) {
  cfg.validate();
  check_finite(clip);
  if (frame >= frame_count(clip.size(), cfg)) throw LengthError("frame index out of range");
  const size_t n = static_cast<size_t>(cfg.fft_size);
  const std::vector<double> w = cfg.window_samples();
  std::vector<double> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = clip.samples[frame * cfg.hop + i] * w[i];
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> out;
  fft.fwd(out, buf);
  return out;
}

std::pair<size_t, size_t> interior_range(size_t frames, const StftConfig& cfg) {
  const size_t hop = static_cast<size_t>(cfg.hop);
  const size_t begin = static_cast<size_t>(cfg.fft_size) - hop;
  const size_t end = frames * hop;
  if (end <= begin) return {0, 0};
  return {begin, end};
}

AudioClip istft(const Spectrogram& spec) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  if (spec.bins != cfg.bins()) throw ShapeError("istft: bin count does not match config");
  for (size_t i = 0; i < spec.values.size(); ++i)
    if (!std::isfinite(spec.values[i].real()) || !std::isfinite(spec.values[i].imag()))
      throw DataError("istft: non-finite spectrogram entry at " + std::to_string(i));

  const size_t n = static_cast<size_t>(cfg.fft_size);
  const size_t hop = static_cast<size_t>(cfg.hop);
  const std::vector<double> w = cfg.window_samples();
  const std::vector<double> sums = cfg.overlap_sums();
  double norm = 0.0;
  for (double s : sums) norm += s;
  norm /= static_cast<double>(sums.size());

  const size_t span = spec.frames == 0 ? 0 : (spec.frames - 1) * hop + n;
  AudioClip out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(std::max(span, spec.num_samples), 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(spec.bins);
  std::vector<double> frame;
  for (size_t t = 0; t < spec.frames; ++t) {
    std::copy(spec.values.begin() + static_cast<long>(t * spec.bins),
              spec.values.begin() + static_cast<long>((t + 1) * spec.bins), half.begin());
    fft.inv(frame, half, static_cast<Eigen::Index>(n));
    const size_t start = t * hop;
    for (size_t i = 0; i < n; ++i) out.samples[start + i] += frame[i] * w[i] / norm;
  }
  if (spec.num_samples > 0) out.samples.resize(spec.num_samples);
  return out;
}

LogMagSpectrogram log_magnitude(const Spectrogram& spec) {
  LogMagSpectrogram out;
  out.frames = spec.frames;
  out.bins = spec.bins;
  out.config = spec.config;
  out.values.resize(spec.values.size());
  for (size_t i = 0; i < spec.values.size(); ++i) {
    const double mag = std::abs(spec.values[i]);
    if (!std::isfinite(mag)) throw DataError("log_magnitude: non-finite entry at " + std::to_string(i));
    out.values[i] = std::log(mag + kLogEps);
  }
  return out;
}

Mask ideal_binary_mask(const Spectrogram& target, const std::vector<Spectrogram>& others) {
  for (const Spectrogram& o : others)
    if (!o.same_shape(target)) throw ShapeError("ideal_binary_mask: spectrogram shapes differ");
  Mask mask(target.frames, target.bins, 1.0);
  for (size_t i = 0; i < target.values.size(); ++i) {
    const double mag = std::abs(target.values[i]);
    for (const Spectrogram& o : others) {
      if (std::abs(o.values[i]) > mag) {
        mask.values[i] = 0.0;
        break;
      }
    }
  }
  return mask;
}

std::vector<Mask> ideal_binary_masks(const std::vector<Spectrogram>& sources) {
  if (sources.empty()) return {};
  for (const Spectrogram& s : sources)
    if (!s.same_shape(sources.front())) throw ShapeError("ideal_binary_masks: spectrogram shapes differ");
  std::vector<Mask> masks(sources.size(), Mask(sources.front().frames, sources.front().bins, 0.0));
  const size_t cells = sources.front().values.size();
  for (size_t i = 0; i < cells; ++i) {
    size_t best = 0;
    double best_mag = std::abs(sources[0].values[i]);
    for (size_t s = 1; s < sources.size(); ++s) {
      const double mag = std::abs(sources[s].values[i]);
      if (mag > best_mag) {
        best = s;
        best_mag = mag;
      }
    }
    masks[best].values[i] = 1.0;
  }
  return masks;
}

Spectrogram masked(const Spectrogram& mixture, const Mask& mask) {
  if (mixture.frames != mask.frames || mixture.bins != mask.bins)
    throw ShapeError("mask is " + std::to_string(mask.frames) + "x" + std::to_string(mask.bins) +
                     ", spectrogram is " + std::to_string(mixture.frames) + "x" +
                     std::to_string(mixture.bins));
  Spectrogram out = mixture;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= mask.values[i];
  return out;
}

AudioClip apply_mask(const Spectrogram& mixture, const Mask& mask) {
  return istft(masked(mixture, mask));
}

}  // namespace avsa
