#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "avsa/checkpoint.h"
#include "avsa/stft.h"
#include "avsa/tensor.h"

namespace avsa {

enum class ConditionKind { kVisual, kSemantic };

struct ConditionVector {
  std::vector<double> values;
  ConditionKind kind = ConditionKind::kVisual;
};

// Per-cell k_r-dimensional audio features, [frames x bins x channels].
struct AudioFeatureGrid {
  size_t frames = 0;
  size_t bins = 0;
  size_t channels = 0;
  std::vector<double> values;

  const double* cell(size_t t, size_t f) const { return values.data() + (t * bins + f) * channels; }
};

// Weights of the audio analysis network, the label alignment layer and the
// synthesizer. Both separator branches read the same instance.
//
// Analysis network: per-bin affine lift of the (normalized) log magnitude to
// hidden = channels/2 features, a 3x3 time-frequency convolution with ReLU,
// then a per-cell affine map to `channels`.
struct SeparatorParams {
  size_t bins = 0;
  size_t channels = 0;
  size_t hidden = 0;
  size_t classes = 0;

  Tensor lift_w;   // [bins, hidden]
  Tensor lift_b;   // [bins, hidden]
  Tensor conv_w;   // [3, 3, hidden, hidden]: (dt, df, in, out)
  Tensor conv_b;   // [hidden]
  Tensor out_w;    // [hidden, channels]
  Tensor out_b;    // [channels]
  Tensor align_w;  // [channels, classes]
  Tensor align_b;  // [channels]
  Tensor synth_b;  // [1]

  static SeparatorParams zeros(size_t bins, size_t channels, size_t classes);
  static SeparatorParams init(size_t bins, size_t channels, size_t classes, uint64_t seed);
  static SeparatorParams from_tensors(const TensorMap& map);

  std::vector<NamedTensor> blocks();
  std::vector<ConstNamedTensor> blocks() const;
  void validate() const;
};

// Fixed affine normalization applied to log magnitudes before the lift.
inline constexpr double kLogMagShift = 5.0;
inline constexpr double kLogMagScale = 0.2;
// Standard deviation of the initial label alignment weights.
inline constexpr double kAlignInitStd = 3.0;

// Intermediate activations kept for the backward pass.
struct AnalysisCache {
  size_t frames = 0;
  size_t bins = 0;
  size_t hidden = 0;
  std::vector<double> input;   // [frames x bins]
  std::vector<double> lifted;  // [frames x bins x hidden]
  std::vector<double> pre;     // conv output before ReLU
  std::vector<double> act;     // after ReLU
};

AnalysisCache analysis_forward(const RealGrid& logmag, const SeparatorParams& params);
// Accumulates parameter gradients given dL/d(act).
void analysis_backward(const AnalysisCache& cache, std::span<const double> grad_act,
                       const SeparatorParams& params, SeparatorParams& grad);

AudioFeatureGrid analyze_audio(const LogMagSpectrogram& logspec, const SeparatorParams& params);

ConditionVector align_label(size_t class_id, const SeparatorParams& params);
// grad_cond is dL/d(f_s); accumulates into align_w / align_b.
void align_label_backward(size_t class_id, std::span<const double> cond,
                          std::span<const double> grad_cond, SeparatorParams& grad);

ConditionVector visual_condition(std::span<const double> feature, size_t channels);
// Mean of per-frame features.
std::vector<double> pool_frames(const std::vector<std::vector<double>>& frames);

Mask synthesize_mask(const AudioFeatureGrid& features, const ConditionVector& condition,
                     const SeparatorParams& params);

// Synthesizer logits straight from the cached analysis activations:
// <c, out_w^T act + out_b> + synth_b, without materializing the feature grid.
RealGrid condition_logits(const AnalysisCache& cache, std::span<const double> cond,
                          const SeparatorParams& params);
// Accumulates into grad (out_w, out_b, synth_b), grad_act and, when non-empty,
// grad_cond.
void condition_logits_backward(const AnalysisCache& cache, std::span<const double> cond,
                               const RealGrid& grad_logits, const SeparatorParams& params,
                               SeparatorParams& grad, std::span<double> grad_act,
                               std::span<double> grad_cond);

inline constexpr double kMaskThreshold = 0.5;

struct Separation {
  Mask soft_mask;
  Mask applied_mask;  // soft mask, or its 0.5-thresholded binary version
  AudioClip audio;
};

// stft -> log_magnitude -> analyze_audio -> synthesize_mask -> apply_mask.
Separation separate(const AudioClip& mixture, const ConditionVector& condition,
                    const SeparatorParams& params, const StftConfig& cfg,
                    std::optional<double> threshold = kMaskThreshold);

// Same, reusing an already computed mixture spectrogram and features.
Separation separate_with(const Spectrogram& mixture_spec, const AudioFeatureGrid& features,
                         const ConditionVector& condition, const SeparatorParams& params,
                         std::optional<double> threshold = kMaskThreshold);

}  // namespace avsa
