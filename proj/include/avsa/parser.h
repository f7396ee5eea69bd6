#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "avsa/checkpoint.h"
#include "avsa/stft.h"
#include "avsa/tensor.h"

namespace avsa {

// Audio encoder: a conv whose kernel spans the whole frequency axis and one
// frame, ReLU, global mean pooling over the resulting time grid, then an
// affine projection.
struct AudioEncoderParams {
  Tensor frame_w;  // [channels, bins]: (out, in)
  Tensor frame_b;  // [channels]
  Tensor proj_w;  // [channels, channels]: (out, in)
  Tensor proj_b;  // [channels]
};

struct ParserParams {
  size_t bins = 0;
  size_t channels = 0;
  size_t classes = 0;

  AudioEncoderParams visible_audio;  // fused with visual features
  AudioEncoderParams audible_audio;  // separate weights, audio only
  Tensor visual_w;                   // [channels, channels]
  Tensor visual_b;                   // [channels]
  Tensor visible_w;                  // [classes, channels]
  Tensor visible_b;                  // [classes]
  Tensor audible_w;                  // [classes, channels]
  Tensor audible_b;                  // [classes]

  static ParserParams zeros(size_t bins, size_t channels, size_t classes);
  static ParserParams init(size_t bins, size_t channels, size_t classes, uint64_t seed);
  static ParserParams from_tensors(const TensorMap& map);

  std::vector<NamedTensor> blocks();
  std::vector<ConstNamedTensor> blocks() const;
};

struct EncoderCache {
  size_t frames = 0;
  size_t bins = 0;
  std::vector<double> input;   // normalized log magnitude
  std::vector<double> pre;     // [frames x channels] before ReLU
  std::vector<double> pooled;  // [channels]
  std::vector<double> output;  // [channels]
};

EncoderCache encoder_forward(const RealGrid& logmag, const AudioEncoderParams& enc, size_t channels);
void encoder_backward(const EncoderCache& cache, std::span<const double> grad_out,
                      const AudioEncoderParams& enc, size_t channels, AudioEncoderParams& grad);

std::vector<double> encode_audio(const LogMagSpectrogram& logspec, const AudioEncoderParams& enc,
                                 size_t channels);

struct SceneLabels {
  std::vector<double> visible_scores;
  std::vector<double> audible_scores;
  std::vector<size_t> visible_set;
  std::vector<size_t> audible_set;
  std::vector<size_t> invisible_set;  // audible \ visible
  double threshold = 0.5;
};

inline constexpr double kDefaultSceneThreshold = 0.5;

// Mean of the projected visual features; zero vector when there are none.
std::vector<double> fuse_visual(const std::vector<std::vector<double>>& visual_feats,
                                const ParserParams& params);
// sigmoid(W_vis (phi_v + phi_a) + b_vis).
std::vector<double> visible_scores(std::span<const double> phi_v, std::span<const double> phi_a,
                                   const ParserParams& params);
std::vector<double> audible_scores(std::span<const double> phi_a_prime, const ParserParams& params);

SceneLabels labels_from_scores(std::vector<double> visible, std::vector<double> audible, double tau);

SceneLabels parse_scene_logmag(const std::vector<std::vector<double>>& visual_feats,
                               const RealGrid& logmag, const ParserParams& params, double tau);
SceneLabels parse_scene(const std::vector<std::vector<double>>& visual_feats, const AudioClip& mixture,
                        const ParserParams& params, double tau, const StftConfig& cfg);

}  // namespace avsa
